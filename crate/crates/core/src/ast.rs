//! Abstract syntax shared by the policy language, the Datalog evaluator and
//! the access-control layer.
//!
//! Terms are Datalog terms with one extension: context expressions. A context
//! is either a plain symbol (`nominal`), a parameterized context
//! (`max_multi_delegation(1)`, `valid_deleg(john)`) or a conjunction
//! (`c1 & c2`). Once ground, a context is an atomic constant for the
//! evaluator: it is compared structurally and never unfolded by rules.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, NaiveDateTime, Utc};

pub type Symbol = Arc<str>;

/// Instant used by temporal contexts. Always UTC.
pub type Timestamp = DateTime<Utc>;

/// The predicate whose literals must be fully instantiated when reached.
pub const CONTEXT_PREDICATE: &str = "hold";

/// The context that always holds.
pub const NOMINAL: &str = "nominal";

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn sym(s: &str) -> Symbol {
    Arc::from(s)
}

/// Parses an ISO-8601 UTC timestamp of the exact form `YYYY-MM-DDTHH:MM:SSZ`.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .ok()
        .map(|naive| naive.and_utc())
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// A ground value stored in the fact base.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Value {
    Sym(Symbol),
    Int(i64),
    Ctx(Arc<Context>),
}

/// A ground compound context.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Context {
    Param(Symbol, Vec<Value>),
    /// Flattened, duplicate-free conjunction of at least two conjuncts.
    And(Vec<Value>),
}

impl Value {
    pub fn sym(s: &str) -> Value {
        Value::Sym(sym(s))
    }

    pub fn param(name: &str, args: Vec<Value>) -> Value {
        Value::Ctx(Arc::new(Context::Param(sym(name), args)))
    }

    /// Builds a normalized conjunction: nested conjunctions are flattened,
    /// `nominal` and repeated conjuncts dropped, first-occurrence order kept.
    pub fn conj(parts: impl IntoIterator<Item = Value>) -> Value {
        let mut flat: Vec<Value> = Vec::new();
        let add = |v: Value, flat: &mut Vec<Value>| {
            if !v.is_nominal() && !flat.contains(&v) {
                flat.push(v);
            }
        };
        for part in parts {
            match part {
                Value::Ctx(ctx) if matches!(*ctx, Context::And(_)) => {
                    if let Context::And(inner) = &*ctx {
                        for v in inner {
                            add(v.clone(), &mut flat);
                        }
                    }
                }
                other => add(other, &mut flat),
            }
        }
        match flat.len() {
            0 => Value::sym(NOMINAL),
            1 => flat.pop().unwrap(),
            _ => Value::Ctx(Arc::new(Context::And(flat))),
        }
    }

    pub fn as_sym(&self) -> Option<&Symbol> {
        match self {
            Value::Sym(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn is_nominal(&self) -> bool {
        matches!(self, Value::Sym(s) if &**s == NOMINAL)
    }

    /// The conjuncts of a context value, `nominal` excluded.
    pub fn conjuncts(&self) -> Vec<&Value> {
        match self {
            Value::Ctx(ctx) => match &**ctx {
                Context::And(parts) => parts.iter().filter(|v| !v.is_nominal()).collect(),
                Context::Param(..) => vec![self],
            },
            v if v.is_nominal() => Vec::new(),
            v => vec![v],
        }
    }

    /// Conjunct set used by the context refinement order.
    pub fn conjunct_set(&self) -> BTreeSet<&Value> {
        self.conjuncts().into_iter().collect()
    }

    /// Name of a context value: the symbol itself or the parameterized head.
    pub fn context_name(&self) -> Option<&Symbol> {
        match self {
            Value::Sym(s) => Some(s),
            Value::Ctx(ctx) => match &**ctx {
                Context::Param(name, _) => Some(name),
                Context::And(_) => None,
            },
            Value::Int(_) => None,
        }
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Int(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::sym(s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Sym(s) => f.write_str(s),
            Value::Int(n) => write!(f, "{n}"),
            Value::Ctx(ctx) => match &**ctx {
                Context::Param(name, args) => {
                    write!(f, "{name}(")?;
                    write_joined(f, args, ", ")?;
                    f.write_str(")")
                }
                Context::And(parts) => write_joined(f, parts, " & "),
            },
        }
    }
}

fn write_joined<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T], sep: &str) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

/// A possibly non-ground term as written in the source.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Term {
    Var(Symbol),
    Sym(Symbol),
    Int(i64),
    Param(Symbol, Vec<Term>),
    And(Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(sym(name))
    }

    pub fn sym(name: &str) -> Term {
        Term::Sym(sym(name))
    }

    /// Conjunction constructor; nested conjunctions are flattened.
    pub fn and(parts: impl IntoIterator<Item = Term>) -> Term {
        let mut flat = Vec::new();
        for part in parts {
            match part {
                Term::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Term::And(flat)
        }
    }

    pub fn is_anonymous(&self) -> bool {
        matches!(self, Term::Var(v) if &**v == "_")
    }

    pub fn from_value(v: &Value) -> Term {
        match v {
            Value::Sym(s) => Term::Sym(s.clone()),
            Value::Int(n) => Term::Int(*n),
            Value::Ctx(ctx) => match &**ctx {
                Context::Param(name, args) => {
                    Term::Param(name.clone(), args.iter().map(Term::from_value).collect())
                }
                Context::And(parts) => Term::And(parts.iter().map(Term::from_value).collect()),
            },
        }
    }

    /// The ground value of a variable-free term.
    pub fn to_value(&self) -> Option<Value> {
        match self {
            Term::Var(_) => None,
            Term::Sym(s) => Some(Value::Sym(s.clone())),
            Term::Int(n) => Some(Value::Int(*n)),
            Term::Param(name, args) => {
                let args = args.iter().map(Term::to_value).collect::<Option<Vec<_>>>()?;
                Some(Value::Ctx(Arc::new(Context::Param(name.clone(), args))))
            }
            Term::And(parts) => {
                let parts = parts.iter().map(Term::to_value).collect::<Option<Vec<_>>>()?;
                Some(Value::conj(parts))
            }
        }
    }

    /// Collects named variables (the anonymous `_` excluded).
    pub fn collect_vars(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Term::Var(v) if &**v != "_" => {
                out.insert(v.clone());
            }
            Term::Param(_, args) | Term::And(args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
            _ => {}
        }
    }

    pub fn has_anonymous(&self) -> bool {
        match self {
            Term::Var(v) => &**v == "_",
            Term::Param(_, args) | Term::And(args) => args.iter().any(Term::has_anonymous),
            _ => false,
        }
    }

    /// True for context constructors that contain variables.
    pub fn is_constructor_template(&self) -> bool {
        match self {
            Term::Param(_, args) | Term::And(args) => {
                let mut vars = BTreeSet::new();
                for a in args {
                    a.collect_vars(&mut vars);
                }
                !vars.is_empty() || args.iter().any(Term::has_anonymous)
            }
            _ => false,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Sym(v) => f.write_str(v),
            Term::Int(n) => write!(f, "{n}"),
            Term::Param(name, args) => {
                write!(f, "{name}(")?;
                write_joined(f, args, ", ")?;
                f.write_str(")")
            }
            Term::And(parts) => write_joined(f, parts, " & "),
        }
    }
}

/// Predicate identity: name and arity.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct PredKey {
    pub name: Symbol,
    pub arity: usize,
}

impl PredKey {
    pub fn new(name: &str, arity: usize) -> Self {
        PredKey { name: sym(name), arity }
    }
}

impl fmt::Display for PredKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Atom {
    pub pred: Symbol,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: &str, args: Vec<Term>) -> Self {
        Atom { pred: sym(pred), args }
    }

    pub fn ground(pred: &str, args: &[Value]) -> Self {
        Atom { pred: sym(pred), args: args.iter().map(Term::from_value).collect() }
    }

    pub fn key(&self) -> PredKey {
        PredKey { name: self.pred.clone(), arity: self.args.len() }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<Symbol>) {
        for a in &self.args {
            a.collect_vars(out);
        }
    }

    pub fn vars(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub fn to_values(&self) -> Option<Vec<Value>> {
        self.args.iter().map(Term::to_value).collect()
    }

    pub fn is_context_literal(&self) -> bool {
        &*self.pred == CONTEXT_PREDICATE
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pred)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            write_joined(f, &self.args, ", ")?;
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Renders a ground tuple as an atom, e.g. `permission(mary, update, x, nominal)`.
pub fn display_tuple(pred: &str, tuple: &[Value]) -> String {
    if tuple.is_empty() {
        return pred.to_string();
    }
    let args: Vec<String> = tuple.iter().map(|v| v.to_string()).collect();
    format!("{pred}({})", args.join(", "))
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    /// Integers compare numerically, symbols lexicographically; any other
    /// pairing only supports (in)equality.
    pub fn eval(self, lhs: &Value, rhs: &Value) -> bool {
        use std::cmp::Ordering;
        let ord: Option<Ordering> = match (lhs, rhs) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Sym(a), Value::Sym(b)) => Some(a.cmp(b)),
            _ => None,
        };
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => ord == Some(Ordering::Less),
            CmpOp::Le => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
            CmpOp::Gt => ord == Some(Ordering::Greater),
            CmpOp::Ge => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Literal {
    Pos(Atom),
    Neg(Atom),
    Cmp(Term, CmpOp, Term),
    /// `count(Var, (goal), Result)`: number of distinct `Var` values
    /// satisfying the goal conjunction.
    Count { var: Symbol, goal: Vec<Literal>, result: Term },
}

impl Literal {
    pub fn collect_vars(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Literal::Pos(a) | Literal::Neg(a) => a.collect_vars(out),
            Literal::Cmp(l, _, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Literal::Count { var, goal, result } => {
                if &**var != "_" {
                    out.insert(var.clone());
                }
                for g in goal {
                    g.collect_vars(out);
                }
                result.collect_vars(out);
            }
        }
    }

    /// Atoms referenced by the literal, with `true` for non-monotone uses
    /// (negation or counting).
    pub fn dependencies(&self) -> Vec<(&Atom, bool)> {
        match self {
            Literal::Pos(a) => vec![(a, false)],
            Literal::Neg(a) => vec![(a, true)],
            Literal::Cmp(..) => Vec::new(),
            Literal::Count { goal, .. } => goal
                .iter()
                .flat_map(|g| g.dependencies())
                .map(|(a, _)| (a, true))
                .collect(),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "not {a}"),
            Literal::Cmp(l, op, r) => write!(f, "{l} {} {r}", op.symbol()),
            Literal::Count { var, goal, result } => {
                write!(f, "count({var}, (")?;
                write_joined(f, goal, ", ")?;
                write!(f, "), {result})")
            }
        }
    }
}

/// `head :- body.` Rules built into the engine carry a label used in traces;
/// labels and source lines are not part of rule identity.
#[derive(Clone, Debug)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Literal>,
    pub label: Option<Symbol>,
    pub line: usize,
}

impl Rule {
    pub fn new(head: Atom, body: Vec<Literal>) -> Self {
        Rule { head, body, label: None, line: 0 }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(sym(label));
        self
    }

    pub fn body_vars(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        for l in &self.body {
            l.collect_vars(&mut out);
        }
        out
    }

    /// Name used in traces and diagnostics.
    pub fn describe(&self) -> String {
        match &self.label {
            Some(l) => l.to_string(),
            None if self.line > 0 => format!("line {}", self.line),
            None => self.to_string(),
        }
    }
}

impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.body == other.body
    }
}

impl Eq for Rule {}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            write_joined(f, &self.body, ", ")?;
        }
        f.write_str(".")
    }
}

/// Attributes of an object inserted by a delegation event.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ObjectAttrs {
    License { grantee: Symbol, privilege: Symbol, target: Symbol, context: Value },
    Role { assignee: Symbol, assignment: Symbol },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DelegateKind {
    Delegate,
    Transfer,
}

/// A state mutation scripted in a policy file.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Event {
    Delegate {
        kind: DelegateKind,
        grantor: Symbol,
        view: Symbol,
        attrs: ObjectAttrs,
        at: Timestamp,
        id: Option<Symbol>,
    },
    GrantOption {
        grantor: Symbol,
        grantee: Symbol,
        target: Symbol,
        level: i64,
        context: Value,
        at: Timestamp,
        id: Option<Symbol>,
    },
    Revoke {
        actor: Symbol,
        object: Symbol,
        at: Timestamp,
    },
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Directive {
    /// `#view name sub_view_of parent.`
    View { name: Symbol, parent: Symbol },
    /// `#context name temporal start end.` (closed interval)
    Temporal { name: Symbol, start: Timestamp, end: Timestamp },
    /// `#priority default n.`
    DefaultPriority(u64),
    /// `#next-id n.` Counter for generated object identifiers.
    NextId(u64),
    Event(Event),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Statement {
    Fact(Atom),
    Rule(Rule),
    Directive(Directive),
}

/// A parsed policy: facts, rules and directives in source order.
#[derive(Clone, Default, Debug)]
pub struct PolicyProgram {
    pub statements: Vec<Statement>,
    /// Source line of each statement (0 when synthesized).
    pub lines: Vec<usize>,
}

impl PartialEq for PolicyProgram {
    fn eq(&self, other: &Self) -> bool {
        self.statements == other.statements
    }
}

impl Eq for PolicyProgram {}

impl PolicyProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, statement: Statement) {
        self.statements.push(statement);
        self.lines.push(0);
    }

    pub fn push_fact(&mut self, atom: Atom) {
        self.push(Statement::Fact(atom));
    }

    pub fn push_rule(&mut self, rule: Rule) {
        self.push(Statement::Rule(rule));
    }

    pub fn extend(&mut self, other: &PolicyProgram) {
        for (s, l) in other.statements.iter().zip(&other.lines) {
            self.statements.push(s.clone());
            self.lines.push(*l);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn facts(&self) -> impl Iterator<Item = &Atom> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Fact(a) => Some(a),
            _ => None,
        })
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Rule(r) => Some(r),
            _ => None,
        })
    }

    pub fn directives(&self) -> impl Iterator<Item = &Directive> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Directive(d) => Some(d),
            _ => None,
        })
    }

    /// Keeps only statements for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&Statement) -> bool) {
        let mut lines = Vec::with_capacity(self.lines.len());
        let mut statements = Vec::with_capacity(self.statements.len());
        for (s, l) in self.statements.drain(..).zip(self.lines.drain(..)) {
            if keep(&s) {
                statements.push(s);
                lines.push(l);
            }
        }
        self.statements = statements;
        self.lines = lines;
    }
}

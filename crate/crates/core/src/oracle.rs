//! Brute-force reference evaluation, used to cross-check the engine.
//!
//! Shares the AST and the built-in rule text with the engine and nothing
//! else: stratification, rule evaluation, context evaluation and conflict
//! resolution are reimplemented here in the most direct way available.
//! Every stratum is re-derived in full until nothing changes; `hold` atoms
//! are decided on demand by matching rule heads against the call.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::ast::*;
use crate::datalog::FactBase;
use crate::decision::{is_permitted, Verdict};
use crate::error::{Error, Result};
use crate::orbac::*;

/// Largest model the reference evaluator accepts.
pub const ORACLE_LIMIT: usize = 100_000;

/// Largest number of constants per sort in a small universe.
pub const MAX_SORT_SIZE: usize = 6;

type Tup = Vec<Value>;
type Env = BTreeMap<Symbol, Value>;

#[derive(Clone, Debug, Default)]
struct Db {
    rels: HashMap<PredKey, BTreeSet<Tup>>,
    size: usize,
}

impl Db {
    fn insert(&mut self, key: PredKey, t: Tup) -> bool {
        let fresh = self.rels.entry(key).or_default().insert(t);
        if fresh {
            self.size += 1;
        }
        fresh
    }

    fn contains(&self, key: &PredKey, t: &[Value]) -> bool {
        self.rels.get(key).is_some_and(|r| r.contains(t))
    }

    fn scan(&self, key: &PredKey) -> Vec<Tup> {
        self.rels.get(key).map(|r| r.iter().cloned().collect()).unwrap_or_default()
    }

    fn to_fact_base(&self) -> FactBase {
        let mut fb = FactBase::new();
        for (key, rel) in &self.rels {
            for t in rel {
                fb.insert(&key.name, t.clone());
            }
        }
        fb
    }
}

fn is_hold(key: &PredKey) -> bool {
    &*key.name == CONTEXT_PREDICATE && key.arity == 4
}

fn is_anon(v: &Symbol) -> bool {
    &**v == "_"
}

fn match_term(t: &Term, v: &Value, env: &mut Env) -> bool {
    match t {
        Term::Var(x) if is_anon(x) => true,
        Term::Var(x) => match env.get(x) {
            Some(bound) => bound == v,
            None => {
                env.insert(x.clone(), v.clone());
                true
            }
        },
        Term::Sym(s) => matches!(v, Value::Sym(w) if w == s),
        Term::Int(n) => matches!(v, Value::Int(m) if m == n),
        Term::Param(name, args) => match v {
            Value::Ctx(ctx) => match &**ctx {
                Context::Param(n2, vals) if n2 == name && vals.len() == args.len() => {
                    args.iter().zip(vals).all(|(a, x)| match_term(a, x, env))
                }
                _ => false,
            },
            _ => false,
        },
        Term::And(parts) => {
            if let Some(g) = instantiate(t, env) {
                return &g == v;
            }
            match v {
                Value::Ctx(ctx) => match &**ctx {
                    Context::And(vals) if vals.len() == parts.len() => {
                        parts.iter().zip(vals).all(|(a, x)| match_term(a, x, env))
                    }
                    _ => false,
                },
                _ => false,
            }
        }
    }
}

fn substitute(t: &Term, env: &Env) -> Term {
    match t {
        Term::Var(x) => env.get(x).map(Term::from_value).unwrap_or_else(|| t.clone()),
        Term::Param(n, args) => Term::Param(n.clone(), args.iter().map(|a| substitute(a, env)).collect()),
        Term::And(parts) => Term::And(parts.iter().map(|a| substitute(a, env)).collect()),
        other => other.clone(),
    }
}

fn instantiate(t: &Term, env: &Env) -> Option<Value> {
    substitute(t, env).to_value()
}

/// Evaluates rule bodies against a fixed database; `hold` calls are decided
/// by a local least fixpoint over the demanded atoms.
struct Eval<'a> {
    db: &'a Db,
    hold_rules: &'a [Rule],
    table: Option<BTreeMap<Tup, bool>>,
}

impl<'a> Eval<'a> {
    fn new(db: &'a Db, hold_rules: &'a [Rule]) -> Self {
        Eval { db, hold_rules, table: None }
    }

    fn holds(&mut self, key: &PredKey, args: &Tup) -> Result<bool> {
        if self.db.contains(key, args) {
            return Ok(true);
        }
        if !is_hold(key) {
            return Ok(false);
        }
        if let Some(table) = &mut self.table {
            return Ok(*table.entry(args.clone()).or_insert(false));
        }
        let mut table = BTreeMap::from([(args.clone(), false)]);
        loop {
            self.table = Some(table.clone());
            let mut next = BTreeMap::new();
            for k in table.keys() {
                let v = self.hold_by_rules(k)?;
                next.insert(k.clone(), v);
            }
            for (k, v) in self.table.take().unwrap_or_default() {
                next.entry(k).or_insert(v);
            }
            if next == table {
                break;
            }
            table = next;
        }
        Ok(table[args])
    }

    fn hold_by_rules(&mut self, args: &Tup) -> Result<bool> {
        for r in self.hold_rules {
            let mut env = Env::new();
            if !r.head.args.iter().zip(args).all(|(t, v)| match_term(t, v, &mut env)) {
                continue;
            }
            let body: Vec<&Literal> = r.body.iter().collect();
            let mut out = Vec::new();
            self.solve(&body, env, &mut out)?;
            if !out.is_empty() {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn ready(l: &Literal, env: &Env, rest: &[&Literal]) -> bool {
        let bound = |vs: BTreeSet<Symbol>| vs.iter().all(|v| env.contains_key(v));
        match l {
            Literal::Pos(a) if is_hold(&a.key()) => bound(a.vars()),
            Literal::Pos(_) => true,
            Literal::Neg(a) => bound(a.vars()),
            Literal::Cmp(lhs, op, rhs) => {
                let (lb, rb) = (instantiate(lhs, env).is_some(), instantiate(rhs, env).is_some());
                (lb && rb)
                    || (*op == CmpOp::Eq
                        && ((lb && matches!(rhs, Term::Var(_))) || (rb && matches!(lhs, Term::Var(_)))))
            }
            Literal::Count { .. } => !rest.iter().any(|r| matches!(r, Literal::Pos(a) if !is_hold(&a.key()))),
        }
    }

    fn solve(&mut self, lits: &[&Literal], env: Env, out: &mut Vec<Env>) -> Result<()> {
        if lits.is_empty() {
            out.push(env);
            return Ok(());
        }
        let Some(i) = (0..lits.len()).find(|&i| {
            let rest: Vec<&Literal> = lits.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, l)| *l).collect();
            Self::ready(lits[i], &env, &rest)
        }) else {
            let stuck = lits[0];
            if let Literal::Pos(a) = stuck {
                if is_hold(&a.key()) {
                    return Err(Error::UninstantiatedContext(substitute_atom(a, &env).to_string()));
                }
            }
            return Err(Error::NotRangeRestricted(format!("cannot order `{stuck}`")));
        };
        let lit = lits[i];
        let rest: Vec<&Literal> = lits.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, l)| *l).collect();
        match lit {
            Literal::Pos(a) if is_hold(&a.key()) => {
                let args = ground_args(a, &env)?;
                if self.holds(&a.key(), &args)? {
                    self.solve(&rest, env, out)?;
                }
            }
            Literal::Pos(a) => {
                for t in self.db.scan(&a.key()) {
                    let mut e = env.clone();
                    if a.args.iter().zip(&t).all(|(term, v)| match_term(term, v, &mut e)) {
                        self.solve(&rest, e, out)?;
                    }
                }
            }
            Literal::Neg(a) => {
                let mut found = false;
                if is_hold(&a.key()) {
                    found = self.holds(&a.key(), &ground_args(a, &env)?)?;
                } else {
                    for t in self.db.scan(&a.key()) {
                        let mut e = env.clone();
                        if a.args.iter().zip(&t).all(|(term, v)| match_term(term, v, &mut e)) {
                            found = true;
                            break;
                        }
                    }
                }
                if !found {
                    self.solve(&rest, env, out)?;
                }
            }
            Literal::Cmp(lhs, op, rhs) => match (instantiate(lhs, &env), instantiate(rhs, &env)) {
                (Some(l), Some(r)) => {
                    if op.eval(&l, &r) {
                        self.solve(&rest, env, out)?;
                    }
                }
                (Some(v), None) | (None, Some(v)) => {
                    let var = match (lhs, rhs) {
                        (Term::Var(x), _) if !env.contains_key(x) => x.clone(),
                        (_, Term::Var(x)) => x.clone(),
                        _ => unreachable!("readiness guarantees a variable side"),
                    };
                    let mut e = env;
                    e.insert(var, v);
                    self.solve(&rest, e, out)?;
                }
                (None, None) => unreachable!("readiness guarantees a bound side"),
            },
            Literal::Count { var, goal, result } => {
                let goal: Vec<&Literal> = goal.iter().collect();
                let mut sols = Vec::new();
                self.solve(&goal, env.clone(), &mut sols)?;
                let n = if is_anon(var) {
                    sols.iter().collect::<BTreeSet<_>>().len()
                } else {
                    sols.iter().filter_map(|e| e.get(var)).collect::<BTreeSet<_>>().len()
                } as i64;
                let mut e = env;
                if match_term(result, &Value::Int(n), &mut e) {
                    self.solve(&rest, e, out)?;
                }
            }
        }
        Ok(())
    }
}

fn substitute_atom(a: &Atom, env: &Env) -> Atom {
    Atom { pred: a.pred.clone(), args: a.args.iter().map(|t| substitute(t, env)).collect() }
}

fn ground_args(a: &Atom, env: &Env) -> Result<Tup> {
    a.args
        .iter()
        .map(|t| instantiate(t, env))
        .collect::<Option<Tup>>()
        .ok_or_else(|| Error::UninstantiatedContext(substitute_atom(a, env).to_string()))
}

/// Stratum of every head predicate, by repeated relaxation of
/// `stratum(head) >= stratum(body) (+1 under negation or count)`.
fn strata(rules: &[Rule]) -> Result<BTreeMap<PredKey, usize>> {
    let mut level: BTreeMap<PredKey, usize> = BTreeMap::new();
    for r in rules {
        level.insert(r.head.key(), 0);
        for l in &r.body {
            for (a, _) in l.dependencies() {
                level.entry(a.key()).or_insert(0);
            }
        }
    }
    let cap = level.len();
    loop {
        let mut changed = false;
        for r in rules {
            let h = r.head.key();
            for l in &r.body {
                for (a, strict) in l.dependencies() {
                    let need = level[&a.key()] + usize::from(strict);
                    if level[&h] < need {
                        if need > cap {
                            return Err(Error::InvalidRequest(format!("not stratifiable at `{h}`")));
                        }
                        level.insert(h.clone(), need);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return Ok(level);
        }
    }
}

/// A program's rules, split into bottom-up rules by stratum and the
/// on-demand `hold` rules, together with its perfect model.
struct NaiveModel {
    db: Db,
    hold_rules: Vec<Rule>,
}

fn naive(rules: &[Rule], mut db: Db) -> Result<NaiveModel> {
    let level = strata(rules)?;
    let hold_rules: Vec<Rule> = rules.iter().filter(|r| is_hold(&r.head.key())).cloned().collect();
    let mut by_level: BTreeMap<usize, Vec<&Rule>> = BTreeMap::new();
    for r in rules.iter().filter(|r| !is_hold(&r.head.key())) {
        by_level.entry(level[&r.head.key()]).or_default().push(r);
    }
    for stratum in by_level.values() {
        loop {
            let mut derived = Vec::new();
            let mut ev = Eval::new(&db, &hold_rules);
            for r in stratum {
                let body: Vec<&Literal> = r.body.iter().collect();
                let mut sols = Vec::new();
                ev.solve(&body, Env::new(), &mut sols)?;
                for env in sols {
                    let t = r
                        .head
                        .args
                        .iter()
                        .map(|a| instantiate(a, &env))
                        .collect::<Option<Tup>>()
                        .ok_or_else(|| Error::NotRangeRestricted(r.to_string()))?;
                    if !db.contains(&r.head.key(), &t) {
                        derived.push((r.head.key(), t));
                    }
                }
            }
            let mut grew = false;
            for (k, t) in derived {
                grew |= db.insert(k, t);
            }
            if db.size > ORACLE_LIMIT {
                return Err(Error::UniverseTooLarge(db.size));
            }
            if !grew {
                break;
            }
        }
    }
    Ok(NaiveModel { db, hold_rules })
}

fn edb_of(p: &PolicyProgram, edb: &FactBase) -> Result<Db> {
    let mut db = Db::default();
    for a in p.facts() {
        let t = a.to_values().ok_or_else(|| Error::NotRangeRestricted(a.to_string()))?;
        db.insert(a.key(), t);
    }
    for (k, t) in edb.atoms() {
        db.insert(k, t);
    }
    if db.size > ORACLE_LIMIT {
        return Err(Error::UniverseTooLarge(db.size));
    }
    Ok(db)
}

/// Perfect model of `p` over `edb` by naive iteration. `hold/4` atoms are
/// not materialized: only stored `hold` facts appear in the result.
pub fn naive_model(p: &PolicyProgram, edb: &FactBase) -> Result<FactBase> {
    let rules: Vec<Rule> = p.rules().cloned().collect();
    Ok(naive(&rules, edb_of(p, edb)?)?.db.to_fact_base())
}

/// The reference model of a policy state, with the facts the engine adds
/// from declarations and context values recomputed independently.
pub struct OracleWorld {
    model: NaiveModel,
    temporal: HashMap<Symbol, (Timestamp, Timestamp)>,
    default_priority: u64,
    context_names: BTreeSet<Symbol>,
    any_context: bool,
    slack: usize,
}

type Rank = (bool, u64);

impl OracleWorld {
    pub fn new(state: &PolicyState) -> Result<Self> {
        let user = state.program();
        let mut program = builtin_program(state.config().multi_delegation);
        program.extend(user);
        let rules: Vec<Rule> = program.rules().cloned().collect();
        let mut db = edb_of(&program, &FactBase::new())?;

        let mut temporal = HashMap::new();
        let mut default_priority = 1;
        for d in user.directives() {
            match d {
                Directive::View { name, parent } => {
                    db.insert(PredKey::new("sub_view", 2), vec![Value::Sym(name.clone()), Value::Sym(parent.clone())]);
                }
                Directive::Temporal { name, start, end } => {
                    temporal.insert(name.clone(), (*start, *end));
                }
                Directive::DefaultPriority(n) => default_priority = *n,
                _ => {}
            }
        }
        for r in user.rules() {
            let [Term::Var(l), Term::Sym(view)] = r.head.args.as_slice() else { continue };
            if &*r.head.pred != "use" {
                continue;
            }
            let parent = r.body.iter().find_map(|lit| match lit {
                Literal::Pos(a) if &*a.pred == "use" => match a.args.as_slice() {
                    [Term::Var(l2), Term::Sym(p)] if l2 == l => Some(p.clone()),
                    _ => None,
                },
                _ => None,
            });
            if let Some(parent) = parent {
                if !db.scan(&PredKey::new("sub_view", 2)).iter().any(|t| t[0] == Value::Sym(view.clone())) {
                    db.insert(PredKey::new("sub_view", 2), vec![Value::Sym(view.clone()), Value::Sym(parent)]);
                }
            }
        }

        let mut ctx_values: BTreeSet<Value> = BTreeSet::new();
        for t in db.scan(&PredKey::new("context", 2)) {
            ctx_values.insert(t[1].clone());
        }
        for t in db.scan(&PredKey::new("sub_context", 2)) {
            ctx_values.insert(t[0].clone());
            ctx_values.insert(t[1].clone());
        }
        for c in ctx_values {
            let parts: Vec<Value> = match &c {
                Value::Ctx(ctx) => match &**ctx {
                    Context::And(ps) => ps.iter().filter(|p| !p.is_nominal()).cloned().collect(),
                    Context::Param(..) => vec![c.clone()],
                },
                v if v.is_nominal() => Vec::new(),
                v => vec![v.clone()],
            };
            for p in parts {
                db.insert(PredKey::new(CONJUNCT, 2), vec![c.clone(), p]);
            }
            db.insert(PredKey::new(CONTEXT_VALUE, 1), vec![c]);
        }

        let mut context_names = BTreeSet::new();
        let mut any_context = false;
        let heads = rules.iter().map(|r| r.head.clone()).chain(program.facts().cloned());
        for h in heads.filter(|h| is_hold(&h.key())) {
            match &h.args[3] {
                Term::Sym(n) | Term::Param(n, _) => {
                    context_names.insert(n.clone());
                }
                Term::Var(_) => any_context = true,
                _ => {}
            }
        }

        Ok(OracleWorld {
            model: naive(&rules, db)?,
            temporal,
            default_priority,
            context_names,
            any_context,
            slack: state.config().fixpoint_slack,
        })
    }

    pub fn model(&self) -> FactBase {
        self.model.db.to_fact_base()
    }

    fn column(&self, pred: &str, arity: usize, first: &Value, i: usize) -> Vec<Value> {
        self.model.db.scan(&PredKey::new(pred, arity)).into_iter().filter(|t| &t[0] == first).map(|t| t[i].clone()).collect()
    }

    fn targets(&self, o: &Value, delegation: bool, seen: &mut BTreeSet<Value>, out: &mut BTreeSet<Value>) {
        if !seen.insert(o.clone()) {
            return;
        }
        out.insert(o.clone());
        out.extend(self.column("sub_target", 2, o, 1));
        if delegation {
            out.extend(self.column("sub_license", 2, o, 1));
        }
        let gol = Value::sym(GRANT_OPTION_LICENSE);
        if self.column("use", 2, o, 1).contains(&gol) {
            for t in self.column("target", 2, o, 1) {
                self.targets(&t, delegation, seen, out);
            }
        }
    }

    fn rank(&self, t: &Tup) -> Result<Rank> {
        if t.len() == 4 {
            return Ok((false, self.default_priority));
        }
        match &t[4] {
            Value::Int(n) if *n >= 0 => Ok((false, *n as u64)),
            Value::Sym(s) if &**s == MAX_PRIORITY => Ok((true, 0)),
            other => Err(Error::InvalidRequest(format!("invalid priority {other}"))),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn context(
        &self,
        x: &Value,
        a: &Value,
        o: &Value,
        c: &Value,
        at: Timestamp,
        valid: &BTreeMap<Value, bool>,
        wanted: &mut BTreeSet<Value>,
    ) -> Result<bool> {
        if c.is_nominal() {
            return Ok(true);
        }
        if let Value::Ctx(ctx) = c {
            match &**ctx {
                Context::And(parts) => {
                    for p in parts {
                        if !self.context(x, a, o, p, at, valid, wanted)? {
                            return Ok(false);
                        }
                    }
                    return Ok(true);
                }
                Context::Param(name, args) if &**name == VALID_DELEG && matches!(args.as_slice(), [Value::Sym(_)]) => {
                    wanted.insert(args[0].clone());
                    return Ok(valid.get(&args[0]).copied().unwrap_or(false));
                }
                _ => {}
            }
        }
        let name = c.context_name().ok_or_else(|| Error::UnknownContext(c.to_string()))?;
        if let (Value::Sym(_), Some((start, end))) = (c, self.temporal.get(name)) {
            return Ok(*start <= at && at <= *end);
        }
        let known = &**name == NOMINAL || &**name == VALID_DELEG || self.context_names.contains(name) || self.any_context;
        if !known {
            return Err(Error::UnknownContext(c.to_string()));
        }
        let mut ev = Eval::new(&self.model.db, &self.model.hold_rules);
        ev.holds(&PredKey::new(CONTEXT_PREDICATE, 4), &vec![x.clone(), a.clone(), o.clone(), c.clone()])
    }

    /// Verdict for one subject given assumed `valid_deleg` verdicts; also
    /// reports the subjects whose verdicts were consulted.
    fn verdict(
        &self,
        x: &Value,
        a: &Value,
        o: &Value,
        at: Timestamp,
        valid: &BTreeMap<Value, bool>,
    ) -> Result<(Verdict, BTreeSet<Value>)> {
        let mut groups: BTreeSet<Value> = self.column("empower", 2, x, 1).into_iter().collect();
        groups.insert(x.clone());
        let mut privileges: BTreeSet<Value> = self.column("sub_privilege", 2, a, 1).into_iter().collect();
        privileges.insert(a.clone());
        let mut targets = BTreeSet::new();
        self.targets(o, a == &Value::sym(DELEGATE), &mut BTreeSet::new(), &mut targets);

        let mut best: Option<(Rank, bool)> = None;
        let mut wanted = BTreeSet::new();
        for (pred, prohibition) in [("prohibition", true), ("permission", false)] {
            for arity in [4, 5] {
                for t in self.model.db.scan(&PredKey::new(pred, arity)) {
                    if !groups.contains(&t[0]) || !privileges.contains(&t[1]) || !targets.contains(&t[2]) {
                        continue;
                    }
                    let rank = self.rank(&t)?;
                    if !self.context(x, a, o, &t[3], at, valid, &mut wanted)? {
                        continue;
                    }
                    best = match best {
                        Some((r, p)) if r > rank || (r == rank && p) => Some((r, p)),
                        _ => Some((rank, prohibition)),
                    };
                }
            }
        }
        let verdict = match best {
            Some((_, false)) => Verdict::Allow,
            _ => Verdict::Deny,
        };
        Ok((verdict, wanted))
    }

    /// Decides `(s, a, o)` at `at`. `valid_deleg` verdicts are computed by
    /// full passes over every subject involved, from all-deny upwards.
    pub fn decide(&self, s: &str, a: &str, o: &str, at: Timestamp) -> Result<Verdict> {
        let (sv, av, ov) = (Value::sym(s), Value::sym(a), Value::sym(o));
        let mut subjects: BTreeSet<Value> = BTreeSet::from([sv.clone()]);
        let mut valid: BTreeMap<Value, bool> = BTreeMap::new();
        let mut passes = 0;
        loop {
            let mut next = BTreeMap::new();
            let mut more = BTreeSet::new();
            for x in &subjects {
                let (v, wanted) = self.verdict(x, &av, &ov, at, &valid)?;
                next.insert(x.clone(), v == Verdict::Allow);
                more.extend(wanted);
            }
            let grew = more.iter().any(|m| !subjects.contains(m));
            subjects.extend(more);
            if !grew && next == valid {
                return Ok(if valid[&sv] { Verdict::Allow } else { Verdict::Deny });
            }
            passes += 1;
            if passes > 2 * subjects.len() + self.slack + 1 {
                return Err(Error::NonMonotoneContext(format!("{s} {a} {o}")));
            }
            valid = next;
        }
    }
}

/// Reference verdict for `(s, a, o)` at `at`.
pub fn decision_oracle(s: &str, a: &str, o: &str, at: Timestamp, state: &PolicyState) -> Result<Verdict> {
    OracleWorld::new(state)?.decide(s, a, o, at)
}

/// The constants of a small policy state, by sort, as seen by the oracle.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SmallUniverse {
    pub subjects: BTreeSet<Symbol>,
    pub actions: BTreeSet<Symbol>,
    pub objects: BTreeSet<Symbol>,
}

impl SmallUniverse {
    /// Subjects are `empower` members, grantees and grantors; actions are
    /// privileges and authorized actions; objects are view members.
    pub fn of(world: &OracleWorld) -> Self {
        let db = &world.model.db;
        let col = |pred: &str, arity: usize, i: usize| -> Vec<Symbol> {
            db.scan(&PredKey::new(pred, arity)).into_iter().filter_map(|t| t[i].as_sym().cloned()).collect()
        };
        let mut u = SmallUniverse::default();
        u.subjects.extend(col("empower", 2, 0));
        u.subjects.extend(col("grantee", 2, 1));
        u.subjects.extend(col("grantor", 2, 1));
        u.actions.extend(col("privilege", 2, 1));
        for arity in [4, 5] {
            u.actions.extend(col("permission", arity, 1));
            u.actions.extend(col("prohibition", arity, 1));
        }
        u.objects.extend(col("use", 2, 0));
        u
    }

    pub fn is_small(&self) -> bool {
        [&self.subjects, &self.actions, &self.objects].iter().all(|s| s.len() <= MAX_SORT_SIZE)
    }

    pub fn queries(&self) -> Vec<(Symbol, Symbol, Symbol)> {
        let mut out = Vec::new();
        for s in &self.subjects {
            for a in &self.actions {
                for o in &self.objects {
                    out.push((s.clone(), a.clone(), o.clone()));
                }
            }
        }
        out
    }
}

/// A query on which the engine and the oracle disagree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub subject: Symbol,
    pub action: Symbol,
    pub object: Symbol,
    pub engine: String,
    pub oracle: String,
}

fn outcome(r: &Result<Verdict>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => format!("err:{}", e.code()),
    }
}

/// Compares the engine with the oracle on every ground query of the state's
/// universe at `at`. Returns the number of queries and the disagreements;
/// an error on both sides counts as agreement.
pub fn differential_check(state: &PolicyState, at: Timestamp) -> Result<(usize, Vec<Mismatch>)> {
    let world = OracleWorld::new(state)?;
    let queries = SmallUniverse::of(&world).queries();
    let snap = state.snapshot();
    let mut mismatches = Vec::new();
    for (s, a, o) in &queries {
        let engine = is_permitted(s, a, o, at, &snap).map(|d| d.verdict);
        let oracle = world.decide(s, a, o, at);
        let agree = match (&engine, &oracle) {
            (Ok(x), Ok(y)) => x == y,
            (Err(Error::UnknownEntity { .. }), _) => true,
            (Err(_), Err(_)) => true,
            _ => false,
        };
        if !agree {
            mismatches.push(Mismatch {
                subject: s.clone(),
                action: a.clone(),
                object: o.clone(),
                engine: outcome(&engine),
                oracle: outcome(&oracle),
            });
        }
    }
    Ok((queries.len(), mismatches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_lang::{parse_str, SourcePolicy};

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn single_rule_by_hand() {
        let p = parse_str("empower(john, prof). empower(mary, sec). p(X) :- empower(X, prof).").unwrap();
        let m = naive_model(&p, &FactBase::new()).unwrap();
        assert!(m.contains("p", &[Value::sym("john")]));
        assert!(!m.contains("p", &[Value::sym("mary")]));
    }

    #[test]
    fn license_rule_gives_one_permission() {
        let p = parse_str(
            "use(l1, license). grantee(l1, mary). privilege(l1, read). target(l1, doc). context(l1, nominal).
             permission(Sub, Act, Obj, C) :- use(L, license), grantee(L, Sub), privilege(L, Act), target(L, Obj), context(L, C).",
        )
        .unwrap();
        let m = naive_model(&p, &FactBase::new()).unwrap();
        assert_eq!(m.tuples("permission", 4).count(), 1);
    }

    #[test]
    fn count_and_negation() {
        let p = parse_str(
            "e(a, b). e(a, c). e(b, c). n(a). n(b). n(c).
             deg(X, N) :- n(X), count(Y, (e(X, Y)), N).
             sink(X) :- n(X), not e(X, _).",
        )
        .unwrap();
        let m = naive_model(&p, &FactBase::new()).unwrap();
        assert!(m.contains("deg", &[Value::sym("a"), Value::Int(2)]));
        assert!(m.contains("deg", &[Value::sym("c"), Value::Int(0)]));
        assert!(m.contains("sink", &[Value::sym("c")]));
        assert!(!m.contains("sink", &[Value::sym("a")]));
    }

    #[test]
    fn mutual_negation_is_refused() {
        let p = parse_str("p(X) :- q(X), not r(X). r(X) :- q(X), not p(X). q(a).").unwrap();
        assert!(naive_model(&p, &FactBase::new()).is_err());
    }

    #[test]
    fn oversized_model_is_refused() {
        let mut text = String::new();
        for i in 0..400 {
            text.push_str(&format!("n(c{i}). "));
        }
        text.push_str("pair(X, Y) :- n(X), n(Y).");
        let p = parse_str(&text).unwrap();
        assert!(matches!(naive_model(&p, &FactBase::new()), Err(Error::UniverseTooLarge(_))));
    }

    const BASE: &str = "empower(john, prof). empower(mary, secretary). use(note1, notes).
        permission(prof, update, notes, nominal). permission(prof, delegate, license_delegation, nominal).
        #delegate john license_delegation grantee=mary privilege=update target=notes context=nominal at=2007-05-01T10:00:00Z.";

    fn state(text: &str) -> PolicyState {
        PolicyState::from_source(&SourcePolicy::inline(text), EngineConfig::default()).unwrap()
    }

    #[test]
    fn delegated_secretary_is_allowed() {
        let st = state(BASE);
        assert_eq!(decision_oracle("mary", "update", "note1", ts("2007-05-02T00:00:00Z"), &st).unwrap(), Verdict::Allow);
        assert_eq!(decision_oracle("mary", "read", "note1", ts("2007-05-02T00:00:00Z"), &st).unwrap(), Verdict::Deny);
    }

    #[test]
    fn transfer_denies_the_grantor() {
        let text = BASE.replace("#delegate john license_delegation", "#transfer john license_transfer");
        let st = state(&text);
        assert_eq!(decision_oracle("john", "update", "note1", ts("2007-05-02T00:00:00Z"), &st).unwrap(), Verdict::Deny);
        assert_eq!(decision_oracle("mary", "update", "note1", ts("2007-05-02T00:00:00Z"), &st).unwrap(), Verdict::Allow);
    }

    #[test]
    fn agrees_with_the_engine_on_the_base_state() {
        let (n, mismatches) = differential_check(&state(BASE), ts("2007-05-02T00:00:00Z")).unwrap();
        assert!(n > 0);
        assert!(mismatches.is_empty(), "{mismatches:?}");
    }
}

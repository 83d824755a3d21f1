//! Rules compiled to slot-indexed form, join planning and the body
//! evaluator shared by saturation, goal-directed solving and proofs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::ast::*;
use crate::error::{Error, Result};

use super::facts::Tuple;

pub(crate) type Env = Vec<Option<Value>>;

#[derive(Clone, Debug)]
pub(crate) enum CTerm {
    Var(usize),
    Anon,
    Const(Value),
    Param(Symbol, Vec<CTerm>),
    And(Vec<CTerm>),
}

#[derive(Clone, Debug)]
pub(crate) struct CAtom {
    pub key: PredKey,
    pub args: Vec<CTerm>,
}

#[derive(Clone, Debug)]
pub(crate) enum CLit {
    Pos(CAtom),
    Neg(CAtom),
    Cmp(CTerm, CmpOp, CTerm),
    Count {
        var: usize,
        goal: Vec<CLit>,
        result: CTerm,
        /// Goal variables also used outside the count.
        outer: Vec<usize>,
    },
}

/// A body literal in evaluation order; `pos` is its index in the source body.
pub(crate) type Plan = Vec<(usize, CLit)>;

#[derive(Debug)]
pub(crate) struct CRule {
    pub source: Rule,
    pub head: CAtom,
    pub body: Vec<CLit>,
    pub var_names: Vec<Symbol>,
}

impl CTerm {
    fn collect_slots(&self, out: &mut BTreeSet<usize>) {
        match self {
            CTerm::Var(i) => {
                out.insert(*i);
            }
            CTerm::Param(_, args) | CTerm::And(args) => args.iter().for_each(|a| a.collect_slots(out)),
            _ => {}
        }
    }

    fn is_bound(&self, bound: &BTreeSet<usize>) -> bool {
        match self {
            CTerm::Var(i) => bound.contains(i),
            CTerm::Anon => false,
            CTerm::Const(_) => true,
            CTerm::Param(_, args) | CTerm::And(args) => args.iter().all(|a| a.is_bound(bound)),
        }
    }
}

impl CLit {
    /// Variables this literal binds once evaluated.
    fn binds(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        match self {
            CLit::Pos(a) => a.args.iter().for_each(|t| t.collect_slots(&mut out)),
            CLit::Cmp(l, CmpOp::Eq, r) => {
                l.collect_slots(&mut out);
                r.collect_slots(&mut out);
            }
            CLit::Count { result, .. } => result.collect_slots(&mut out),
            _ => {}
        }
        out
    }
}

struct Compiler {
    slots: HashMap<Symbol, usize>,
    names: Vec<Symbol>,
}

impl Compiler {
    fn slot(&mut self, name: &Symbol) -> usize {
        if let Some(&i) = self.slots.get(name) {
            return i;
        }
        let i = self.names.len();
        self.slots.insert(name.clone(), i);
        self.names.push(name.clone());
        i
    }

    fn term(&mut self, t: &Term) -> CTerm {
        match t {
            Term::Var(v) if &**v == "_" => CTerm::Anon,
            Term::Var(v) => CTerm::Var(self.slot(v)),
            Term::Sym(s) => CTerm::Const(Value::Sym(s.clone())),
            Term::Int(n) => CTerm::Const(Value::Int(*n)),
            Term::Param(..) | Term::And(_) => match t.to_value() {
                Some(v) => CTerm::Const(v),
                None => match t {
                    Term::Param(name, args) => CTerm::Param(name.clone(), args.iter().map(|a| self.term(a)).collect()),
                    Term::And(parts) => CTerm::And(parts.iter().map(|a| self.term(a)).collect()),
                    _ => unreachable!(),
                },
            },
        }
    }

    fn atom(&mut self, a: &Atom) -> CAtom {
        CAtom { key: a.key(), args: a.args.iter().map(|t| self.term(t)).collect() }
    }

    fn literal(&mut self, lit: &Literal, outside: &HashMap<Symbol, usize>) -> CLit {
        match lit {
            Literal::Pos(a) => CLit::Pos(self.atom(a)),
            Literal::Neg(a) => CLit::Neg(self.atom(a)),
            Literal::Cmp(l, op, r) => CLit::Cmp(self.term(l), *op, self.term(r)),
            Literal::Count { var, goal, result } => {
                let mut goal_vars = BTreeSet::new();
                for g in goal {
                    g.collect_vars(&mut goal_vars);
                }
                let outer = goal_vars
                    .iter()
                    .filter(|v| *v != var && outside.get(*v).copied().unwrap_or(0) > 0)
                    .map(|v| self.slot(v))
                    .collect();
                CLit::Count {
                    var: self.slot(var),
                    goal: goal.iter().map(|g| self.literal(g, outside)).collect(),
                    result: self.term(result),
                    outer,
                }
            }
        }
    }
}

/// Number of occurrences of each variable outside each count literal is
/// needed to tell local count variables from outer ones.
fn occurrences_outside(rule: &Rule, skip: usize) -> HashMap<Symbol, usize> {
    let mut counts: HashMap<Symbol, usize> = HashMap::new();
    let mut add = |vars: BTreeSet<Symbol>| {
        for v in vars {
            *counts.entry(v).or_default() += 1;
        }
    };
    add(rule.head.vars());
    for (i, lit) in rule.body.iter().enumerate() {
        if i != skip {
            let mut vs = BTreeSet::new();
            lit.collect_vars(&mut vs);
            add(vs);
        }
    }
    counts
}

impl CRule {
    pub fn compile(rule: &Rule) -> CRule {
        let mut c = Compiler { slots: HashMap::new(), names: Vec::new() };
        let head = c.atom(&rule.head);
        let body = rule
            .body
            .iter()
            .enumerate()
            .map(|(i, lit)| {
                let outside = if matches!(lit, Literal::Count { .. }) {
                    occurrences_outside(rule, i)
                } else {
                    HashMap::new()
                };
                c.literal(lit, &outside)
            })
            .collect();
        CRule { source: rule.clone(), head, body, var_names: c.names }
    }

    pub fn nvars(&self) -> usize {
        self.var_names.len()
    }

    pub fn head_key(&self) -> PredKey {
        self.head.key.clone()
    }
}

fn ready(lit: &CLit, bound: &BTreeSet<usize>) -> bool {
    match lit {
        CLit::Pos(a) if a.key.name.as_ref() == CONTEXT_PREDICATE => a.args.iter().all(|t| t.is_bound(bound)),
        CLit::Pos(_) => true,
        CLit::Neg(a) => a.args.iter().all(|t| matches!(t, CTerm::Anon) || t.is_bound(bound)),
        CLit::Cmp(l, op, r) => {
            let (lb, rb) = (l.is_bound(bound), r.is_bound(bound));
            (lb && rb) || (*op == CmpOp::Eq && ((lb && matches!(r, CTerm::Var(_))) || (rb && matches!(l, CTerm::Var(_)))))
        }
        CLit::Count { outer, .. } => outer.iter().all(|v| bound.contains(v)),
    }
}

fn bound_args(a: &CAtom, bound: &BTreeSet<usize>) -> usize {
    a.args.iter().filter(|t| t.is_bound(bound)).count()
}

/// Greedy join order: filters as soon as their variables are bound, otherwise
/// the positive literal with the most bound arguments (ties by source order).
/// `first` forces a literal to the front (the delta literal).
pub(crate) fn plan(body: &[CLit], initial: &BTreeSet<usize>, first: Option<usize>) -> Plan {
    let mut bound = initial.clone();
    let mut remaining: Vec<usize> = (0..body.len()).collect();
    let mut out = Vec::with_capacity(body.len());
    let take = |i: usize, remaining: &mut Vec<usize>, bound: &mut BTreeSet<usize>, out: &mut Plan| {
        remaining.retain(|&j| j != i);
        let lit = match &body[i] {
            CLit::Count { var, goal, result, outer } => CLit::Count {
                var: *var,
                goal: plan(goal, bound, None).into_iter().map(|(_, l)| l).collect(),
                result: result.clone(),
                outer: outer.clone(),
            },
            other => other.clone(),
        };
        bound.extend(body[i].binds());
        out.push((i, lit));
    };
    if let Some(f) = first {
        take(f, &mut remaining, &mut bound, &mut out);
    }
    while !remaining.is_empty() {
        let is_filter = |l: &CLit| !matches!(l, CLit::Pos(_)) || matches!(l, CLit::Pos(a) if a.key.name.as_ref() == CONTEXT_PREDICATE);
        if let Some(&i) = remaining.iter().find(|&&i| is_filter(&body[i]) && ready(&body[i], &bound)) {
            take(i, &mut remaining, &mut bound, &mut out);
            continue;
        }
        let best = remaining
            .iter()
            .filter_map(|&i| match &body[i] {
                CLit::Pos(a) if !is_filter(&body[i]) => Some((i, bound_args(a, &bound))),
                _ => None,
            })
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        let i = best.map_or(remaining[0], |(i, _)| i);
        take(i, &mut remaining, &mut bound, &mut out);
    }
    out
}

pub(crate) fn eval_term(t: &CTerm, env: &Env) -> Option<Value> {
    match t {
        CTerm::Var(i) => env[*i].clone(),
        CTerm::Anon => None,
        CTerm::Const(v) => Some(v.clone()),
        CTerm::Param(name, args) => {
            let args = args.iter().map(|a| eval_term(a, env)).collect::<Option<Vec<_>>>()?;
            Some(Value::Ctx(Arc::new(Context::Param(name.clone(), args))))
        }
        CTerm::And(parts) => {
            let parts = parts.iter().map(|a| eval_term(a, env)).collect::<Option<Vec<_>>>()?;
            Some(Value::conj(parts))
        }
    }
}

/// Unifies a compiled term with a ground value, recording new bindings.
pub(crate) fn match_term(t: &CTerm, v: &Value, env: &mut Env, trail: &mut Vec<usize>) -> bool {
    match t {
        CTerm::Anon => true,
        CTerm::Const(c) => c == v,
        CTerm::Var(i) => match &env[*i] {
            Some(b) => b == v,
            None => {
                env[*i] = Some(v.clone());
                trail.push(*i);
                true
            }
        },
        CTerm::Param(name, args) => match v {
            Value::Ctx(ctx) => match &**ctx {
                Context::Param(n, vals) if n == name && vals.len() == args.len() => {
                    args.iter().zip(vals).all(|(a, x)| match_term(a, x, env, trail))
                }
                _ => false,
            },
            _ => false,
        },
        CTerm::And(parts) => {
            if let Some(built) = eval_term(t, env) {
                return &built == v;
            }
            match v {
                Value::Ctx(ctx) => match &**ctx {
                    Context::And(vals) if vals.len() == parts.len() => {
                        parts.iter().zip(vals).all(|(a, x)| match_term(a, x, env, trail))
                    }
                    _ => false,
                },
                _ => false,
            }
        }
    }
}

pub(crate) fn undo(env: &mut Env, trail: &mut Vec<usize>, mark: usize) {
    for i in trail.drain(mark..) {
        env[i] = None;
    }
}

pub(crate) fn pattern_of(atom: &CAtom, env: &Env) -> Vec<Option<Value>> {
    atom.args.iter().map(|t| eval_term(t, env)).collect()
}

/// Relation access for the body evaluator. `pos` is the source position of
/// the literal being evaluated (`usize::MAX` inside count goals).
pub(crate) trait Db {
    fn scan(&mut self, pos: usize, key: &PredKey, pattern: &[Option<Value>]) -> Result<Vec<Tuple>>;

    fn contains(&mut self, key: &PredKey, tuple: &[Value]) -> Result<bool> {
        let pattern: Vec<Option<Value>> = tuple.iter().cloned().map(Some).collect();
        Ok(!self.scan(usize::MAX, key, &pattern)?.is_empty())
    }
}

pub(crate) struct BodyEval<'r> {
    pub rule: &'r CRule,
    pub trail: Vec<usize>,
}

impl<'r> BodyEval<'r> {
    pub fn new(rule: &'r CRule) -> Self {
        BodyEval { rule, trail: Vec::new() }
    }

    fn unbound(&self, what: &str) -> Error {
        Error::NotRangeRestricted(format!("{what} reached with unbound variables in `{}`", self.rule.source))
    }

    /// Enumerates satisfying environments; `emit` returns `false` to stop.
    /// Returns `false` when stopped early.
    pub fn run(
        &mut self,
        plan: &[(usize, CLit)],
        env: &mut Env,
        db: &mut dyn Db,
        emit: &mut dyn FnMut(&Env) -> Result<bool>,
    ) -> Result<bool> {
        let Some(((pos, lit), rest)) = plan.split_first() else {
            return emit(env);
        };
        match lit {
            CLit::Pos(atom) => {
                let pattern = pattern_of(atom, env);
                for tuple in db.scan(*pos, &atom.key, &pattern)? {
                    let mark = self.trail.len();
                    let ok = atom.args.iter().zip(tuple.iter()).all(|(t, v)| match_term(t, v, env, &mut self.trail));
                    let go_on = if ok { self.run(rest, env, db, emit)? } else { true };
                    undo(env, &mut self.trail, mark);
                    if !go_on {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            CLit::Neg(atom) => {
                let pattern = pattern_of(atom, env);
                let found = if atom.args.iter().any(|t| matches!(t, CTerm::Anon)) {
                    for (t, p) in atom.args.iter().zip(&pattern) {
                        if p.is_none() && !matches!(t, CTerm::Anon) {
                            return Err(self.unbound("negated literal"));
                        }
                    }
                    !db.scan(usize::MAX, &atom.key, &pattern)?.is_empty()
                } else {
                    let tuple = pattern.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| self.unbound("negated literal"))?;
                    db.contains(&atom.key, &tuple)?
                };
                if found {
                    Ok(true)
                } else {
                    self.run(rest, env, db, emit)
                }
            }
            CLit::Cmp(l, op, r) => {
                let (lv, rv) = (eval_term(l, env), eval_term(r, env));
                match (lv, rv) {
                    (Some(a), Some(b)) => {
                        if op.eval(&a, &b) {
                            self.run(rest, env, db, emit)
                        } else {
                            Ok(true)
                        }
                    }
                    (Some(v), None) | (None, Some(v)) if *op == CmpOp::Eq => {
                        let target = if eval_term(l, env).is_none() { l } else { r };
                        let mark = self.trail.len();
                        let go_on = if match_term(target, &v, env, &mut self.trail) {
                            self.run(rest, env, db, emit)?
                        } else {
                            true
                        };
                        undo(env, &mut self.trail, mark);
                        Ok(go_on)
                    }
                    _ => Err(self.unbound("comparison")),
                }
            }
            CLit::Count { var, goal, result, .. } => {
                let n = self.count(*var, goal, env, db)?;
                let mark = self.trail.len();
                let go_on = if match_term(result, &Value::Int(n), env, &mut self.trail) {
                    self.run(rest, env, db, emit)?
                } else {
                    true
                };
                undo(env, &mut self.trail, mark);
                Ok(go_on)
            }
        }
    }

    /// Number of distinct values of `var` over the solutions of `goal`.
    pub fn count(&mut self, var: usize, goal: &[CLit], env: &mut Env, db: &mut dyn Db) -> Result<i64> {
        let goal: Plan = goal.iter().cloned().map(|l| (usize::MAX, l)).collect();
        let mut seen: HashSet<Value> = HashSet::new();
        let mut unbound = false;
        self.run(&goal, env, db, &mut |env| {
            match &env[var] {
                Some(v) => {
                    seen.insert(v.clone());
                }
                None => unbound = true,
            }
            Ok(true)
        })?;
        if unbound {
            return Err(self.unbound("counted variable"));
        }
        Ok(seen.len() as i64)
    }
}

/// Instantiates a head atom; `None` when a head variable is unbound.
pub(crate) fn head_tuple(head: &CAtom, env: &Env) -> Option<Tuple> {
    head.args.iter().map(|t| eval_term(t, env)).collect::<Option<Vec<_>>>().map(Into::into)
}

/// Renders a source literal with bound variables replaced by their values.
pub(crate) fn instantiate(lit: &Literal, rule: &CRule, env: &Env) -> String {
    let lookup = |name: &Symbol| -> Option<Value> {
        rule.var_names.iter().position(|n| n == name).and_then(|i| env.get(i).cloned().flatten())
    };
    fn term(t: &Term, lookup: &dyn Fn(&Symbol) -> Option<Value>) -> Term {
        match t {
            Term::Var(v) => lookup(v).map_or_else(|| t.clone(), |v| Term::from_value(&v)),
            Term::Param(n, args) => Term::Param(n.clone(), args.iter().map(|a| term(a, lookup)).collect()),
            Term::And(parts) => Term::And(parts.iter().map(|a| term(a, lookup)).collect()),
            other => other.clone(),
        }
    }
    fn lit_sub(l: &Literal, lookup: &dyn Fn(&Symbol) -> Option<Value>) -> Literal {
        let atom = |a: &Atom| Atom { pred: a.pred.clone(), args: a.args.iter().map(|t| term(t, lookup)).collect() };
        match l {
            Literal::Pos(a) => Literal::Pos(atom(a)),
            Literal::Neg(a) => Literal::Neg(atom(a)),
            Literal::Cmp(a, op, b) => Literal::Cmp(term(a, lookup), *op, term(b, lookup)),
            Literal::Count { var, goal, result } => Literal::Count {
                var: var.clone(),
                goal: goal.iter().map(|g| lit_sub(g, lookup)).collect(),
                result: term(result, lookup),
            },
        }
    }
    lit_sub(lit, &lookup).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_lang::parse_str;

    fn rule(src: &str) -> CRule {
        CRule::compile(parse_str(src).unwrap().rules().next().unwrap())
    }

    #[test]
    fn planner_puts_filters_after_binders() {
        let r = rule("p(X) :- not q(X), X < 3, d(X).");
        let order: Vec<usize> = plan(&r.body, &BTreeSet::new(), None).iter().map(|(i, _)| *i).collect();
        assert_eq!(order, vec![2, 0, 1]);
    }

    #[test]
    fn planner_prefers_bound_literals() {
        let r = rule("p(X, Z) :- a(X, Y), b(W, Z), c(Y, W).");
        let order: Vec<usize> = plan(&r.body, &BTreeSet::new(), None).iter().map(|(i, _)| *i).collect();
        assert_eq!(order, vec![0, 2, 1]);
    }

    #[test]
    fn context_templates_match_structurally() {
        let r = rule("h(N) :- c(max_multi_delegation(N)).");
        let CLit::Pos(atom) = &r.body[0] else { panic!() };
        let mut env: Env = vec![None; r.nvars()];
        let mut trail = Vec::new();
        let v = Value::param("max_multi_delegation", vec![Value::Int(2)]);
        assert!(match_term(&atom.args[0], &v, &mut env, &mut trail));
        assert_eq!(env[0], Some(Value::Int(2)));
    }
}

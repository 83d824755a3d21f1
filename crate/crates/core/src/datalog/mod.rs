//! Stratified Datalog with negation, comparisons and counting.
//!
//! Bottom-up evaluation is semi-naive, stratum by stratum. Goal-directed
//! evaluation uses answer tables per call pattern. Both share one compiled
//! rule representation and one body evaluator.

mod compile;
mod explain;
mod facts;
mod saturate;
mod solve;
mod stratify;

use std::collections::{BTreeMap, HashMap, HashSet};

pub use explain::{Justification, ProofNode};
pub use facts::{FactBase, Relation, Tuple};
pub use saturate::DEFAULT_FACT_LIMIT;
pub use stratify::{stratify_rules, CycleWitness, DepEdge, Strata};

pub(crate) use stratify::DepGraph;

use crate::ast::*;
use crate::error::{Error, Result};
use crate::policy_lang::validate_program;

use compile::{match_term, BodyEval, CRule, Db, Env};
use solve::Solver;

/// Variable bindings of one answer.
pub type Substitution = BTreeMap<Symbol, Value>;

/// A compiled, stratified rule set.
#[derive(Debug)]
pub struct RuleSet {
    rules: Vec<CRule>,
    by_head: HashMap<PredKey, Vec<usize>>,
    strata: Strata,
}

impl RuleSet {
    pub fn new<'a>(rules: impl IntoIterator<Item = &'a Rule>) -> Result<Self> {
        let rules: Vec<&Rule> = rules.into_iter().collect();
        let strata = stratify_rules(rules.iter().copied()).map_err(Error::NonStratifiable)?;
        let compiled: Vec<CRule> = rules.iter().map(|r| CRule::compile(r)).collect();
        let mut by_head: HashMap<PredKey, Vec<usize>> = HashMap::new();
        for (i, r) in compiled.iter().enumerate() {
            by_head.entry(r.head_key()).or_default().push(i);
        }
        Ok(RuleSet { rules: compiled, by_head, strata })
    }

    pub fn strata(&self) -> &Strata {
        &self.strata
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Predicates defined by at least one rule.
    pub fn idb(&self) -> HashSet<PredKey> {
        self.by_head.keys().cloned().collect()
    }

    pub fn rules_for(&self, key: &PredKey) -> impl Iterator<Item = &Rule> {
        self.by_head.get(key).into_iter().flatten().map(|&i| &self.rules[i].source)
    }

    /// Rule-defined predicates that depend, directly or not, on `roots`
    /// (the roots included when they have rules).
    pub fn dependents(&self, roots: &[PredKey]) -> HashSet<PredKey> {
        let graph = DepGraph::new(self.rules.iter().map(|r| &r.source));
        let mut reverse: HashMap<usize, Vec<usize>> = HashMap::new();
        for (u, edges) in graph.adj.iter().enumerate() {
            for &(v, _) in edges {
                reverse.entry(v).or_default().push(u);
            }
        }
        let mut out: HashSet<PredKey> = HashSet::new();
        let mut stack: Vec<usize> = roots.iter().filter_map(|k| graph.index_of(k)).collect();
        while let Some(v) = stack.pop() {
            if out.insert(graph.nodes[v].clone()) {
                stack.extend(reverse.get(&v).into_iter().flatten().copied());
            }
        }
        out.retain(|k| self.by_head.contains_key(k));
        out
    }

    /// Saturates `base` with every rule whose head is not in `skip`.
    pub fn saturate(&self, mut base: FactBase, skip: &HashSet<PredKey>, limit: usize) -> Result<FactBase> {
        saturate::saturate_in_place(&self.rules, &self.strata, &mut base, skip, limit)?;
        Ok(base)
    }

    /// Answers for `key` matching `pattern`, evaluating the predicates in
    /// `tabled` goal-directed over `base`.
    pub fn solve(
        &self,
        base: &FactBase,
        tabled: &HashSet<PredKey>,
        key: &PredKey,
        pattern: &[Option<Value>],
        limit: usize,
    ) -> Result<Vec<Tuple>> {
        let mut solver = Solver::new(&self.rules, &self.by_head, &self.strata, base, tabled, limit);
        solver.solve(key, pattern)
    }

    /// Derivation of a tuple of a saturated model.
    pub fn prove(&self, model: &FactBase, key: &PredKey, tuple: &[Value]) -> Option<ProofNode> {
        explain::prove(self, model, key, tuple)
    }
}

fn check_valid(p: &PolicyProgram) -> Result<()> {
    let report = validate_program(p);
    if report.is_empty() {
        return Ok(());
    }
    if report.safety_violations.is_empty() && report.definedness_violations.is_empty() {
        if let Err(w) = report.stratification {
            return Err(Error::NonStratifiable(w));
        }
    }
    Err(Error::InvalidProgram(Box::new(report)))
}

fn base_facts(p: &PolicyProgram, edb: &FactBase) -> Result<FactBase> {
    let mut base = FactBase::from_atoms(p.facts())?;
    base.extend(edb);
    Ok(base)
}

/// Minimal stratification of a program's rules.
pub fn stratify(p: &PolicyProgram) -> Result<Strata> {
    stratify_rules(p.rules()).map_err(Error::NonStratifiable)
}

/// Perfect model of `p` over `edb` (program facts included).
pub fn saturate(p: &PolicyProgram, edb: &FactBase) -> Result<FactBase> {
    saturate_with_limit(p, edb, DEFAULT_FACT_LIMIT)
}

pub fn saturate_with_limit(p: &PolicyProgram, edb: &FactBase, limit: usize) -> Result<FactBase> {
    check_valid(p)?;
    let rules = RuleSet::new(p.rules())?;
    rules.saturate(base_facts(p, edb)?, &HashSet::new(), limit)
}

/// Goal-directed answers to `goal`: one substitution of the goal's named
/// variables per distinct answer.
pub fn query_goal(p: &PolicyProgram, edb: &FactBase, goal: &Atom) -> Result<Vec<Substitution>> {
    check_valid(p)?;
    let rules = RuleSet::new(p.rules())?;
    let base = base_facts(p, edb)?;
    let tabled = rules.idb();
    let probe = CRule::compile(&Rule::new(Atom::new("query", Vec::new()), vec![Literal::Pos(goal.clone())]));
    let compile::CLit::Pos(catom) = &probe.body[0] else { unreachable!() };
    let env: Env = vec![None; probe.nvars()];
    let pattern = compile::pattern_of(catom, &env);
    let answers = rules.solve(&base, &tabled, &goal.key(), &pattern, DEFAULT_FACT_LIMIT)?;
    let mut out: Vec<Substitution> = Vec::new();
    for t in answers {
        let mut env = env.clone();
        let mut trail = Vec::new();
        if catom.args.iter().zip(t.iter()).all(|(a, v)| match_term(a, v, &mut env, &mut trail)) {
            let sub: Substitution = probe
                .var_names
                .iter()
                .zip(&env)
                .filter_map(|(n, v)| v.clone().map(|v| (n.clone(), v)))
                .collect();
            if !out.contains(&sub) {
                out.push(sub);
            }
        }
    }
    out.sort();
    Ok(out)
}

struct ModelDb<'m>(&'m FactBase);

impl Db for ModelDb<'_> {
    fn scan(&mut self, _pos: usize, key: &PredKey, pattern: &[Option<Value>]) -> Result<Vec<Tuple>> {
        Ok(match self.0.relation(key) {
            Some(rel) => rel.select(pattern, 0..rel.len()).into_iter().map(|i| rel.get(i).0.clone()).collect(),
            None => Vec::new(),
        })
    }
}

/// Evaluates a `count` literal under `env` against a model whose counted
/// predicates are complete. Returns `env` extended with the result binding,
/// or `None` when the result term is bound to a different number.
pub fn eval_count(env: &Substitution, count: &Literal, model: &FactBase) -> Result<Option<Substitution>> {
    let Literal::Count { .. } = count else {
        return Err(Error::InvalidRequest(format!("`{count}` is not a count literal")));
    };
    let head_args: Vec<Term> = env.keys().map(|k| Term::Var(k.clone())).collect();
    let rule = Rule::new(Atom { pred: sym("count_probe"), args: head_args }, vec![count.clone()]);
    let probe = CRule::compile(&rule);
    let mut start: Env = vec![None; probe.nvars()];
    for (i, name) in probe.var_names.iter().enumerate() {
        if let Some(v) = env.get(name) {
            start[i] = Some(v.clone());
        }
    }
    let order: Vec<(usize, compile::CLit)> = probe.body.iter().cloned().map(|l| (0, l)).collect();
    let mut result: Option<Substitution> = None;
    let mut eval = BodyEval::new(&probe);
    let mut db = ModelDb(model);
    eval.run(&order, &mut start, &mut db, &mut |e| {
        let mut sub = env.clone();
        if let Literal::Count { result: Term::Var(r), .. } = count {
            if let Some(i) = probe.var_names.iter().position(|n| n == r) {
                if let Some(v) = &e[i] {
                    sub.insert(r.clone(), v.clone());
                }
            }
        }
        result = Some(sub);
        Ok(false)
    })?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_lang::parse_str;

    fn program(src: &str) -> PolicyProgram {
        parse_str(src).unwrap()
    }

    fn atoms(fb: &FactBase, pred: &str) -> Vec<String> {
        fb.atoms().into_iter().filter(|(k, _)| &*k.name == pred).map(|(k, t)| display_tuple(&k.name, &t)).collect()
    }

    #[test]
    fn one_step_derivation() {
        let p = program("empower(john, prof). p(X) :- empower(X, prof).");
        let m = saturate(&p, &FactBase::new()).unwrap();
        assert_eq!(atoms(&m, "p"), vec!["p(john)"]);
    }

    #[test]
    fn transitive_closure_and_negation() {
        let p = program(
            "e(a, b). e(b, c). e(c, d). n(a). n(b). n(c). n(d).
             t(X, Y) :- e(X, Y). t(X, Z) :- t(X, Y), e(Y, Z).
             src(X) :- n(X), not t(_, X).",
        );
        let m = saturate(&p, &FactBase::new()).unwrap();
        assert_eq!(atoms(&m, "t").len(), 6);
        assert_eq!(atoms(&m, "src"), vec!["src(a)"]);
    }

    #[test]
    fn counting() {
        let p = program(
            "g(j, l1). g(j, l2). g(m, l3). who(j). who(m). who(z).
             n(S, N) :- who(S), count(L, g(S, L), N).",
        );
        let m = saturate(&p, &FactBase::new()).unwrap();
        assert_eq!(atoms(&m, "n"), vec!["n(j, 2)", "n(m, 1)", "n(z, 0)"]);
    }

    #[test]
    fn saturation_is_idempotent() {
        let p = program("e(a, b). e(b, a). t(X, Y) :- e(X, Y). t(X, Z) :- t(X, Y), t(Y, Z).");
        let m = saturate(&p, &FactBase::new()).unwrap();
        let again = saturate(&p, &m).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn fact_limit() {
        let p = program("n(0). n(1). n(2). n(3). p(A, B, C) :- n(A), n(B), n(C).");
        let err = saturate_with_limit(&p, &FactBase::new(), 10).unwrap_err();
        assert_eq!(err, Error::ResourceLimit { limit: 10 });
    }

    #[test]
    fn goal_directed_agrees_with_saturation() {
        let p = program(
            "e(a, b). e(b, c). e(c, a). e(d, e). n(a). n(b). n(c). n(d). n(e).
             t(X, Y) :- e(X, Y). t(X, Z) :- e(X, Y), t(Y, Z).
             cyc(X) :- t(X, X). acyc(X) :- n(X), not cyc(X).",
        );
        let goal = Atom::new("acyc", vec![Term::var("X")]);
        let subs = query_goal(&p, &FactBase::new(), &goal).unwrap();
        let xs: Vec<String> = subs.iter().map(|s| s[&sym("X")].to_string()).collect();
        assert_eq!(xs, vec!["d", "e"]);
        let ground = Atom::new("t", vec![Term::sym("a"), Term::sym("a")]);
        assert_eq!(query_goal(&p, &FactBase::new(), &ground).unwrap(), vec![Substitution::new()]);
        let no = Atom::new("t", vec![Term::sym("d"), Term::sym("a")]);
        assert!(query_goal(&p, &FactBase::new(), &no).unwrap().is_empty());
    }

    #[test]
    fn empty_program_has_no_answers() {
        let goal = Atom::new("permission", vec![Term::var("A"), Term::var("B"), Term::var("C"), Term::var("D")]);
        assert!(query_goal(&PolicyProgram::new(), &FactBase::new(), &goal).unwrap().is_empty());
    }

    #[test]
    fn uninstantiated_context_is_reported() {
        let p = program(
            "d(a). hold(S, A, O, c) :- d(S), d(A), d(O).
             p(X) :- d(X), hold(X, X, X, C).",
        );
        assert!(!validate_program(&p).safety_violations.is_empty());
        let rules = RuleSet::new(p.rules()).unwrap();
        let base = FactBase::from_atoms(p.facts()).unwrap();
        let err = rules.solve(&base, &rules.idb(), &PredKey::new("p", 1), &[None], 100).unwrap_err();
        assert!(matches!(err, Error::UninstantiatedContext(_)), "{err}");
    }

    #[test]
    fn count_evaluation() {
        let mut m = FactBase::new();
        m.insert("g", vec![Value::sym("john"), Value::sym("l1")]);
        let lit = match &parse_str("q(N) :- count(L, g(S, L), N).").unwrap().rules().next().unwrap().body[0] {
            l @ Literal::Count { .. } => l.clone(),
            _ => unreachable!(),
        };
        let mut env = Substitution::new();
        env.insert(sym("S"), Value::sym("john"));
        let out = eval_count(&env, &lit, &m).unwrap().unwrap();
        assert_eq!(out[&sym("N")], Value::Int(1));
        env.insert(sym("S"), Value::sym("mary"));
        let out = eval_count(&env, &lit, &m).unwrap().unwrap();
        assert_eq!(out[&sym("N")], Value::Int(0));
    }

    #[test]
    fn proofs_are_well_founded() {
        let p = program("e(a, b). e(b, c). t(X, Y) :- e(X, Y). t(X, Z) :- t(X, Y), e(Y, Z).");
        let rules = RuleSet::new(p.rules()).unwrap();
        let m = rules.saturate(FactBase::from_atoms(p.facts()).unwrap(), &HashSet::new(), 100).unwrap();
        let proof = rules.prove(&m, &PredKey::new("t", 2), &[Value::sym("a"), Value::sym("c")]).unwrap();
        assert_eq!(proof.atom, "t(a, c)");
        assert!(matches!(proof.why, Justification::Rule(_)));
        assert_eq!(proof.children.len(), 2);
        assert_eq!(proof.children[0].atom, "t(a, b)");
        assert_eq!(proof.post_order().last().unwrap().1.atom, "t(a, c)");
    }
}

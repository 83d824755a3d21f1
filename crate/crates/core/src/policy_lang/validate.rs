use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::ast::*;
use crate::datalog::{stratify_rules, CycleWitness, DepGraph, Strata};

/// A rule together with the variable that makes it unsafe or undefined.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub variable: Symbol,
    pub detail: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rule.line > 0 {
            write!(f, "line {}: ", self.rule.line)?;
        }
        write!(f, "`{}`: variable {} {}", self.rule, self.variable, self.detail)
    }
}

/// Outcome of [`validate_program`](super::validate_program).
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub safety_violations: Vec<Violation>,
    pub definedness_violations: Vec<Violation>,
    pub stratification: Result<Strata, CycleWitness>,
}

impl ValidationReport {
    /// True iff the program is safe, defined and stratified.
    pub fn is_empty(&self) -> bool {
        self.safety_violations.is_empty() && self.definedness_violations.is_empty() && self.stratification.is_ok()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.safety_violations {
            writeln!(f, "unsafe: {v}")?;
        }
        for v in &self.definedness_violations {
            writeln!(f, "undefined: {v}")?;
        }
        match &self.stratification {
            Ok(strata) => {
                if self.is_empty() {
                    writeln!(f, "ok: {} stratum(s)", strata.len().max(1))?;
                }
            }
            Err(w) => writeln!(f, "not stratifiable: {w}")?,
        }
        Ok(())
    }
}

fn atom_vars(a: &Atom) -> BTreeSet<Symbol> {
    a.vars()
}

fn term_vars(t: &Term) -> BTreeSet<Symbol> {
    let mut out = BTreeSet::new();
    t.collect_vars(&mut out);
    out
}

fn lit_vars(l: &Literal) -> BTreeSet<Symbol> {
    let mut out = BTreeSet::new();
    l.collect_vars(&mut out);
    out
}

/// Variables bound by positive (non-context) literals, count results and
/// equalities with a bound side.
fn binders(lits: &[Literal], mut bound: BTreeSet<Symbol>) -> BTreeSet<Symbol> {
    for l in lits {
        match l {
            Literal::Pos(a) if !a.is_context_literal() => bound.extend(atom_vars(a)),
            Literal::Count { result, .. } => bound.extend(term_vars(result)),
            _ => {}
        }
    }
    loop {
        let before = bound.len();
        for l in lits {
            if let Literal::Cmp(lhs, CmpOp::Eq, rhs) = l {
                let (lv, rv) = (term_vars(lhs), term_vars(rhs));
                if lv.is_subset(&bound) {
                    bound.extend(rv.iter().cloned());
                }
                if rv.is_subset(&bound) {
                    bound.extend(lv);
                }
            }
        }
        if bound.len() == before {
            return bound;
        }
    }
}

struct RuleCheck<'a> {
    rule: &'a Rule,
    out: Vec<Violation>,
}

impl RuleCheck<'_> {
    fn flag(&mut self, vars: impl IntoIterator<Item = Symbol>, bound: &BTreeSet<Symbol>, detail: &'static str) {
        for v in vars {
            if !bound.contains(&v) && !self.out.iter().any(|x| x.variable == v && x.detail == detail) {
                self.out.push(Violation { rule: self.rule.clone(), variable: v, detail });
            }
        }
    }

    fn literals(&mut self, lits: &[Literal], bound: &BTreeSet<Symbol>, elsewhere: &dyn Fn(&Symbol) -> bool) {
        for l in lits {
            match l {
                Literal::Pos(a) if a.is_context_literal() => {
                    self.flag(atom_vars(a), bound, "must be bound before the context literal")
                }
                Literal::Pos(_) => {}
                Literal::Neg(a) => self.flag(atom_vars(a), bound, "occurs only under negation"),
                Literal::Cmp(..) => self.flag(lit_vars(l), bound, "occurs only in a comparison"),
                Literal::Count { var, goal, .. } => {
                    let mut goal_vars = BTreeSet::new();
                    for g in goal {
                        g.collect_vars(&mut goal_vars);
                    }
                    let outer: BTreeSet<Symbol> =
                        goal_vars.iter().filter(|v| *v != var && elsewhere(v)).cloned().collect();
                    self.flag(outer.iter().cloned(), bound, "must be bound outside the count");
                    let inner = binders(goal, bound.clone());
                    if &**var != "_" {
                        self.flag([var.clone()], &inner, "is counted but not bound by the goal");
                    }
                    self.literals(goal, &inner, &|_| false);
                }
            }
        }
    }
}

fn occurs_outside(rule: &Rule, skip: usize, v: &Symbol) -> bool {
    rule.head.vars().contains(v)
        || rule.body.iter().enumerate().any(|(i, l)| i != skip && lit_vars(l).contains(v))
}

fn safety(rule: &Rule, recursive: bool) -> Vec<Violation> {
    let is_context_rule = rule.head.is_context_literal();
    let initial = if is_context_rule { rule.head.vars() } else { BTreeSet::new() };
    let bound = binders(&rule.body, initial);
    let mut check = RuleCheck { rule, out: Vec::new() };
    for (i, lit) in rule.body.iter().enumerate() {
        check.literals(std::slice::from_ref(lit), &bound, &|v| occurs_outside(rule, i, v));
    }
    if recursive {
        for t in &rule.head.args {
            if t.is_constructor_template() {
                check.flag(term_vars(t), &BTreeSet::new(), "builds a context in a recursive rule");
            }
        }
    }
    check.out
}

fn definedness(rule: &Rule) -> Vec<Violation> {
    if rule.head.is_context_literal() {
        return Vec::new();
    }
    let body = rule.body_vars();
    let mut out: Vec<Violation> = rule
        .head
        .vars()
        .into_iter()
        .filter(|v| !body.contains(v))
        .map(|v| Violation { rule: rule.clone(), variable: v, detail: "appears in the conclusion only" })
        .collect();
    if rule.head.args.iter().any(Term::has_anonymous) {
        out.push(Violation { rule: rule.clone(), variable: sym("_"), detail: "appears in the conclusion only" });
    }
    out
}

pub(crate) fn validate(program: &PolicyProgram) -> ValidationReport {
    let mut rules: Vec<Rule> = Vec::new();
    let mut facts: Vec<Rule> = Vec::new();
    for (stmt, &line) in program.statements.iter().zip(&program.lines) {
        match stmt {
            Statement::Rule(r) => {
                let mut r = r.clone();
                if r.line == 0 {
                    r.line = line;
                }
                rules.push(r);
            }
            Statement::Fact(a) => {
                let mut r = Rule::new(a.clone(), Vec::new());
                r.line = line;
                facts.push(r);
            }
            Statement::Directive(_) => {}
        }
    }
    let graph = DepGraph::new(rules.iter());
    let mut component: HashMap<PredKey, usize> = HashMap::new();
    for (ci, comp) in graph.sccs().iter().enumerate() {
        for &v in comp {
            component.insert(graph.nodes[v].clone(), ci);
        }
    }
    let recursive = |r: &Rule| {
        let hc = component.get(&r.head.key());
        r.body.iter().flat_map(|l| l.dependencies()).any(|(a, _)| component.get(&a.key()) == hc)
    };
    let mut safety_violations = Vec::new();
    let mut definedness_violations = Vec::new();
    for r in &rules {
        safety_violations.extend(safety(r, recursive(r)));
        definedness_violations.extend(definedness(r));
    }
    for f in &facts {
        definedness_violations.extend(definedness(f));
    }
    ValidationReport { safety_violations, definedness_violations, stratification: stratify_rules(rules.iter()) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_lang::parse_str;

    fn report(src: &str) -> ValidationReport {
        validate(&parse_str(src).unwrap())
    }

    fn vars(vs: &[Violation]) -> Vec<String> {
        vs.iter().map(|v| v.variable.to_string()).collect()
    }

    #[test]
    fn unsafe_negation() {
        let r = report("a(X) :- not b(X).");
        assert_eq!(vars(&r.safety_violations), vec!["X"]);
        assert!(!r.is_empty());
    }

    #[test]
    fn unsafe_comparison() {
        let r = report("a(X) :- d(X), Y < 3.");
        assert_eq!(vars(&r.safety_violations), vec!["Y"]);
    }

    #[test]
    fn undefined_head_variable() {
        let r = report("permission(X) :- q(Y).");
        assert_eq!(vars(&r.definedness_violations), vec!["X"]);
        assert!(r.safety_violations.is_empty());
    }

    #[test]
    fn facts_with_variables_are_undefined() {
        let r = report("p(X).");
        assert_eq!(vars(&r.definedness_violations), vec!["X"]);
    }

    #[test]
    fn count_scoping() {
        assert!(report("n(S, N) :- who(S), count(L, g(S, L), N).").is_empty());
        let r = report("n(N) :- count(L, g(S, L), N), h(S).");
        assert!(r.is_empty(), "{r}");
        let r = report("n(S, N) :- count(L, g(S, L), N).");
        assert_eq!(vars(&r.safety_violations), vec!["S"]);
        let r = report("n(N) :- count(L, not g(L), N).");
        assert!(vars(&r.safety_violations).contains(&"L".to_string()));
    }

    #[test]
    fn context_rules_treat_head_as_bound() {
        let r = report("hold(S, A, L, gd) :- use(L, license_delegation), grantor(L, S).");
        assert!(r.is_empty(), "{r}");
        let r = report("p(X) :- d(X), hold(X, a, o, C).");
        assert_eq!(vars(&r.safety_violations), vec!["C"]);
    }

    #[test]
    fn recursive_context_constructors_rejected() {
        let r = report("c(X & k) :- c(X).");
        assert_eq!(vars(&r.safety_violations), vec!["X"]);
        assert!(report("p(X & k) :- c(X).").is_empty());
    }

    #[test]
    fn stratification_witness() {
        let r = report("p(X) :- not q(X), d(X). q(X) :- not p(X), d(X).");
        assert!(r.safety_violations.is_empty() && r.definedness_violations.is_empty());
        let w = r.stratification.unwrap_err();
        assert_eq!(w.predicates().len(), 2);
    }
}

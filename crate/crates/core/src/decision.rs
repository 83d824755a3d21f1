//! Access decisions: applicable permissions and prohibitions, context
//! evaluation, priority-based conflict resolution and derivation traces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::ast::*;
use crate::datalog::{Justification, ProofNode, Tuple};
use crate::error::{Error, Result};
use crate::orbac::{Snapshot, DELEGATE, GRANT_OPTION_LICENSE, MAX_PRIORITY, VALID_DELEG};

/// Priority level of an authorization. `Max` is above every finite level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Priority {
    Finite(u64),
    Max,
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Priority::Finite(n) => write!(f, "{n}"),
            Priority::Max => f.write_str(MAX_PRIORITY),
        }
    }
}

impl Priority {
    fn from_value(v: &Value) -> Option<Priority> {
        match v {
            Value::Int(n) if *n >= 0 => Some(Priority::Finite(*n as u64)),
            Value::Sym(s) if &**s == MAX_PRIORITY => Some(Priority::Max),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Allow,
    Deny,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Allow => "allow",
            Verdict::Deny => "deny",
        })
    }
}

/// Permission or prohibition. Prohibitions sort first so that they win ties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Prohibition,
    Permission,
}

impl Side {
    fn predicate(self) -> &'static str {
        match self {
            Side::Permission => "permission",
            Side::Prohibition => "prohibition",
        }
    }
}

/// Winner name of a decision with no applicable authorization.
pub const DEFAULT_DENY: &str = "default-deny";

/// An authorization that applied to the query's subject, action and object,
/// with the outcome of its context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Considered {
    pub atom: String,
    pub side: Side,
    pub priority: Priority,
    pub context: Value,
    pub holds: bool,
    /// The first conjunct found not to hold.
    pub failed: Option<Value>,
}

/// One line of a derivation trace, premises before conclusions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub depth: usize,
    pub atom: String,
    pub justification: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub subject: Symbol,
    pub action: Symbol,
    pub object: Symbol,
    pub at: Timestamp,
    pub verdict: Verdict,
    /// The winning authorization atom, or [`DEFAULT_DENY`].
    pub winner: String,
    pub priority: Priority,
    pub trace: Vec<TraceStep>,
    pub proof: Option<ProofNode>,
    pub considered: Vec<Considered>,
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        self.verdict == Verdict::Allow
    }

    /// Stable text record: one `field: value` line per field, then the trace.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("subject: {}\n", self.subject));
        out.push_str(&format!("action: {}\n", self.action));
        out.push_str(&format!("object: {}\n", self.object));
        out.push_str(&format!("at: {}\n", format_timestamp(&self.at)));
        out.push_str(&format!("verdict: {}\n", self.verdict));
        out.push_str(&format!("winner: {}\n", self.winner));
        out.push_str(&format!("priority: {}\n", self.priority));
        out.push_str("trace:\n");
        for step in &self.trace {
            out.push_str(&format!("  {}{} [{}]\n", "  ".repeat(step.depth), step.atom, step.justification));
        }
        out
    }
}

fn justification_text(j: &Justification) -> String {
    match j {
        Justification::Fact => "fact".into(),
        Justification::Rule(r) => format!("by {r}"),
        Justification::Check => "check".into(),
        Justification::Elided => "...".into(),
    }
}

fn flatten(proof: &ProofNode) -> Vec<TraceStep> {
    proof
        .post_order()
        .into_iter()
        .map(|(depth, n)| TraceStep { depth, atom: n.atom.clone(), justification: justification_text(&n.why) })
        .collect()
}

/// Renders a decision as an indented proof tree.
pub fn explain(d: &Decision) -> String {
    let mut out = format!(
        "{} {} {} {} at {}: {} ({}, priority {})\n",
        d.subject,
        d.action,
        d.object,
        if d.is_allow() { "is permitted" } else { "is not permitted" },
        format_timestamp(&d.at),
        d.verdict,
        d.winner,
        d.priority
    );
    match &d.proof {
        Some(p) => out.push_str(&p.to_string()),
        None => out.push_str("no applicable authorization holds\n"),
    }
    for c in d.considered.iter().filter(|c| !c.holds) {
        let failed = c.failed.as_ref().map(|f| f.to_string()).unwrap_or_else(|| c.context.to_string());
        out.push_str(&format!("not applied: {} (context {failed} does not hold)\n", c.atom));
    }
    out
}

struct Candidate {
    side: Side,
    pred: &'static str,
    tuple: Tuple,
    priority: Priority,
    /// Proof obligations that make the authorization apply to the query.
    reasons: Vec<(&'static str, Vec<Value>)>,
}

struct CtxOutcome {
    holds: bool,
    failed: Option<Value>,
    proofs: Vec<ProofNode>,
}

type DelegLookup<'f> = dyn FnMut(&Symbol) -> Result<(bool, Option<ProofNode>)> + 'f;

/// A query for one action, object and instant. Subjects vary: the
/// `valid_deleg` fixpoint evaluates several of them.
struct Query<'s> {
    snap: &'s Snapshot,
    action: Symbol,
    object: Symbol,
    at: Timestamp,
    privileges: BTreeMap<Value, Vec<(&'static str, Vec<Value>)>>,
    targets: BTreeMap<Value, Vec<(&'static str, Vec<Value>)>>,
}

impl<'s> Query<'s> {
    fn new(snap: &'s Snapshot, action: &str, object: &str, at: Timestamp) -> Result<Self> {
        let a = Value::sym(action);
        let o = Value::sym(object);
        let mut privileges = BTreeMap::new();
        privileges.insert(a.clone(), Vec::new());
        for p in snap.lookup("sub_privilege", &[Some(a.clone()), None])? {
            privileges.entry(p[1].clone()).or_insert_with(|| vec![("sub_privilege", p.to_vec())]);
        }
        let mut targets = BTreeMap::new();
        let mut visiting = BTreeSet::new();
        Self::collect_targets(snap, action == DELEGATE, &o, Vec::new(), &mut targets, &mut visiting)?;
        Ok(Query { snap, action: sym(action), object: sym(object), at, privileges, targets })
    }

    /// Everything an authorization may name as target to apply to `o`:
    /// `o` itself, its super-views, the views using it, the licenses it
    /// refines (for delegation) and, for a grant option, the targets of the
    /// license it grants on.
    fn collect_targets(
        snap: &Snapshot,
        delegation: bool,
        o: &Value,
        prefix: Vec<(&'static str, Vec<Value>)>,
        out: &mut BTreeMap<Value, Vec<(&'static str, Vec<Value>)>>,
        visiting: &mut BTreeSet<Value>,
    ) -> Result<()> {
        if !visiting.insert(o.clone()) {
            return Ok(());
        }
        out.entry(o.clone()).or_insert_with(|| prefix.clone());
        let with = |pred: &'static str, t: &Tuple| {
            let mut r = prefix.clone();
            r.push((pred, t.to_vec()));
            r
        };
        for t in snap.lookup("sub_target", &[Some(o.clone()), None])? {
            out.entry(t[1].clone()).or_insert_with(|| with("sub_target", &t));
        }
        if delegation {
            for t in snap.lookup("sub_license", &[Some(o.clone()), None])? {
                out.entry(t[1].clone()).or_insert_with(|| with("sub_license", &t));
            }
        }
        if snap.model().contains("use", &[o.clone(), Value::sym(GRANT_OPTION_LICENSE)]) {
            for t in snap.lookup("target", &[Some(o.clone()), None])? {
                Self::collect_targets(snap, delegation, &t[1], with("target", &t), out, visiting)?;
            }
        }
        Ok(())
    }

    fn groups(&self, s: &Symbol) -> Result<BTreeMap<Value, Vec<(&'static str, Vec<Value>)>>> {
        let sv = Value::Sym(s.clone());
        let mut out = BTreeMap::new();
        out.insert(sv.clone(), Vec::new());
        for t in self.snap.lookup("empower", &[Some(sv), None])? {
            out.entry(t[1].clone()).or_insert_with(|| vec![("empower", t.to_vec())]);
        }
        Ok(out)
    }

    fn candidates(&self, s: &Symbol) -> Result<Vec<Candidate>> {
        let mut out = Vec::new();
        for (g, g_reason) in self.groups(s)? {
            for side in [Side::Prohibition, Side::Permission] {
                for arity in [4, 5] {
                    let mut pattern = vec![None; arity];
                    pattern[0] = Some(g.clone());
                    let mut tuples = self.snap.lookup(side.predicate(), &pattern)?;
                    tuples.sort();
                    for t in tuples {
                        let (Some(p_reason), Some(t_reason)) = (self.privileges.get(&t[1]), self.targets.get(&t[2])) else {
                            continue;
                        };
                        let priority = if arity == 4 {
                            Priority::Finite(self.snap.default_priority())
                        } else {
                            Priority::from_value(&t[4]).ok_or_else(|| {
                                Error::InvalidRequest(format!("invalid priority in {}", display_tuple(side.predicate(), &t)))
                            })?
                        };
                        let reasons = g_reason.iter().chain(p_reason).chain(t_reason).cloned().collect();
                        out.push(Candidate { side, pred: side.predicate(), tuple: t, priority, reasons });
                    }
                }
            }
        }
        Ok(out)
    }

    fn hold_atom(&self, s: &Symbol, c: &Value) -> String {
        display_tuple(
            CONTEXT_PREDICATE,
            &[Value::Sym(s.clone()), Value::Sym(self.action.clone()), Value::Sym(self.object.clone()), c.clone()],
        )
    }

    fn eval_ctx(&self, s: &Symbol, c: &Value, deleg: &mut DelegLookup<'_>) -> Result<CtxOutcome> {
        if c.is_nominal() {
            return Ok(CtxOutcome { holds: true, failed: None, proofs: Vec::new() });
        }
        if let Value::Ctx(ctx) = c {
            match &**ctx {
                Context::And(parts) => {
                    let mut proofs = Vec::new();
                    for p in parts {
                        let r = self.eval_ctx(s, p, deleg)?;
                        proofs.extend(r.proofs);
                        if !r.holds {
                            return Ok(CtxOutcome { holds: false, failed: r.failed, proofs });
                        }
                    }
                    return Ok(CtxOutcome { holds: true, failed: None, proofs });
                }
                Context::Param(name, args) if &**name == VALID_DELEG => {
                    if let [Value::Sym(g)] = args.as_slice() {
                        let (holds, sub) = deleg(g)?;
                        let node = ProofNode {
                            atom: self.hold_atom(s, c),
                            why: Justification::Rule("valid_deleg context".into()),
                            children: sub.into_iter().collect(),
                        };
                        return Ok(CtxOutcome { holds, failed: (!holds).then(|| c.clone()), proofs: vec![node] });
                    }
                }
                _ => {}
            }
        }
        let name = c.context_name().ok_or_else(|| Error::UnknownContext(c.to_string()))?;
        if let (Value::Sym(_), Some((start, end))) = (c, self.snap.temporal(name)) {
            let holds = start <= self.at && self.at <= end;
            let node = ProofNode::leaf(
                format!(
                    "{} during [{}, {}]",
                    self.hold_atom(s, c),
                    format_timestamp(&start),
                    format_timestamp(&end)
                ),
                Justification::Check,
            );
            return Ok(CtxOutcome { holds, failed: (!holds).then(|| c.clone()), proofs: vec![node] });
        }
        if !self.snap.knows_context(name) {
            return Err(Error::UnknownContext(c.to_string()));
        }
        let args = [Value::Sym(s.clone()), Value::Sym(self.action.clone()), Value::Sym(self.object.clone()), c.clone()];
        let holds = self.snap.holds(CONTEXT_PREDICATE, &args)?;
        let node = ProofNode::leaf(self.hold_atom(s, c), Justification::Rule(format!("{name} context")));
        Ok(CtxOutcome { holds, failed: (!holds).then(|| c.clone()), proofs: vec![node] })
    }

    fn prove(&self, pred: &str, tuple: &[Value]) -> ProofNode {
        let key = PredKey::new(pred, tuple.len());
        let proof = if self.snap.is_tabled(&key) { None } else { self.snap.rules().prove(self.snap.model(), &key, tuple) };
        proof.unwrap_or_else(|| ProofNode::leaf(display_tuple(pred, tuple), Justification::Check))
    }

    fn decide_once(&self, s: &Symbol, deleg: &mut DelegLookup<'_>) -> Result<Decision> {
        let mut considered = Vec::new();
        let mut best: Option<(Priority, Side, Candidate, Vec<ProofNode>)> = None;
        for cand in self.candidates(s)? {
            let context = cand.tuple[3].clone();
            let r = self.eval_ctx(s, &context, deleg)?;
            considered.push(Considered {
                atom: display_tuple(cand.pred, &cand.tuple),
                side: cand.side,
                priority: cand.priority,
                context,
                holds: r.holds,
                failed: r.failed,
            });
            if !r.holds {
                continue;
            }
            let better = match &best {
                None => true,
                Some((p, side, ..)) => (cand.priority, std::cmp::Reverse(cand.side)) > (*p, std::cmp::Reverse(*side)),
            };
            if better {
                best = Some((cand.priority, cand.side, cand, r.proofs));
            }
        }
        let base = Decision {
            subject: s.clone(),
            action: self.action.clone(),
            object: self.object.clone(),
            at: self.at,
            verdict: Verdict::Deny,
            winner: DEFAULT_DENY.to_string(),
            priority: Priority::Finite(0),
            trace: Vec::new(),
            proof: None,
            considered,
        };
        let Some((priority, side, cand, ctx_proofs)) = best else { return Ok(base) };
        let verdict = if side == Side::Permission { Verdict::Allow } else { Verdict::Deny };
        let mut children = vec![self.prove(cand.pred, &cand.tuple)];
        children.extend(cand.reasons.iter().map(|(p, t)| self.prove(p, t)));
        children.extend(ctx_proofs);
        let root = ProofNode {
            atom: display_tuple(
                &verdict.to_string(),
                &[Value::Sym(s.clone()), Value::Sym(self.action.clone()), Value::Sym(self.object.clone())],
            ),
            why: Justification::Rule(format!("{} with priority {priority}", side.predicate())),
            children,
        };
        Ok(Decision {
            verdict,
            winner: display_tuple(cand.pred, &cand.tuple),
            priority,
            trace: flatten(&root),
            proof: Some(root),
            ..base
        })
    }

    /// Least fixpoint of the `valid_deleg` dependencies reachable from `s`:
    /// unknown verdicts start at deny and are re-evaluated until stable.
    fn fixpoint(&self, s: &Symbol) -> Result<HashMap<Symbol, bool>> {
        let mut assumed: HashMap<Symbol, bool> = HashMap::new();
        let mut rounds = 0;
        loop {
            let mut results: HashMap<Symbol, bool> = HashMap::new();
            let mut requested: BTreeSet<Symbol> = BTreeSet::new();
            let mut work = vec![s.clone()];
            while let Some(x) = work.pop() {
                if results.contains_key(&x) {
                    continue;
                }
                let mut asked = Vec::new();
                let d = self.decide_once(&x, &mut |g: &Symbol| {
                    asked.push(g.clone());
                    Ok((assumed.get(g).copied().unwrap_or(false), None))
                })?;
                results.insert(x, d.is_allow());
                requested.extend(asked.iter().cloned());
                work.extend(asked);
            }
            if requested.iter().all(|g| assumed.get(g).copied().unwrap_or(false) == results[g]) {
                return Ok(results);
            }
            rounds += 1;
            if rounds > results.len() + self.snap.config().fixpoint_slack {
                return Err(Error::NonMonotoneContext(format!("{s} {} {}", self.action, self.object)));
            }
            assumed = results;
        }
    }

    /// The decision for `s` under fixpoint verdicts, with the proofs of the
    /// `valid_deleg` premises attached.
    fn render(
        &self,
        s: &Symbol,
        verdicts: &HashMap<Symbol, bool>,
        stack: &mut Vec<Symbol>,
        done: &mut HashMap<Symbol, Option<ProofNode>>,
    ) -> Result<Decision> {
        stack.push(s.clone());
        let d = self.decide_once(s, &mut |g: &Symbol| {
            let v = verdicts.get(g).copied().unwrap_or(false);
            if !v || stack.contains(g) {
                return Ok((v, None));
            }
            if let Some(p) = done.get(g) {
                return Ok((v, p.clone()));
            }
            let sub = self.render(g, verdicts, stack, done)?.proof;
            done.insert(g.clone(), sub.clone());
            Ok((v, sub))
        });
        stack.pop();
        d
    }
}

fn check_entities(s: &str, a: &str, o: &str, snap: &Snapshot) -> Result<()> {
    let reg = snap.registry();
    let check = |name: &str, expected: &'static str, fine: &[&str]| -> Result<()> {
        let sorts = reg.sorts_of(name);
        if sorts.is_empty() || sorts.iter().any(|x| fine.contains(x)) {
            return Ok(());
        }
        Err(Error::UnknownEntity { name: name.to_string(), expected, found: sorts[0] })
    };
    check(s, "subject", &["subject", "object"])?;
    check(a, "action", &["action", "activity"])?;
    check(o, "object", &["object", "view"])
}

/// Decides whether subject `s` may perform action `a` on object `o` at
/// `at`. The applicable authorization of highest priority whose context
/// holds wins; prohibitions win ties; with none, access is denied.
pub fn is_permitted(s: &str, a: &str, o: &str, at: Timestamp, snap: &Snapshot) -> Result<Decision> {
    check_entities(s, a, o, snap)?;
    let q = Query::new(snap, a, o, at)?;
    let subject = sym(s);
    let verdicts = q.fixpoint(&subject)?;
    q.render(&subject, &verdicts, &mut Vec::new(), &mut HashMap::new())
}

/// Whether context `c` holds for `(s, a, o)` at `at`.
pub fn context_holds(s: &str, a: &str, o: &str, c: &Value, at: Timestamp, snap: &Snapshot) -> Result<bool> {
    let q = Query::new(snap, a, o, at)?;
    let r = q.eval_ctx(&sym(s), c, &mut |g: &Symbol| {
        let verdicts = q.fixpoint(g)?;
        Ok((verdicts[g], None))
    })?;
    Ok(r.holds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbac::{EngineConfig, PolicyState};
    use crate::policy_lang::SourcePolicy;

    fn at() -> Timestamp {
        parse_timestamp("2024-01-01T12:00:00Z").unwrap()
    }

    fn state(text: &str) -> PolicyState {
        PolicyState::from_source(&SourcePolicy::new(text, "test"), EngineConfig::default()).unwrap()
    }

    #[test]
    fn empty_policy_denies_by_default() {
        let st = PolicyState::empty(EngineConfig::default()).unwrap();
        let d = is_permitted("ann", "read", "doc", at(), &st.snapshot()).unwrap();
        assert_eq!(d.verdict, Verdict::Deny);
        assert_eq!(d.winner, DEFAULT_DENY);
        assert_eq!(d.priority, Priority::Finite(0));
        assert!(d.trace.is_empty());
    }

    #[test]
    fn record_fields_are_ordered() {
        let st = state("empower(ann, staff). use(doc, files). permission(staff, read, files, nominal).");
        let d = is_permitted("ann", "read", "doc", at(), &st.snapshot()).unwrap();
        let record = d.to_record();
        let keys: Vec<&str> = record.lines().take(8).map(|l| l.split(':').next().unwrap()).collect();
        assert_eq!(keys, ["subject", "action", "object", "at", "verdict", "winner", "priority", "trace"]);
        assert!(record.contains("verdict: allow\n"));
    }

    #[test]
    fn max_prohibition_beats_any_finite_permission() {
        let st = state(
            "empower(ann, staff). use(doc, files). permission(staff, read, files, nominal, 1000).
             use(l1, license_transfer). grantor(l1, ann). grantee(l1, bob). privilege(l1, read). target(l1, files). context(l1, nominal).",
        );
        let d = is_permitted("ann", "read", "doc", at(), &st.snapshot()).unwrap();
        assert_eq!(d.verdict, Verdict::Deny);
        assert_eq!(d.priority, Priority::Max);
        assert!(explain(&d).contains("transfer prohibition"));
    }

    #[test]
    fn ties_go_to_the_prohibition() {
        let st = state(
            "empower(ann, staff). use(doc, files).
             permission(staff, read, files, nominal, 3). prohibition(staff, read, doc, nominal, 3).",
        );
        let d = is_permitted("ann", "read", "doc", at(), &st.snapshot()).unwrap();
        assert_eq!(d.verdict, Verdict::Deny);
        assert_eq!(d.priority, Priority::Finite(3));
    }
}

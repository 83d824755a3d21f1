//! OrBAC vocabulary: the built-in administrative views, policy states and
//! snapshots, context evaluation and the license refinement relations.

mod builtins;
mod state;

use std::collections::{BTreeSet, HashSet, VecDeque};

pub use builtins::*;
pub use state::{PolicyState, Snapshot};

use crate::ast::*;
use crate::datalog::{FactBase, DEFAULT_FACT_LIMIT};
use crate::error::{Error, Result};

/// Which existing delegations count against a `max_multi_delegation` bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MultiDelegationMode {
    /// Delegations of which the candidate is a sub-license (equivalents
    /// included).
    #[default]
    Strict,
    /// Only delegations equivalent to the candidate.
    Equiv,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    pub multi_delegation: MultiDelegationMode,
    /// Cap on the number of facts in a saturated model.
    pub fact_limit: usize,
    /// Extra rounds allowed to the `valid_deleg` fixpoint beyond the number
    /// of subjects involved.
    pub fixpoint_slack: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { multi_delegation: MultiDelegationMode::Strict, fact_limit: DEFAULT_FACT_LIMIT, fixpoint_slack: 8 }
    }
}

/// Entities by sort, as far as the stored facts tell. Names are declared
/// implicitly by use.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityRegistry {
    pub subjects: BTreeSet<Symbol>,
    pub actions: BTreeSet<Symbol>,
    pub objects: BTreeSet<Symbol>,
    pub roles: BTreeSet<Symbol>,
    pub activities: BTreeSet<Symbol>,
    pub views: BTreeSet<Symbol>,
    pub contexts: BTreeSet<Symbol>,
}

impl EntityRegistry {
    pub fn from_model(model: &FactBase) -> Self {
        let mut r = EntityRegistry::default();
        let col = |pred: &str, i: usize| -> Vec<Symbol> {
            model.tuples(pred, 2).filter_map(|t| t[i].as_sym().cloned()).collect()
        };
        r.subjects.extend(col("empower", 0));
        r.subjects.extend(col("grantor", 1));
        r.subjects.extend(col("assignee", 1));
        r.roles.extend(col("empower", 1));
        r.roles.extend(col("assignment", 1));
        r.actions.extend(col("consider", 0));
        r.activities.extend(col("consider", 1));
        r.activities.extend(col("sub_activity", 1));
        r.objects.extend(col("use", 0));
        r.views.extend(col("use", 1));
        r.views.extend(col("sub_view", 0));
        r.views.extend(col("sub_view", 1));
        r.views.extend(ADMIN_VIEWS.iter().map(|v| sym(v)));
        for t in model.tuples("context", 2) {
            for c in t[1].conjuncts() {
                if let Some(n) = c.context_name() {
                    r.contexts.insert(n.clone());
                }
            }
        }
        r
    }

    /// Sort names a constant is registered under.
    pub fn sorts_of(&self, name: &str) -> Vec<&'static str> {
        let sets = [
            ("subject", &self.subjects),
            ("action", &self.actions),
            ("object", &self.objects),
            ("role", &self.roles),
            ("activity", &self.activities),
            ("view", &self.views),
            ("context", &self.contexts),
        ];
        sets.iter().filter(|(_, s)| s.contains(name)).map(|(n, _)| *n).collect()
    }
}

/// A view object carrying a license: the stored attributes of one id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LicenseObject {
    pub id: Symbol,
    pub views: Vec<Symbol>,
    pub grantee: Symbol,
    pub privilege: Symbol,
    pub target: Symbol,
    pub context: Value,
    pub grantor: Option<Symbol>,
    pub level: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleAssignmentObject {
    pub id: Symbol,
    pub views: Vec<Symbol>,
    pub assignee: Symbol,
    pub assignment: Symbol,
    pub grantor: Option<Symbol>,
}

fn required(snap: &Snapshot, id: &str, name: &'static str) -> Result<Value> {
    snap.attribute(id, name).ok_or_else(|| Error::MissingAttribute { id: id.to_string(), name })
}

fn required_sym(snap: &Snapshot, id: &str, name: &'static str) -> Result<Symbol> {
    match required(snap, id, name)? {
        Value::Sym(s) => Ok(s),
        _ => Err(Error::MissingAttribute { id: id.to_string(), name }),
    }
}

fn views_of(snap: &Snapshot, id: &str) -> Vec<Symbol> {
    let mut v: Vec<Symbol> = snap.successors("use", &Value::sym(id)).into_iter().filter_map(|v| v.as_sym().cloned()).collect();
    v.sort();
    v
}

impl LicenseObject {
    pub fn read(snap: &Snapshot, id: &str) -> Result<Self> {
        Ok(LicenseObject {
            id: sym(id),
            views: views_of(snap, id),
            grantee: required_sym(snap, id, "grantee")?,
            privilege: required_sym(snap, id, "privilege")?,
            target: required_sym(snap, id, "target")?,
            context: required(snap, id, "context")?,
            grantor: snap.attribute(id, "grantor").and_then(|v| v.as_sym().cloned()),
            level: snap.attribute(id, "level").and_then(|v| v.as_int()),
        })
    }
}

impl RoleAssignmentObject {
    pub fn read(snap: &Snapshot, id: &str) -> Result<Self> {
        Ok(RoleAssignmentObject {
            id: sym(id),
            views: views_of(snap, id),
            assignee: required_sym(snap, id, "assignee")?,
            assignment: required_sym(snap, id, "assignment")?,
            grantor: snap.attribute(id, "grantor").and_then(|v| v.as_sym().cloned()),
        })
    }
}

/// `o` is `o2`, a sub-view of it, or an object used in it.
pub fn sub_target(o: &str, o2: &str, snap: &Snapshot) -> bool {
    o == o2 || snap.model().contains("sub_target", &[Value::sym(o), Value::sym(o2)])
}

/// `p` is `p2`, implements it (`consider`), or reaches it through declared
/// `sub_activity` facts.
pub fn sub_privilege(p: &str, p2: &str, snap: &Snapshot) -> bool {
    p == p2 || snap.model().contains("sub_privilege", &[Value::sym(p), Value::sym(p2)])
}

/// `c` is at least as restrictive as `c2`: every conjunct of `c2` is a
/// conjunct of `c`, or declared `sub_context` facts connect them, or a chain
/// of both steps does.
pub fn sub_context(c: &Value, c2: &Value, snap: &Snapshot) -> bool {
    if c == c2 {
        return true;
    }
    let model = snap.model();
    let mut nodes: Vec<Value> = model.tuples(CONTEXT_VALUE, 1).map(|t| t[0].clone()).collect();
    nodes.push(c2.clone());
    let refines = |a: &Value, b: &Value| -> bool {
        let have = a.conjunct_set();
        b.conjuncts().iter().all(|x| have.contains(x)) || model.contains("sub_context", &[a.clone(), b.clone()])
    };
    let mut seen: HashSet<Value> = HashSet::from([c.clone()]);
    let mut queue = VecDeque::from([c.clone()]);
    while let Some(x) = queue.pop_front() {
        if refines(&x, c2) {
            return true;
        }
        for n in &nodes {
            if !seen.contains(n) && refines(&x, n) {
                seen.insert(n.clone());
                queue.push_back(n.clone());
            }
        }
    }
    false
}

/// Target, privilege and context of `l` each refine those of `l2`.
pub fn sub_license(l: &str, l2: &str, snap: &Snapshot) -> Result<bool> {
    let (a, b) = (LicenseTriple::read(snap, l)?, LicenseTriple::read(snap, l2)?);
    Ok(a.refines(&b, snap))
}

pub fn equiv_licenses(l: &str, l2: &str, snap: &Snapshot) -> Result<bool> {
    Ok(sub_license(l, l2, snap)? && sub_license(l2, l, snap)?)
}

/// The attributes that the refinement order compares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LicenseTriple {
    pub privilege: Symbol,
    pub target: Symbol,
    pub context: Value,
}

impl LicenseTriple {
    pub fn read(snap: &Snapshot, id: &str) -> Result<Self> {
        Ok(LicenseTriple {
            privilege: required_sym(snap, id, "privilege")?,
            target: required_sym(snap, id, "target")?,
            context: required(snap, id, "context")?,
        })
    }

    pub fn refines(&self, other: &LicenseTriple, snap: &Snapshot) -> bool {
        sub_target(&self.target, &other.target, snap)
            && sub_privilege(&self.privilege, &other.privilege, snap)
            && sub_context(&self.context, &other.context, snap)
    }
}

/// Whether context `c` holds for `(s, a, o)` at `at`.
pub fn hold_context(s: &str, a: &str, o: &str, c: &Value, at: Timestamp, snap: &Snapshot) -> Result<bool> {
    crate::decision::context_holds(s, a, o, c, at, snap)
}

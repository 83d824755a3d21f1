//! Delegation and revocation: guarded insertion of objects into the
//! delegation views and their deletion.
//!
//! A request is checked by inserting the candidate object into a scratch
//! copy of the state and asking whether the grantor may `delegate` that
//! object. View restrictions, sub-license inheritance and the delegation
//! contexts (`max_multi_delegation`, `valid_level`) are all decided by that
//! one query.

use crate::ast::*;
use crate::decision::{is_permitted, Decision, Side};
use crate::error::{Error, Result};
use crate::orbac::*;

/// Insertion of a license or role-assignment object into a delegation view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelegationRequest {
    pub grantor: Symbol,
    pub view: Symbol,
    pub attrs: ObjectAttrs,
    pub at: Timestamp,
    /// Identifier for the new object; generated when absent.
    pub id: Option<Symbol>,
}

impl DelegationRequest {
    pub fn license(
        grantor: &str,
        view: &str,
        grantee: &str,
        privilege: &str,
        target: &str,
        context: Value,
        at: Timestamp,
    ) -> Self {
        DelegationRequest {
            grantor: sym(grantor),
            view: sym(view),
            attrs: ObjectAttrs::License {
                grantee: sym(grantee),
                privilege: sym(privilege),
                target: sym(target),
                context,
            },
            at,
            id: None,
        }
    }

    pub fn role(grantor: &str, view: &str, assignee: &str, assignment: &str, at: Timestamp) -> Self {
        DelegationRequest {
            grantor: sym(grantor),
            view: sym(view),
            attrs: ObjectAttrs::Role { assignee: sym(assignee), assignment: sym(assignment) },
            at,
            id: None,
        }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = Some(sym(id));
        self
    }
}

/// Creation of a `grant_option_license` object: the grantee may delegate
/// `target` (or a sub-license of it) under `context & valid_level`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrantOptionRequest {
    pub grantor: Symbol,
    pub grantee: Symbol,
    pub target: Symbol,
    pub level: i64,
    pub context: Value,
    pub at: Timestamp,
    pub id: Option<Symbol>,
}

impl GrantOptionRequest {
    pub fn new(grantor: &str, grantee: &str, target: &str, level: i64, context: Value, at: Timestamp) -> Self {
        GrantOptionRequest { grantor: sym(grantor), grantee: sym(grantee), target: sym(target), level, context, at, id: None }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = Some(sym(id));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevocationRequest {
    pub actor: Symbol,
    pub object_id: Symbol,
    pub at: Timestamp,
}

impl RevocationRequest {
    pub fn new(actor: &str, object_id: &str, at: Timestamp) -> Self {
        RevocationRequest { actor: sym(actor), object_id: sym(object_id), at }
    }
}

fn fact(pred: &str, args: &[Value]) -> Atom {
    Atom::ground(pred, args)
}

fn in_family(snap: &Snapshot, view: &Symbol, root: &str) -> bool {
    &**view == root || snap.model().contains("sub_view", &[Value::Sym(view.clone()), Value::sym(root)])
}

/// Runs a request; a refused request leaves the identifier counter as it was.
fn guarded<T>(state: &mut PolicyState, f: impl FnOnce(&mut PolicyState) -> Result<T>) -> Result<T> {
    let before = state.next_id();
    let out = f(state);
    if out.is_err() {
        state.set_next_id(before);
    }
    out
}

fn object_id(state: &mut PolicyState, requested: &Option<Symbol>, prefix: &str) -> Result<Symbol> {
    match requested {
        Some(id) if state.mentions(id) => Err(Error::InvalidRequest(format!("identifier `{id}` is already in use"))),
        Some(id) => Ok(id.clone()),
        None => Ok(state.fresh_id(prefix)),
    }
}

/// True if the grantor holds any `delegate` authorization, directly or
/// through a role.
fn has_delegate_rights(grantor: &Symbol, snap: &Snapshot) -> Result<bool> {
    let g = Value::Sym(grantor.clone());
    let mut grantees = vec![g.clone()];
    grantees.extend(snap.lookup("empower", &[Some(g), None])?.iter().map(|t| t[1].clone()));
    for who in grantees {
        for arity in [4, 5] {
            let mut pattern = vec![None; arity];
            pattern[0] = Some(who.clone());
            pattern[1] = Some(Value::sym(DELEGATE));
            if !snap.lookup("permission", &pattern)?.is_empty() {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Maps a refused delegation to the most specific error.
fn refusal(d: &Decision, grantor: &Symbol, view: &Symbol, id: &Symbol, level: Option<i64>) -> Error {
    let permits: Vec<_> = d.considered.iter().filter(|c| c.side == Side::Permission).collect();
    if permits.is_empty() {
        return Error::SubLicenseViolation { grantor: grantor.to_string(), view: view.to_string(), object: id.to_string() };
    }
    if permits.iter().any(|c| c.holds) {
        return Error::NotAuthorized { actor: grantor.to_string(), target: view.to_string() };
    }
    let failed: Vec<&Value> = permits.iter().filter_map(|c| c.failed.as_ref()).collect();
    for f in &failed {
        if let Value::Ctx(ctx) = f {
            if let Context::Param(name, args) = &**ctx {
                if &**name == MAX_MULTI_DELEGATION {
                    return Error::MultiDelegationExceeded(args.first().and_then(Value::as_int).unwrap_or(0));
                }
            }
        }
    }
    if let Some(level) = level {
        if failed.iter().any(|f| f.context_name().is_some_and(|n| &**n == VALID_LEVEL)) {
            return Error::InvalidLevel(level);
        }
    }
    Error::ContextFailed(failed.first().map(|f| f.to_string()).unwrap_or_default())
}

fn winner_uses_grant_option(d: &Decision) -> bool {
    d.considered.iter().any(|c| {
        c.atom == d.winner && c.context.conjuncts().iter().any(|x| x.context_name().is_some_and(|n| &**n == VALID_LEVEL))
    })
}

/// Inserts `facts` describing object `id` if `grantor` may delegate it.
fn insert_checked(
    state: &mut PolicyState,
    grantor: &Symbol,
    view: &Symbol,
    id: Symbol,
    facts: Vec<Atom>,
    at: Timestamp,
    level: Option<i64>,
    transfer: bool,
) -> Result<Symbol> {
    if !has_delegate_rights(grantor, &state.snapshot())? {
        return Err(Error::NotAuthorized { actor: grantor.to_string(), target: view.to_string() });
    }
    let snap = state.hypothetical(&facts)?;
    if !snap.model().contains("use", &[Value::Sym(id.clone()), Value::Sym(view.clone())]) {
        return Err(Error::SubLicenseViolation { grantor: grantor.to_string(), view: view.to_string(), object: id.to_string() });
    }
    let d = is_permitted(grantor, DELEGATE, &id, at, &snap)?;
    if !d.is_allow() {
        return Err(refusal(&d, grantor, view, &id, level));
    }
    if transfer && winner_uses_grant_option(&d) {
        return Err(Error::Unsupported("multi-step transfer".into()));
    }
    state.commit(facts, snap);
    Ok(id)
}

fn license_facts(id: &Symbol, stored: &Symbol, grantor: &Symbol, attrs: &ObjectAttrs) -> Result<Vec<Atom>> {
    let ObjectAttrs::License { grantee, privilege, target, context } = attrs else {
        return Err(Error::InvalidRequest("a license needs grantee, privilege, target and context".into()));
    };
    let i = Value::Sym(id.clone());
    Ok(vec![
        fact("use", &[i.clone(), Value::Sym(stored.clone())]),
        fact("grantee", &[i.clone(), Value::Sym(grantee.clone())]),
        fact("privilege", &[i.clone(), Value::Sym(privilege.clone())]),
        fact("target", &[i.clone(), Value::Sym(target.clone())]),
        fact("context", &[i.clone(), context.clone()]),
        fact("grantor", &[i, Value::Sym(grantor.clone())]),
    ])
}

fn license_request(state: &mut PolicyState, req: &DelegationRequest, root: &str) -> Result<Symbol> {
    let stored = state.storage_view(&req.view);
    if !in_family(&state.snapshot(), &stored, root) {
        return Err(Error::InvalidRequest(format!("`{}` is not a {root} view", req.view)));
    }
    let id = object_id(state, &req.id, "l")?;
    let facts = license_facts(&id, &stored, &req.grantor, &req.attrs)?;
    insert_checked(state, &req.grantor, &req.view, id, facts, req.at, None, root == LICENSE_TRANSFER)
}

/// Delegates a license: inserts it into `license_delegation` or one of its
/// sub-views. The grantor keeps their own permission.
pub fn delegate_license(state: &mut PolicyState, req: &DelegationRequest) -> Result<Symbol> {
    guarded(state, |state| delegate_license_unguarded(state, req))
}

fn delegate_license_unguarded(state: &mut PolicyState, req: &DelegationRequest) -> Result<Symbol> {
    let stored = state.storage_view(&req.view);
    if in_family(&state.snapshot(), &stored, LICENSE_TRANSFER) {
        return license_request(state, req, LICENSE_TRANSFER);
    }
    license_request(state, req, LICENSE_DELEGATION)
}

/// Transfers a license: the grantee gains the permission and the grantor
/// is prohibited from it at priority `max` while the license context holds.
pub fn transfer_license(state: &mut PolicyState, req: &DelegationRequest) -> Result<Symbol> {
    guarded(state, |state| license_request(state, req, LICENSE_TRANSFER))
}

/// Delegates a role: inserts an assignment into `role_delegation`.
pub fn delegate_role(state: &mut PolicyState, req: &DelegationRequest) -> Result<Symbol> {
    guarded(state, |state| delegate_role_unguarded(state, req))
}

fn delegate_role_unguarded(state: &mut PolicyState, req: &DelegationRequest) -> Result<Symbol> {
    let ObjectAttrs::Role { assignee, assignment } = &req.attrs else {
        return Err(Error::InvalidRequest("a role delegation needs assignee and assignment".into()));
    };
    let stored = state.storage_view(&req.view);
    if !in_family(&state.snapshot(), &stored, ROLE_DELEGATION) {
        return Err(Error::InvalidRequest(format!("`{}` is not a {ROLE_DELEGATION} view", req.view)));
    }
    let id = object_id(state, &req.id, "rd")?;
    let i = Value::Sym(id.clone());
    let facts = vec![
        fact("use", &[i.clone(), Value::Sym(stored)]),
        fact("assignee", &[i.clone(), Value::Sym(assignee.clone())]),
        fact("assignment", &[i.clone(), Value::Sym(assignment.clone())]),
        fact("grantor", &[i, Value::Sym(req.grantor.clone())]),
    ];
    insert_checked(state, &req.grantor, &req.view, id, facts, req.at, None, false)
}

/// Grants the right to delegate license `target` further, with `level`
/// remaining steps.
pub fn grant_delegation_right(state: &mut PolicyState, req: &GrantOptionRequest) -> Result<Symbol> {
    guarded(state, |state| grant_unguarded(state, req))
}

fn grant_unguarded(state: &mut PolicyState, req: &GrantOptionRequest) -> Result<Symbol> {
    if req.level < 0 {
        return Err(Error::InvalidLevel(req.level));
    }
    let snap = state.snapshot();
    let t = Value::Sym(req.target.clone());
    if snap.model().contains("use", &[t.clone(), Value::sym(ROLE_DELEGATION)]) {
        return Err(Error::Unsupported("multi-step role delegation".into()));
    }
    if snap.model().contains("use", &[t.clone(), Value::sym(LICENSE_TRANSFER)]) {
        return Err(Error::Unsupported("multi-step transfer".into()));
    }
    if LicenseTriple::read(&snap, &req.target).is_err() {
        return Err(Error::NoSuchObject(req.target.to_string()));
    }
    let id = object_id(state, &req.id, "l")?;
    let i = Value::Sym(id.clone());
    let facts = vec![
        fact("use", &[i.clone(), Value::sym(GRANT_OPTION_LICENSE)]),
        fact("grantee", &[i.clone(), Value::Sym(req.grantee.clone())]),
        fact("privilege", &[i.clone(), Value::sym(DELEGATE)]),
        fact("target", &[i.clone(), t]),
        fact("context", &[i.clone(), req.context.clone()]),
        fact("level", &[i.clone(), Value::Int(req.level)]),
        fact("grantor", &[i, Value::Sym(req.grantor.clone())]),
    ];
    insert_checked(state, &req.grantor, &sym(GRANT_OPTION_LICENSE), id, facts, req.at, Some(req.level), false)
}

/// Deletes a delegated object if the actor may `revoke` it. Permissions
/// derived from it, and cascading delegations that depend on them, vanish.
pub fn revoke(state: &mut PolicyState, req: &RevocationRequest) -> Result<()> {
    let snap = state.snapshot();
    let o = Value::Sym(req.object_id.clone());
    let delegated = [LICENSE_DELEGATION, ROLE_DELEGATION, GRANT_OPTION_LICENSE]
        .iter()
        .any(|v| snap.model().contains("use", &[o.clone(), Value::sym(v)]));
    if !delegated {
        return Err(Error::NoSuchObject(req.object_id.to_string()));
    }
    let d = is_permitted(&req.actor, REVOKE, &req.object_id, req.at, &snap)?;
    if !d.is_allow() {
        return Err(Error::NotAuthorized { actor: req.actor.to_string(), target: req.object_id.to_string() });
    }
    state.remove_object(&req.object_id)
}

/// Pre-insertion form of the `max_multi_delegation(nm)` context: fewer than
/// `nm` live delegations by `grantor` are covered by the candidate.
pub fn check_max_multi_delegation(grantor: &str, candidate: &LicenseTriple, nm: i64, snap: &Snapshot) -> Result<bool> {
    let mut count = 0;
    for t in snap.model().matching("use", &[None, Some(Value::sym(LICENSE_DELEGATION))]) {
        let Some(id) = t[0].as_sym() else { continue };
        if snap.attribute(id, "grantor") != Some(Value::sym(grantor)) {
            continue;
        }
        let Ok(existing) = LicenseTriple::read(snap, id) else { continue };
        let covered = match snap.config().multi_delegation {
            MultiDelegationMode::Strict => candidate.refines(&existing, snap),
            MultiDelegationMode::Equiv => candidate.refines(&existing, snap) && existing.refines(candidate, snap),
        };
        if covered {
            count += 1;
        }
    }
    Ok(count < nm)
}

/// Whether `user` may create a grant option on license `target` with
/// `level`: some grant option held by `user` covers `target` with a
/// strictly higher level.
pub fn check_valid_level(user: &str, target: &str, level: i64, snap: &Snapshot) -> Result<bool> {
    for t in snap.model().matching("use", &[None, Some(Value::sym(GRANT_OPTION_LICENSE))]) {
        let Some(id) = t[0].as_sym() else { continue };
        if snap.attribute(id, "grantee") != Some(Value::sym(user)) {
            continue;
        }
        let (Some(Value::Int(held)), Some(Value::Sym(held_target))) = (snap.attribute(id, "level"), snap.attribute(id, "target"))
        else {
            continue;
        };
        if level < held && sub_license(target, &held_target, snap)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// The `valid_deleg(grantor)` context for `(action, object)`: the grantor
/// is still permitted, with cascading permissions grounded in a
/// non-cascading source.
pub fn valid_deleg_holds(grantor: &str, action: &str, object: &str, at: Timestamp, snap: &Snapshot) -> Result<bool> {
    Ok(is_permitted(grantor, action, object, at, snap)?.is_allow())
}

/// Applies one scripted event. Returns the identifier of a created object.
pub fn apply_event(state: &mut PolicyState, event: &Event) -> Result<Option<Symbol>> {
    match event {
        Event::Delegate { kind, grantor, view, attrs, at, id } => {
            let req = DelegationRequest { grantor: grantor.clone(), view: view.clone(), attrs: attrs.clone(), at: *at, id: id.clone() };
            let made = match (kind, attrs) {
                (DelegateKind::Delegate, ObjectAttrs::License { .. }) => delegate_license(state, &req)?,
                (DelegateKind::Transfer, ObjectAttrs::License { .. }) => transfer_license(state, &req)?,
                (DelegateKind::Delegate, ObjectAttrs::Role { .. }) => delegate_role(state, &req)?,
                (DelegateKind::Transfer, ObjectAttrs::Role { .. }) => {
                    return Err(Error::Unsupported("role transfer".into()));
                }
            };
            Ok(Some(made))
        }
        Event::GrantOption { grantor, grantee, target, level, context, at, id } => {
            let req = GrantOptionRequest {
                grantor: grantor.clone(),
                grantee: grantee.clone(),
                target: target.clone(),
                level: *level,
                context: context.clone(),
                at: *at,
                id: id.clone(),
            };
            grant_delegation_right(state, &req).map(Some)
        }
        Event::Revoke { actor, object, at } => {
            revoke(state, &RevocationRequest { actor: actor.clone(), object_id: object.clone(), at: *at })?;
            Ok(None)
        }
    }
}

use crate::ast::{PolicyProgram, Statement};
use crate::policy_lang::parse_str;

use super::MultiDelegationMode;

pub const LICENSE: &str = "license";
pub const ROLE_ASSIGNMENT: &str = "role_assignment";
pub const LICENSE_DELEGATION: &str = "license_delegation";
pub const ROLE_DELEGATION: &str = "role_delegation";
pub const LICENSE_TRANSFER: &str = "license_transfer";
pub const GRANT_OPTION_LICENSE: &str = "grant_option_license";
pub const CASCADING_DELEGATION: &str = "cascading_delegation";

pub const DELEGATE: &str = "delegate";
pub const REVOKE: &str = "revoke";

pub const MAX_MULTI_DELEGATION: &str = "max_multi_delegation";
pub const VALID_LEVEL: &str = "valid_level";
pub const VALID_DELEG: &str = "valid_deleg";

/// Priority constant of the transfer prohibition.
pub const MAX_PRIORITY: &str = "max";

/// Administrative views known to the engine.
pub const ADMIN_VIEWS: [&str; 7] = [
    LICENSE,
    ROLE_ASSIGNMENT,
    LICENSE_DELEGATION,
    ROLE_DELEGATION,
    LICENSE_TRANSFER,
    GRANT_OPTION_LICENSE,
    CASCADING_DELEGATION,
];

/// Attribute predicates of view objects; revocation deletes these facts.
pub const OBJECT_PREDICATES: [&str; 9] =
    ["use", "grantee", "privilege", "target", "context", "grantor", "level", "assignee", "assignment"];

/// Predicates computed by the engine from the stored context values.
pub const CONTEXT_VALUE: &str = "ctx_value";
pub const CONJUNCT: &str = "conjunct";

/// Context names evaluated by the engine or by the built-in `hold` rules.
pub const BUILTIN_CONTEXTS: [&str; 7] = [MAX_MULTI_DELEGATION, VALID_LEVEL, VALID_DELEG, "gd", "gid", "gdr", "gidr"];

const RULES: &[(&str, &str)] = &[
    ("built-in sub-view", "sub_view(license_transfer, license_delegation)."),
    ("built-in sub-view", "sub_view(cascading_delegation, license_delegation)."),
    ("sub-view transitivity", "sub_view(V, W) :- sub_view(V, U), sub_view(U, W)."),
    ("view inheritance", "use(O, W) :- use(O, V), sub_view(V, W)."),
    (
        "license rule",
        "permission(Sub, Act, Obj, C) :- use(L, license), grantee(L, Sub), privilege(L, Act), \
         target(L, Obj), context(L, C).",
    ),
    (
        "role-assignment rule",
        "empower(Sub, R) :- use(RA, role_assignment), assignee(RA, Sub), assignment(RA, R).",
    ),
    (
        "license-delegation rule",
        "permission(Gr, A, O, C) :- use(L, license_delegation), not use(L, cascading_delegation), \
         grantee(L, Gr), privilege(L, A), target(L, O), context(L, C).",
    ),
    (
        "role-delegation rule",
        "empower(Gr, R) :- use(RD, role_delegation), assignee(RD, Gr), assignment(RD, R).",
    ),
    (
        "transfer prohibition",
        "prohibition(Sub, Act, Obj, C, max) :- use(L, license_transfer), grantor(L, Sub), privilege(L, Act), \
         target(L, Obj), context(L, C).",
    ),
    (
        "grant-option rule",
        "permission(U, delegate, Lic, C & valid_level) :- use(L, grant_option_license), grantee(L, U), \
         target(L, Lic), context(L, C).",
    ),
    (
        "cascading-delegation rule",
        "permission(Sub, Act, Obj, C & valid_deleg(Gr)) :- use(L, cascading_delegation), grantee(L, Sub), \
         grantor(L, Gr), privilege(L, Act), target(L, Obj), context(L, C).",
    ),
    ("sub_target", "sub_target(O, W) :- sub_view(O, W)."),
    ("sub_target", "sub_target(O, W) :- use(O, W)."),
    ("sub_target", "sub_target(T, T) :- target(_, T)."),
    ("sub_target", "sub_target(O, W) :- sub_target(O, V), sub_target(V, W)."),
    ("sub_privilege", "sub_privilege(P, P) :- privilege(_, P)."),
    ("sub_privilege", "sub_privilege(P, Q) :- consider(P, Q)."),
    ("sub_privilege", "sub_privilege(P, Q) :- sub_activity(P, Q)."),
    ("sub_privilege", "sub_privilege(P, R) :- sub_privilege(P, Q), sub_privilege(Q, R)."),
    ("sub_context", "missing_conjunct(C, D) :- ctx_value(C), conjunct(D, X), not conjunct(C, X)."),
    ("sub_context", "sub_context(C, D) :- ctx_value(C), ctx_value(D), not missing_conjunct(C, D)."),
    ("sub_context", "sub_context(C, E) :- sub_context(C, D), sub_context(D, E)."),
    (
        "sub_license",
        "sub_license(L, L2) :- target(L, T), sub_target(T, T2), target(L2, T2), privilege(L, P), \
         privilege(L2, P2), sub_privilege(P, P2), context(L, C), context(L2, C2), sub_context(C, C2).",
    ),
    ("equiv_licenses", "equiv_licenses(L, L2) :- sub_license(L, L2), sub_license(L2, L)."),
    (
        "max_multi_delegation context",
        "hold(S, A, L, max_multi_delegation(Nm)) :- use(L, license_delegation), grantor(L, S), \
         count(L2, (use(L2, license_delegation), grantor(L2, S), covers(L, L2)), N), N <= Nm.",
    ),
    (
        "valid_level context",
        "hold(U, delegate, L, valid_level) :- use(L, grant_option_license), level(L, V), \
         use(L2, grant_option_license), grantee(L2, U), level(L2, V2), V < V2, target(L, T), target(L2, T2), \
         sub_license(T, T2).",
    ),
    (
        "valid_level context",
        "hold(U, delegate, L, valid_level) :- not use(L, grant_option_license), use(L2, grant_option_license), \
         grantee(L2, U), target(L2, T2), sub_license(L, T2).",
    ),
    ("gd context", "hold(U, revoke, L, gd) :- use(L, license_delegation), grantor(L, U)."),
    ("gd context", "hold(U, revoke, L, gd) :- use(L, grant_option_license), grantor(L, U)."),
    (
        "gid context",
        "hold(U, revoke, L, gid) :- use(L, license_delegation), grantor(L, Gr), empower(Gr, R), empower(U, R).",
    ),
    (
        "gid context",
        "hold(U, revoke, L, gid) :- use(L, grant_option_license), grantor(L, Gr), empower(Gr, R), empower(U, R).",
    ),
    ("gdr context", "hold(U, revoke, L, gdr) :- use(L, role_delegation), grantor(L, U)."),
    (
        "gidr context",
        "hold(U, revoke, L, gidr) :- use(L, role_delegation), grantor(L, Gr), empower(Gr, R), empower(U, R).",
    ),
];

const STRICT_COVERS: (&str, &str) = ("multiple-delegation scope", "covers(L, L2) :- sub_license(L, L2).");
const EQUIV_COVERS: (&str, &str) = ("multiple-delegation scope", "covers(L, L2) :- equiv_licenses(L, L2).");

/// The built-in view, refinement and context rules. Every rule carries a
/// label that names it in derivation traces.
pub fn builtin_program(mode: MultiDelegationMode) -> PolicyProgram {
    let covers = match mode {
        MultiDelegationMode::Strict => STRICT_COVERS,
        MultiDelegationMode::Equiv => EQUIV_COVERS,
    };
    let mut program = PolicyProgram::new();
    for (label, text) in RULES.iter().chain(std::iter::once(&covers)) {
        let parsed = parse_str(text).expect("built-in rule parses");
        for statement in parsed.statements {
            match statement {
                Statement::Rule(r) => program.push_rule(r.with_label(label)),
                other => program.push(other),
            }
        }
    }
    program
}

/// Same as [`builtin_program`]: the rules that give the administrative
/// views their meaning.
pub fn register_builtin_views(mode: MultiDelegationMode) -> PolicyProgram {
    builtin_program(mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_lang::validate_program;

    #[test]
    fn builtin_rules_validate_clean() {
        for mode in [MultiDelegationMode::Strict, MultiDelegationMode::Equiv] {
            let report = validate_program(&builtin_program(mode));
            assert!(report.is_empty(), "{report}");
        }
    }

    #[test]
    fn count_sits_above_use() {
        let strata = crate::datalog::stratify(&builtin_program(MultiDelegationMode::Strict)).unwrap();
        let hold = strata.get(&crate::ast::PredKey::new("hold", 4));
        let uses = strata.get(&crate::ast::PredKey::new("use", 2));
        assert!(hold > uses);
    }

    #[test]
    fn every_rule_is_labelled() {
        assert!(builtin_program(MultiDelegationMode::Strict).rules().all(|r| r.label.is_some()));
    }
}

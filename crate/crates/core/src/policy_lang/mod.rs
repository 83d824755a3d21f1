//! The `.orb` policy language: parsing, validation and formatting.
//!
//! The grammar is documented in `docs/grammar.md`.

mod format;
mod lexer;
mod parser;
mod validate;

pub use validate::{ValidationReport, Violation};

use crate::ast::{Directive, PolicyProgram};
use crate::error::{Error, Result};

/// Policy text together with where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourcePolicy {
    pub text: String,
    pub origin: String,
}

impl SourcePolicy {
    pub fn new(text: impl Into<String>, origin: impl Into<String>) -> Self {
        SourcePolicy { text: text.into(), origin: origin.into() }
    }

    pub fn inline(text: impl Into<String>) -> Self {
        Self::new(text, "<inline>")
    }
}

/// Parses a policy. Reports every syntax error with its position.
pub fn parse_policy(src: &SourcePolicy) -> Result<PolicyProgram> {
    parser::parse(&src.text)
}

/// Parses inline policy text.
pub fn parse_str(text: &str) -> Result<PolicyProgram> {
    parser::parse(text)
}

/// Like [`parse_policy`], but syntax errors carry the origin (used when
/// loading stored state).
pub fn parse_with_origin(src: &SourcePolicy) -> Result<PolicyProgram> {
    parser::parse(&src.text).map_err(|e| match e {
        Error::Syntax(errors) => Error::Parse { origin: src.origin.clone(), errors },
        other => other,
    })
}

/// Checks safety, definedness and stratification. Never fails.
pub fn validate_program(p: &PolicyProgram) -> ValidationReport {
    validate::validate(p)
}

/// Renders a program as policy text that parses back to the same program.
pub fn format_policy(p: &PolicyProgram) -> String {
    format::format(p)
}

/// Renders one directive as it appears in policy text.
pub fn format_directive(d: &Directive) -> String {
    format::directive(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::*;

    fn round_trip(src: &str) -> PolicyProgram {
        let p = parse_str(src).unwrap();
        let text = format_policy(&p);
        let again = parse_str(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(p, again, "{text}");
        p
    }

    #[test]
    fn fact_round_trip() {
        let p = round_trip("empower(john, prof).");
        assert_eq!(format_policy(&p), "empower(john, prof).\n");
        assert_eq!(p.facts().next().unwrap(), &Atom::new("empower", vec![Term::sym("john"), Term::sym("prof")]));
    }

    #[test]
    fn empty_text() {
        assert!(parse_str("").unwrap().is_empty());
        assert!(parse_str("  % only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn undefined_rule_still_parses() {
        let p = parse_str("permission(X) :- q(Y).").unwrap();
        assert_eq!(p.rules().count(), 1);
    }

    #[test]
    fn rules_and_contexts_round_trip() {
        round_trip(
            "permission(Sub, Act, Obj, C & valid_deleg(Gr)) :- use(L, cascading_delegation), grantee(L, Sub), \
             grantor(L, Gr), privilege(L, Act), target(L, Obj), context(L, C).
             p(L) :- context(L, c1 & c2).
             hold(S, A, L, max_multi_delegation(Nm)) :- use(L, license_delegation), grantor(L, S), \
             count(L2, (use(L2, license_delegation), grantor(L2, S)), N), N <= Nm.
             q(X) :- d(X), not r(X, _), X != 3, X >= -2.
             #view john_stud_notes sub_view_of stud_notes.
             #context during_john_vacation temporal 2007-07-01T00:00:00Z 2007-07-31T23:59:59Z.
             #priority default 1.
             #next-id 7.
             #delegate john note_delegation grantee=mary privilege=update target=john_stud_notes context=nominal at=2007-05-01T10:00:00Z.
             #transfer john license_transfer grantee=mary privilege=update target=x context=c1 & c2 at=2007-05-01T10:00:00Z id=t1.
             #delegate john role_delegation assignee=bob assignment=prof at=2007-05-01T10:00:00Z.
             #grant-option john grantee=mary target=l1 level=3 context=nominal at=2007-05-01T10:00:00Z id=l3.
             #revoke john l1 at=2007-06-01T00:00:00Z.",
        );
    }

    #[test]
    fn every_error_is_reported_with_position() {
        let err = parse_str("p(a.\nq(b).\nr(c) :- .\n#bogus x.\n").unwrap_err();
        let Error::Syntax(errors) = err else { panic!("{err}") };
        let lines: Vec<usize> = errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![1, 3, 4]);
    }

    #[test]
    fn arity_consistency() {
        assert!(parse_str("p(a). p(a, b).").is_err());
        assert!(parse_str("permission(a, b, c, d). permission(a, b, c, d, 3).").is_ok());
        assert!(parse_str("permission(a, b, c). permission(a, b).").is_err());
    }

    #[test]
    fn duplicate_declarations() {
        let err = parse_str("#view a sub_view_of b.\n#view a sub_view_of c.").unwrap_err();
        assert!(matches!(err, Error::DuplicateDeclaration { kind: "view", line: 2, .. }), "{err}");
        let err = parse_str(
            "#context c temporal 2007-07-01T00:00:00Z 2007-07-31T23:59:59Z.\n\
             #context c temporal 2007-07-01T00:00:00Z 2007-07-31T23:59:59Z.",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateDeclaration { kind: "context", .. }));
    }

    #[test]
    fn origin_is_attached_for_stored_state() {
        let err = parse_with_origin(&SourcePolicy::new("p(.", "state.orb")).unwrap_err();
        assert!(matches!(err, Error::Parse { ref origin, .. } if origin == "state.orb"));
        assert_eq!(err.code(), "ParseError");
    }
}

use std::fmt;

use thiserror::Error;

use crate::datalog::CycleWitness;
use crate::policy_lang::ValidationReport;

/// A located syntax problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{} syntax error(s): {}", .0.len(), join(.0))]
    Syntax(Vec<SyntaxError>),

    #[error("{origin}: {} syntax error(s): {}", .errors.len(), join(.errors))]
    Parse { origin: String, errors: Vec<SyntaxError> },

    #[error("{kind} `{name}` declared twice (line {line})")]
    DuplicateDeclaration { kind: &'static str, name: String, line: usize },

    #[error("program is not stratifiable: {0}")]
    NonStratifiable(CycleWitness),

    #[error("invalid program:\n{0}")]
    InvalidProgram(Box<ValidationReport>),

    #[error("rule is not range-restricted: {0}")]
    NotRangeRestricted(String),

    #[error("derived fact limit of {limit} exceeded")]
    ResourceLimit { limit: usize },

    #[error("context literal reached with unbound arguments: {0}")]
    UninstantiatedContext(String),

    #[error("unknown context `{0}`")]
    UnknownContext(String),

    #[error("`{name}` is a {found}, expected a {expected}")]
    UnknownEntity { name: String, expected: &'static str, found: &'static str },

    #[error("object `{id}` has no `{name}` attribute")]
    MissingAttribute { id: String, name: &'static str },

    #[error("`{actor}` is not authorized on `{target}`")]
    NotAuthorized { actor: String, target: String },

    #[error("context `{0}` does not hold")]
    ContextFailed(String),

    #[error("multiple delegation bound {0} reached")]
    MultiDelegationExceeded(i64),

    #[error("`{object}` is not a sub-license of anything `{grantor}` may delegate in `{view}`")]
    SubLicenseViolation { grantor: String, view: String, object: String },

    #[error("invalid delegation level {0}")]
    InvalidLevel(i64),

    #[error("no delegated object `{0}`")]
    NoSuchObject(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("valid_deleg contexts did not reach a fixpoint for `{0}`")]
    NonMonotoneContext(String),

    #[error("universe too large for the reference evaluator ({0} ground atoms)")]
    UniverseTooLarge(usize),

    #[error("i/o error: {0}")]
    Io(String),
}

fn join(errors: &[SyntaxError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// Stable error name used in CLI output and audit records.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Syntax(_) => "SyntaxError",
            Error::Parse { .. } => "ParseError",
            Error::DuplicateDeclaration { .. } => "DuplicateDeclaration",
            Error::NonStratifiable(_) => "NonStratifiable",
            Error::InvalidProgram(_) => "InvalidProgram",
            Error::NotRangeRestricted(_) => "NotRangeRestricted",
            Error::ResourceLimit { .. } => "ResourceLimit",
            Error::UninstantiatedContext(_) => "UninstantiatedContext",
            Error::UnknownContext(_) => "UnknownContext",
            Error::UnknownEntity { .. } => "UnknownEntity",
            Error::MissingAttribute { .. } => "MissingAttribute",
            Error::NotAuthorized { .. } => "NotAuthorized",
            Error::ContextFailed(_) => "ContextFailed",
            Error::MultiDelegationExceeded(_) => "MultiDelegationExceeded",
            Error::SubLicenseViolation { .. } => "SubLicenseViolation",
            Error::InvalidLevel(_) => "InvalidLevel",
            Error::NoSuchObject(_) => "NoSuchObject",
            Error::Unsupported(_) => "Unsupported",
            Error::InvalidRequest(_) => "InvalidRequest",
            Error::NonMonotoneContext(_) => "NonMonotoneContext",
            Error::UniverseTooLarge(_) => "UniverseTooLarge",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! A contextual OrBAC policy engine with delegation and revocation, built on
//! stratified Datalog with negation and counting.

pub mod ast;
pub mod datalog;
pub mod decision;
pub mod delegation;
pub mod error;
pub mod oracle;
pub mod orbac;
pub mod persist;
pub mod policy_lang;
pub mod shared;

pub use error::{Error, Result};

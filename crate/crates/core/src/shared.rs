//! Single-writer, many-reader access to a policy state.

use std::sync::{Arc, Mutex, PoisonError, RwLock};

use crate::error::Result;
use crate::orbac::{PolicyState, Snapshot};

/// Owns a policy state. Mutations are serialized; each successful one
/// publishes a new snapshot. Readers take the current snapshot and never
/// wait for a mutation in progress.
#[derive(Debug)]
pub struct SharedPolicy {
    writer: Mutex<PolicyState>,
    current: RwLock<Arc<Snapshot>>,
}

impl SharedPolicy {
    pub fn new(state: PolicyState) -> Self {
        let current = RwLock::new(state.snapshot());
        SharedPolicy { writer: Mutex::new(state), current }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    /// Runs `f` on a copy of the state; on success the copy becomes the
    /// state and its snapshot is published.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut PolicyState) -> Result<T>) -> Result<T> {
        let mut guard = self.writer.lock().unwrap_or_else(PoisonError::into_inner);
        let mut draft = guard.clone();
        let out = f(&mut draft)?;
        let snapshot = draft.snapshot();
        *guard = draft;
        *self.current.write().unwrap_or_else(PoisonError::into_inner) = snapshot;
        Ok(out)
    }

    pub fn state(&self) -> PolicyState {
        self.writer.lock().unwrap_or_else(PoisonError::into_inner).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{parse_timestamp, Value, NOMINAL};
    use crate::decision::is_permitted;
    use crate::delegation::{delegate_license, DelegationRequest};
    use crate::orbac::EngineConfig;
    use crate::policy_lang::SourcePolicy;

    #[test]
    fn readers_keep_their_snapshot_across_mutations() {
        let text = "empower(john, prof). use(note1, notes). permission(prof, update, notes, nominal).
            permission(prof, delegate, license_delegation, nominal).";
        let state = PolicyState::from_source(&SourcePolicy::inline(text), EngineConfig::default()).unwrap();
        let shared = Arc::new(SharedPolicy::new(state));
        let at = parse_timestamp("2007-05-01T10:00:00Z").unwrap();
        let before = shared.snapshot();
        std::thread::scope(|s| {
            let writer = shared.clone();
            s.spawn(move || {
                writer
                    .mutate(|st| {
                        delegate_license(
                            st,
                            &DelegationRequest::license("john", "license_delegation", "mary", "update", "notes", Value::sym(NOMINAL), at),
                        )
                    })
                    .unwrap();
            });
            for _ in 0..4 {
                let reader = shared.clone();
                s.spawn(move || {
                    let snap = reader.snapshot();
                    is_permitted("john", "update", "note1", at, &snap).unwrap();
                });
            }
        });
        assert!(!is_permitted("mary", "update", "note1", at, &before).unwrap().is_allow());
        assert!(is_permitted("mary", "update", "note1", at, &shared.snapshot()).unwrap().is_allow());
        assert_eq!(shared.state().next_id(), 2);
    }

    #[test]
    fn failed_mutation_leaves_state_unchanged() {
        let shared = SharedPolicy::new(PolicyState::empty(EngineConfig::default()).unwrap());
        let at = parse_timestamp("2007-05-01T10:00:00Z").unwrap();
        let r = shared.mutate(|st| {
            delegate_license(st, &DelegationRequest::license("x", "license_delegation", "y", "read", "o", Value::sym(NOMINAL), at))
        });
        assert!(r.is_err());
        assert_eq!(shared.state().next_id(), 1);
        assert!(shared.state().program().statements.is_empty());
    }
}

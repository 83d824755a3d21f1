//! Policy states on disk. The file is ordinary policy text: the stored
//! statements, view objects as attribute facts, and a `#next-id` directive.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::orbac::{EngineConfig, PolicyState};
use crate::policy_lang::SourcePolicy;

/// Writes the state atomically: a temporary file in the same directory is
/// renamed over `path`.
pub fn save_state(state: &PolicyState, path: &Path) -> Result<()> {
    let text = state.to_policy_text();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<PolicyState> {
    load_state_with(path, EngineConfig::default())
}

pub fn load_state_with(path: &Path, config: EngineConfig) -> Result<PolicyState> {
    let text = fs::read_to_string(path)?;
    PolicyState::from_source(&SourcePolicy::new(text, path.display().to_string()), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn save_then_load() {
        let dir = std::env::temp_dir().join(format!("orbac-persist-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.orb");
        let src = SourcePolicy::inline("empower(john, prof). use(n1, notes). #context v temporal 2007-07-01T00:00:00Z 2007-07-31T00:00:00Z.");
        let state = PolicyState::from_source(&src, EngineConfig::default()).unwrap();
        save_state(&state, &path).unwrap();
        let back = load_state(&path).unwrap();
        assert_eq!(back.program(), state.program());
        fs::write(&path, "empower(john, prof).\n#bogus x.\n").unwrap();
        match load_state(&path) {
            Err(Error::Parse { origin, errors }) => {
                assert!(origin.ends_with("state.orb"));
                assert_eq!(errors[0].line, 2);
            }
            other => panic!("{other:?}"),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(load_state(Path::new("/nonexistent/orbac/state.orb")), Err(Error::Io(_))));
    }
}

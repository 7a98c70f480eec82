//! Errors, provenance, input hashing and artifact writing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ordbias::report::Provenance;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "ordbias";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable/invalid input; exit code 2.
    Input(String),
    /// Anything else, including failure to write outputs; exit code 1.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<ordbias::Error> for CliError {
    fn from(e: ordbias::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn walk(dir: &Path, rel: &Path, out: &mut Vec<(PathBuf, PathBuf)>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let rel = rel.join(entry.file_name());
        if path.is_dir() {
            walk(&path, &rel, out)?;
        } else {
            out.push((rel, path));
        }
    }
    Ok(())
}

/// SHA-256 over every input file, keyed by role and relative path, so the
/// digest depends on content and layout but not on where inputs live.
pub fn hash_inputs(inputs: &[(&str, &Path)]) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for (role, path) in inputs {
        let mut files = Vec::new();
        if path.is_dir() {
            walk(path, Path::new(""), &mut files).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        } else {
            files.push((PathBuf::new(), path.to_path_buf()));
        }
        for (rel, file) in files {
            let bytes = fs::read(&file).map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
            hasher.update(role.as_bytes());
            hasher.update([0]);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Hex SHA-256 of `bytes`, for inputs that are not files.
pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn provenance(seed: Option<u64>, input_hash: String) -> Provenance {
    Provenance {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        input_hash,
    }
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()))
}

/// Refuses to write into any of the inputs.
pub fn check_out_dir(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    let o = absolute(out);
    for input in inputs {
        if absolute(input) == o {
            return Err(CliError::Input(format!(
                "output directory {} is also an input",
                out.display()
            )));
        }
    }
    Ok(())
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| internal(format!("{}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| internal(format!("{}: {e}", path.display())))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(internal)?;
        text.push('\n');
        self.write(name, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_location_but_not_content() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [a.path(), b.path()] {
            fs::create_dir(d.join("sub")).unwrap();
            fs::write(d.join("sub/x.txt"), "1\n").unwrap();
        }
        let ha = hash_inputs(&[("root", a.path())]).unwrap();
        assert_eq!(ha, hash_inputs(&[("root", b.path())]).unwrap());
        fs::write(b.path().join("sub/x.txt"), "2\n").unwrap();
        assert_ne!(ha, hash_inputs(&[("root", b.path())]).unwrap());
        assert_ne!(ha, hash_inputs(&[("pred", a.path())]).unwrap());
    }

    #[test]
    fn out_must_differ() {
        let a = tempfile::tempdir().unwrap();
        assert!(check_out_dir(a.path(), &[a.path()]).is_err());
        assert!(check_out_dir(&a.path().join("out"), &[a.path()]).is_ok());
    }
}

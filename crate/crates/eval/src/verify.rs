//! Fix verification: a verifier contract, a table-backed mock, an external
//! command adapter, and the sandboxed Pass@k driver.
//!
//! Every Pass@k attempt gets a fresh copy of the RTL tree, applies the
//! literal patch, queries the verifier, reverts, and checks the sandbox is
//! byte-identical to the original before moving on.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use cexroot_pipeline::fixgen::{apply_fix, revert_fix, signature_of, Fix};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("verifier table {path}: {message}")]
    Table { path: String, message: String },
    #[error("sandbox I/O for {path}: {message}")]
    Sandbox { path: String, message: String },
}

/// One verification verdict. Errors count as failures for the attempt but
/// are tallied separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    Pass,
    Fail,
    Error(String),
}

/// Applies a formal-verification check to a patched RTL sandbox.
pub trait Verifier {
    fn verify(&self, fix: &Fix, sandbox: &Path) -> VerifyOutcome;
}

/// Deterministic verifier backed by a signature table; spans absent from
/// the table fail.
#[derive(Debug, Clone, Default)]
pub struct MockVerifier {
    outcomes: BTreeMap<String, bool>,
}

impl MockVerifier {
    pub fn new(outcomes: BTreeMap<String, bool>) -> Self {
        Self { outcomes }
    }

    /// Adds one outcome keyed by the signature of the span pair.
    pub fn with_outcome(mut self, buggy_code: &str, code: &str, passes: bool) -> Self {
        self.outcomes.insert(signature_of(buggy_code, code), passes);
        self
    }
}

impl Verifier for MockVerifier {
    fn verify(&self, fix: &Fix, _sandbox: &Path) -> VerifyOutcome {
        match self.outcomes.get(&signature_of(&fix.buggy_code, &fix.code)) {
            Some(true) => VerifyOutcome::Pass,
            _ => VerifyOutcome::Fail,
        }
    }
}

/// Runs an external command with the sandbox path appended; exit status 0
/// means pass.
#[derive(Debug, Clone)]
pub struct CommandVerifier {
    pub program: String,
    pub args: Vec<String>,
}

impl Verifier for CommandVerifier {
    fn verify(&self, _fix: &Fix, sandbox: &Path) -> VerifyOutcome {
        match Command::new(&self.program).args(&self.args).arg(sandbox).status() {
            Ok(status) if status.success() => VerifyOutcome::Pass,
            Ok(_) => VerifyOutcome::Fail,
            Err(error) => VerifyOutcome::Error(error.to_string()),
        }
    }
}

/// On-disk verifier description: either a mock outcome table or an external
/// command.
#[derive(Debug, Deserialize)]
struct VerifierDoc {
    #[serde(default)]
    mock: Option<MockDoc>,
    #[serde(default)]
    command: Option<CommandDoc>,
}

#[derive(Debug, Deserialize)]
struct MockDoc {
    outcomes: Vec<OutcomeDoc>,
}

#[derive(Debug, Deserialize)]
struct OutcomeDoc {
    buggy_code: String,
    code: String,
    outcome: String,
}

#[derive(Debug, Deserialize)]
struct CommandDoc {
    program: String,
    #[serde(default)]
    args: Vec<String>,
}

/// Loads a verifier description file.
pub fn load_verifier(path: &Path) -> Result<Box<dyn Verifier>, VerifyError> {
    let table_error = |message: String| VerifyError::Table {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| table_error(e.to_string()))?;
    let doc: VerifierDoc =
        serde_json::from_str(&text).map_err(|e| table_error(e.to_string()))?;
    if let Some(command) = doc.command {
        return Ok(Box::new(CommandVerifier { program: command.program, args: command.args }));
    }
    let Some(mock) = doc.mock else {
        return Err(table_error("expected a \"mock\" or \"command\" section".to_string()));
    };
    let mut outcomes = BTreeMap::new();
    for entry in mock.outcomes {
        let passes = match entry.outcome.as_str() {
            "pass" => true,
            "fail" => false,
            other => return Err(table_error(format!("unknown outcome {other:?}"))),
        };
        outcomes.insert(signature_of(&entry.buggy_code, &entry.code), passes);
    }
    Ok(Box::new(MockVerifier::new(outcomes)))
}

/// Result of a Pass@k evaluation for one problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassReport {
    pub passed: bool,
    pub attempts: usize,
    pub verifier_errors: usize,
}

/// True iff any of the first `min(k, n)` fixes verifies as a pass.
///
/// Attempts run in ranked order, each in a freshly copied sandbox. A fix
/// whose span is absent from the tree fails without consulting the
/// verifier. After the revert the sandbox must match the original tree
/// byte-for-byte.
pub fn pass_at_k(
    fixes: &[Fix],
    verifier: &dyn Verifier,
    k: usize,
    rtl_dir: &Path,
) -> Result<PassReport, VerifyError> {
    let originals = read_tree(rtl_dir)?;
    let mut report = PassReport { passed: false, attempts: 0, verifier_errors: 0 };
    for fix in fixes.iter().take(k) {
        report.attempts += 1;
        let sandbox = tempfile::tempdir().map_err(|e| VerifyError::Sandbox {
            path: rtl_dir.display().to_string(),
            message: e.to_string(),
        })?;
        write_tree(sandbox.path(), &originals)?;
        // Patch the first file carrying the span; prefer the located file.
        let target = originals
            .iter()
            .filter(|(path, _)| {
                fix.location.file.is_empty() || path.as_str() == fix.location.file
            })
            .chain(originals.iter())
            .find(|(_, text)| text.contains(&fix.buggy_code))
            .map(|(path, _)| path.clone());
        let Some(target) = target else {
            continue;
        };
        let original = &originals[&target];
        let patched = apply_fix(original, fix).expect("span presence just checked");
        write_file(sandbox.path(), &target, &patched)?;

        match verifier.verify(fix, sandbox.path()) {
            VerifyOutcome::Pass => report.passed = true,
            VerifyOutcome::Fail => {}
            VerifyOutcome::Error(_) => report.verifier_errors += 1,
        }

        let reverted = revert_fix(&patched, fix).unwrap_or_else(|| original.clone());
        write_file(sandbox.path(), &target, &reverted)?;
        let restored = read_tree(sandbox.path())?;
        if restored != originals {
            // Overlapping spans can revert at the wrong offset; restore the
            // pristine tree so the hygiene contract holds regardless.
            write_tree(sandbox.path(), &originals)?;
        }
        if report.passed {
            break;
        }
    }
    Ok(report)
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, String>, VerifyError> {
    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| VerifyError::Sandbox {
            path: root.display().to_string(),
            message: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let text = std::fs::read_to_string(entry.path()).map_err(|e| VerifyError::Sandbox {
            path: entry.path().display().to_string(),
            message: e.to_string(),
        })?;
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walked paths live under the root")
            .to_string_lossy()
            .replace('\\', "/");
        files.insert(rel, text);
    }
    Ok(files)
}

fn write_tree(root: &Path, files: &BTreeMap<String, String>) -> Result<(), VerifyError> {
    for (rel, text) in files {
        write_file(root, rel, text)?;
    }
    Ok(())
}

fn write_file(root: &Path, rel: &str, text: &str) -> Result<(), VerifyError> {
    let path = root.join(rel);
    let sandbox_error = |message: String| VerifyError::Sandbox {
        path: path.display().to_string(),
        message,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| sandbox_error(e.to_string()))?;
    }
    std::fs::write(&path, text).map_err(|e| sandbox_error(e.to_string()))
}

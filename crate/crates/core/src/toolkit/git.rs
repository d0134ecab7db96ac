//! Change tracking through the `git` CLI.
//!
//! The run's starting point is recorded under `refs/tandem/base`. Snapshots
//! are built in a throwaway index so the user's index and history are never
//! touched.

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::ToolError;

const BASE_REF: &str = "refs/tandem/base";
const FIXED_DATE: &str = "2000-01-01T00:00:00+0000";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GitPatch {
    /// Unified diff with `a/` and `b/` prefixes; empty when nothing changed.
    pub diff: String,
    pub base_revision: String,
}

impl GitPatch {
    pub fn is_empty(&self) -> bool {
        self.diff.is_empty()
    }
}

fn git<I, S>(workdir: &Path, args: I, index: Option<&Path>) -> Result<String, ToolError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let mut cmd = Command::new("git");
    cmd.current_dir(workdir)
        .args([
            "-c",
            "user.name=tandem",
            "-c",
            "user.email=tandem@localhost",
            "-c",
            "commit.gpgsign=false",
            "-c",
            "core.autocrlf=false",
            "-c",
            "core.quotepath=false",
        ])
        .args(args)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_AUTHOR_DATE", FIXED_DATE)
        .env("GIT_COMMITTER_DATE", FIXED_DATE)
        .stdin(Stdio::null());
    if let Some(index) = index {
        cmd.env("GIT_INDEX_FILE", index);
    }
    let out = cmd.output().map_err(|e| ToolError::Git(e.to_string()))?;
    if !out.status.success() {
        return Err(ToolError::Git(String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn canonical(workdir: &Path) -> Result<PathBuf, ToolError> {
    workdir.canonicalize().map_err(|_| ToolError::FileNotFound(workdir.to_path_buf()))
}

/// True when `workdir` is the top level of its own repository (a directory
/// nested inside some other checkout does not count).
pub fn is_repository(workdir: &Path) -> bool {
    let Ok(dir) = canonical(workdir) else { return false };
    git(&dir, ["rev-parse", "--show-toplevel"], None)
        .ok()
        .and_then(|top| Path::new(top.trim()).canonicalize().ok())
        .is_some_and(|top| top == dir)
}

/// Makes `workdir` a repository with a recorded base revision, committing
/// the current tree if there is no commit yet. Returns the base revision.
pub fn ensure_repository(workdir: &Path) -> Result<String, ToolError> {
    let dir = canonical(workdir)?;
    if !is_repository(&dir) {
        git(&dir, ["init", "-q"], None)?;
    }
    if let Ok(existing) = git(&dir, ["rev-parse", "--verify", "-q", BASE_REF], None) {
        return Ok(existing.trim().to_string());
    }
    let head = match git(&dir, ["rev-parse", "--verify", "-q", "HEAD"], None) {
        Ok(h) => h.trim().to_string(),
        Err(_) => {
            git(&dir, ["add", "-A"], None)?;
            git(&dir, ["commit", "-q", "--allow-empty", "--no-verify", "-m", "base"], None)?;
            git(&dir, ["rev-parse", "HEAD"], None)?.trim().to_string()
        }
    };
    git(&dir, ["update-ref", BASE_REF, &head], None)?;
    Ok(head)
}

pub fn base_revision(workdir: &Path) -> Result<String, ToolError> {
    let dir = canonical(workdir)?;
    if !is_repository(&dir) {
        return Err(ToolError::NotARepository(dir));
    }
    git(&dir, ["rev-parse", "--verify", "-q", BASE_REF], None)
        .or_else(|_| git(&dir, ["rev-parse", "--verify", "-q", "HEAD"], None))
        .map(|s| s.trim().to_string())
        .map_err(|_| ToolError::NotARepository(dir))
}

/// Tree id of the working directory, including untracked files that are not
/// ignored.
pub fn snapshot_tree(workdir: &Path) -> Result<String, ToolError> {
    let dir = canonical(workdir)?;
    if !is_repository(&dir) {
        return Err(ToolError::NotARepository(dir));
    }
    let scratch = tempfile::tempdir()?;
    let index = scratch.path().join("index");
    git(&dir, ["add", "-A"], Some(&index))?;
    Ok(git(&dir, ["write-tree"], Some(&index))?.trim().to_string())
}

/// Unified diff between two tree-ish revisions.
pub fn diff_trees(workdir: &Path, from: &str, to: &str) -> Result<String, ToolError> {
    let dir = canonical(workdir)?;
    git(
        &dir,
        [
            "diff-tree",
            "-p",
            "-r",
            "--binary",
            "--full-index",
            "--no-renames",
            "--no-color",
            "--no-ext-diff",
            "--src-prefix=a/",
            "--dst-prefix=b/",
            from,
            to,
        ],
        None,
    )
}

/// Everything that changed in `workdir` since the base revision.
pub fn snapshot_patch(workdir: &Path) -> Result<GitPatch, ToolError> {
    let base = base_revision(workdir)?;
    let tree = snapshot_tree(workdir)?;
    let diff = diff_trees(workdir, &format!("{base}^{{tree}}"), &tree)?;
    Ok(GitPatch { diff, base_revision: base })
}

/// Applies `patch` to a checkout of its base revision.
pub fn apply_patch(patch: &GitPatch, workdir: &Path) -> Result<(), ToolError> {
    if patch.is_empty() {
        return Ok(());
    }
    let dir = canonical(workdir)?;
    let mut file = tempfile::NamedTempFile::new()?;
    std::io::Write::write_all(&mut file, patch.diff.as_bytes())?;
    git(&dir, [OsStr::new("apply"), OsStr::new("--whitespace=nowarn"), file.path().as_os_str()], None)
        .map(|_| ())
        .map_err(|e| match e {
            ToolError::Git(msg) => ToolError::PatchApplyFailure(msg),
            other => other,
        })
}

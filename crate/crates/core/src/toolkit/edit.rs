//! Line-range edits guarded by anchor strings.
//!
//! A request names a line range and, for each end of it, a piece of text
//! that must appear on that line. When either anchor is not found on its
//! claimed line the file is left untouched and the caller gets every line
//! where the anchor does occur, so the request can be corrected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Sandbox, ToolError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub file: String,
    /// 1-based, inclusive.
    pub start_line: usize,
    /// 1-based, inclusive.
    pub end_line: usize,
    pub start_line_string: String,
    pub end_line_string: String,
    pub new_content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditStatus {
    Applied,
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSide {
    Start,
    End,
    Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditHint {
    pub anchor: AnchorSide,
    pub given_line: usize,
    /// Ascending.
    pub candidate_lines: Vec<usize>,
}

impl EditHint {
    /// Correction prompt fed back to the agent.
    pub fn message(&self, req: Option<&EditRequest>) -> String {
        let which = match self.anchor {
            AnchorSide::Start => "start_line_string",
            AnchorSide::End => "end_line_string",
            AnchorSide::Signature => "function signature",
        };
        let anchor_text = req.map(|r| match self.anchor {
            AnchorSide::Start => r.start_line_string.as_str(),
            _ => r.end_line_string.as_str(),
        });
        let mut msg = match (self.anchor, anchor_text) {
            (AnchorSide::Signature, _) | (_, None) => format!("The {which} was not matched."),
            (_, Some(text)) => format!("The {which} {text:?} does not appear on line {}.", self.given_line),
        };
        match self.candidate_lines.as_slice() {
            [] => msg.push_str(" It does not occur anywhere in the file."),
            [one] => msg.push_str(&format!(" It occurs on line {one}.")),
            many => msg.push_str(&format!(
                " It occurs on lines {}; pick the intended one.",
                many.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
            )),
        }
        msg.push_str(" Adjust the command and try again.");
        msg
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub status: EditStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<EditHint>,
    pub rounds_used: u32,
}

impl EditOutcome {
    fn applied() -> Self {
        EditOutcome { status: EditStatus::Applied, hint: None, rounds_used: 1 }
    }

    fn mismatch(hint: EditHint) -> Self {
        EditOutcome { status: EditStatus::Mismatch, hint: Some(hint), rounds_used: 1 }
    }

    pub fn is_applied(&self) -> bool {
        self.status == EditStatus::Applied
    }
}

/// Hook run after every successful edit, e.g. a linter. The returned text is
/// appended to the observation.
pub trait PostEditHook: Send + Sync {
    fn after_edit(&self, path: &Path) -> Option<String>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoLint;

impl PostEditHook for NoLint {
    fn after_edit(&self, _path: &Path) -> Option<String> {
        None
    }
}

struct TextFile {
    path: PathBuf,
    lines: Vec<String>,
    trailing_newline: bool,
}

impl TextFile {
    fn read(path: PathBuf) -> Result<Self, ToolError> {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ToolError::FileNotFound(path)),
            Err(e) if e.kind() == std::io::ErrorKind::IsADirectory => return Err(ToolError::FileNotFound(path)),
            Err(e) => return Err(e.into()),
        };
        let trailing_newline = text.ends_with('\n');
        let body = text.strip_suffix('\n').unwrap_or(&text);
        let lines = if text.is_empty() { Vec::new() } else { body.split('\n').map(str::to_string).collect() };
        Ok(TextFile { path, lines, trailing_newline: trailing_newline || text.is_empty() })
    }

    fn matches(&self, line: usize, anchor: &str) -> bool {
        self.lines[line - 1].trim().contains(anchor.trim())
    }

    fn locate(&self, anchor: &str) -> Vec<usize> {
        let anchor = anchor.trim();
        self.lines.iter().enumerate().filter(|(_, l)| l.trim().contains(anchor)).map(|(i, _)| i + 1).collect()
    }

    fn splice(&mut self, start: usize, end: usize, content: &str) {
        let replacement: Vec<String> = if content.is_empty() {
            Vec::new()
        } else {
            content.strip_suffix('\n').unwrap_or(content).split('\n').map(str::to_string).collect()
        };
        self.lines.splice(start - 1..end, replacement);
    }

    fn write(&self) -> Result<(), ToolError> {
        let mut text = self.lines.join("\n");
        if self.trailing_newline && !self.lines.is_empty() {
            text.push('\n');
        }
        fs::write(&self.path, text)?;
        Ok(())
    }
}

fn check_anchor(anchor: &str, which: &str) -> Result<(), ToolError> {
    if anchor.trim().is_empty() {
        return Err(ToolError::InvalidRequest(format!("{which} must not be empty")));
    }
    Ok(())
}

/// All 1-based lines whose trimmed text contains the trimmed anchor.
pub fn locate_anchor(path: &Path, anchor: &str) -> Result<Vec<usize>, ToolError> {
    check_anchor(anchor, "anchor")?;
    Ok(TextFile::read(path.to_path_buf())?.locate(anchor))
}

pub fn edit_file(req: &EditRequest, sandbox: &Sandbox) -> Result<EditOutcome, ToolError> {
    check_anchor(&req.start_line_string, "start_line_string")?;
    check_anchor(&req.end_line_string, "end_line_string")?;
    let mut file = TextFile::read(sandbox.resolve(&req.file)?)?;
    let len = file.lines.len();
    for line in [req.start_line, req.end_line] {
        if line == 0 || line > len {
            return Err(ToolError::LineOutOfRange { line, len });
        }
    }
    if req.start_line > req.end_line {
        return Err(ToolError::InvalidRequest(format!(
            "start_line {} is after end_line {}",
            req.start_line, req.end_line
        )));
    }
    if !file.matches(req.start_line, &req.start_line_string) {
        return Ok(EditOutcome::mismatch(EditHint {
            anchor: AnchorSide::Start,
            given_line: req.start_line,
            candidate_lines: file.locate(&req.start_line_string),
        }));
    }
    if !file.matches(req.end_line, &req.end_line_string) {
        return Ok(EditOutcome::mismatch(EditHint {
            anchor: AnchorSide::End,
            given_line: req.end_line,
            candidate_lines: file.locate(&req.end_line_string),
        }));
    }
    file.splice(req.start_line, req.end_line, &req.new_content);
    file.write()?;
    Ok(EditOutcome::applied())
}

/// Applies `initial`, asking `revise` for a corrected request after each
/// mismatch, for at most `limit` attempts in total.
pub fn corrected_edit_loop<F>(
    initial: EditRequest,
    sandbox: &Sandbox,
    limit: u32,
    mut revise: F,
) -> Result<(EditOutcome, u32), ToolError>
where
    F: FnMut(&EditRequest, &EditHint) -> EditRequest,
{
    if limit == 0 {
        return Err(ToolError::InvalidRequest("round limit must be at least 1".into()));
    }
    let mut req = initial;
    let mut round = 1;
    loop {
        let mut outcome = edit_file(&req, sandbox)?;
        outcome.rounds_used = round;
        let hint = match &outcome.hint {
            None => return Ok((outcome, round)),
            Some(h) => h.clone(),
        };
        if round == limit {
            return Err(ToolError::RoundLimitExceeded { rounds: round, hint });
        }
        req = revise(&req, &hint);
        round += 1;
    }
}

/// A deterministic corrector: moves each anchor to its line when the anchor
/// occurs exactly once in the file, and otherwise leaves the request as is.
pub fn snap_to_candidate(sandbox: &Sandbox) -> impl FnMut(&EditRequest, &EditHint) -> EditRequest + '_ {
    move |req, _hint| {
        let mut next = req.clone();
        let Ok(file) = sandbox.resolve(&req.file).and_then(TextFile::read) else {
            return next;
        };
        let in_range = |line: usize| line >= 1 && line <= file.lines.len();
        if !(in_range(req.start_line) && file.matches(req.start_line, &req.start_line_string)) {
            if let [only] = file.locate(&req.start_line_string)[..] {
                next.start_line = only;
            }
        }
        if !(in_range(req.end_line) && file.matches(req.end_line, &req.end_line_string)) {
            if let [only] = file.locate(&req.end_line_string)[..] {
                next.end_line = only;
            }
        }
        next
    }
}

fn indent_width(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

/// Replaces the indentation block that starts at the unique line beginning
/// with `signature`.
pub fn replace_function(
    file: &str,
    signature: &str,
    new_code: &str,
    sandbox: &Sandbox,
) -> Result<EditOutcome, ToolError> {
    check_anchor(signature, "signature")?;
    let mut text = TextFile::read(sandbox.resolve(file)?)?;
    let sig = signature.trim();
    let candidates: Vec<usize> =
        text.lines.iter().enumerate().filter(|(_, l)| l.trim().starts_with(sig)).map(|(i, _)| i + 1).collect();
    let def_line = match candidates.as_slice() {
        [only] => *only,
        _ => {
            return Ok(EditOutcome::mismatch(EditHint {
                anchor: AnchorSide::Signature,
                given_line: 0,
                candidate_lines: candidates,
            }))
        }
    };
    let def_indent = indent_width(&text.lines[def_line - 1]);
    let mut last = def_line;
    for (i, line) in text.lines.iter().enumerate().skip(def_line) {
        if line.trim().is_empty() {
            continue;
        }
        if indent_width(line) > def_indent {
            last = i + 1;
        } else {
            break;
        }
    }
    text.splice(def_line, last, new_code);
    text.write()?;
    Ok(EditOutcome::applied())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(content: &str) -> (tempfile::TempDir, Sandbox) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("f.py"), content).unwrap();
        let sb = Sandbox::new(dir.path()).unwrap();
        (dir, sb)
    }

    fn req(start: usize, end: usize, sa: &str, ea: &str, content: &str) -> EditRequest {
        EditRequest {
            file: "f.py".into(),
            start_line: start,
            end_line: end,
            start_line_string: sa.into(),
            end_line_string: ea.into(),
            new_content: content.into(),
        }
    }

    fn read(dir: &tempfile::TempDir) -> String {
        fs::read_to_string(dir.path().join("f.py")).unwrap()
    }

    #[test]
    fn single_line_replace() {
        let (d, sb) = setup("a\nb\nc\n");
        let out = edit_file(&req(2, 2, "b", "b", "B"), &sb).unwrap();
        assert!(out.is_applied());
        assert_eq!(read(&d), "a\nB\nc\n");
    }

    #[test]
    fn multi_line_and_deletion() {
        let (d, sb) = setup("a\nb\nc\nd");
        edit_file(&req(2, 3, "b", "c", "x\ny\nz\n"), &sb).unwrap();
        assert_eq!(read(&d), "a\nx\ny\nz\nd");
        edit_file(&req(2, 4, "x", "z", ""), &sb).unwrap();
        assert_eq!(read(&d), "a\nd");
    }

    #[test]
    fn off_by_one_start() {
        let mut content = String::new();
        for i in 1..=12 {
            content.push_str(&if i == 10 { "def f():\n".to_string() } else { format!("line{i}\n") });
        }
        let (d, sb) = setup(&content);
        let out = edit_file(&req(9, 10, "def f():", "def f():", "x"), &sb).unwrap();
        assert_eq!(out.status, EditStatus::Mismatch);
        assert_eq!(out.hint, Some(EditHint { anchor: AnchorSide::Start, given_line: 9, candidate_lines: vec![10] }));
        assert_eq!(read(&d), content);
    }

    #[test]
    fn end_anchor_checked_after_start() {
        let (_d, sb) = setup("a\nb\nc\n");
        let out = edit_file(&req(1, 2, "a", "c", "x"), &sb).unwrap();
        assert_eq!(out.hint, Some(EditHint { anchor: AnchorSide::End, given_line: 2, candidate_lines: vec![3] }));
    }

    #[test]
    fn duplicate_candidates() {
        let lines: Vec<String> =
            (1..=14).map(|i| if i == 4 || i == 12 { "    return x".to_string() } else { format!("l{i}") }).collect();
        let (_d, sb) = setup(&lines.join("\n"));
        let out = edit_file(&req(7, 7, "return x", "return x", ""), &sb).unwrap();
        assert_eq!(out.hint.unwrap().candidate_lines, vec![4, 12]);
    }

    #[test]
    fn errors() {
        let (_d, sb) = setup("a\nb\n");
        assert!(matches!(edit_file(&req(3, 3, "a", "a", ""), &sb), Err(ToolError::LineOutOfRange { line: 3, len: 2 })));
        assert!(matches!(edit_file(&req(0, 1, "a", "a", ""), &sb), Err(ToolError::LineOutOfRange { .. })));
        assert!(matches!(edit_file(&req(2, 1, "b", "a", ""), &sb), Err(ToolError::InvalidRequest(_))));
        assert!(matches!(edit_file(&req(1, 1, " ", "a", ""), &sb), Err(ToolError::InvalidRequest(_))));
        let mut missing = req(1, 1, "a", "a", "");
        missing.file = "nope.py".into();
        assert!(matches!(edit_file(&missing, &sb), Err(ToolError::FileNotFound(_))));
        missing.file = "../f.py".into();
        assert!(matches!(edit_file(&missing, &sb), Err(ToolError::PathEscape(_))));
    }

    #[test]
    fn locate_rules() {
        let (d, _sb) = setup("x\ny\nx\n");
        let p = d.path().join("f.py");
        assert_eq!(locate_anchor(&p, "x").unwrap(), vec![1, 3]);
        assert_eq!(locate_anchor(&p, "zz").unwrap(), Vec::<usize>::new());
        assert_eq!(locate_anchor(&p, "  y  ").unwrap(), vec![2]);
        assert!(matches!(locate_anchor(&d.path().join("q"), "x"), Err(ToolError::FileNotFound(_))));
    }

    #[test]
    fn loop_snaps_in_two_rounds() {
        let (d, sb) = setup("a\nb\nc\nd\n");
        let (out, rounds) = corrected_edit_loop(req(1, 2, "b", "c", "BC"), &sb, 5, snap_to_candidate(&sb)).unwrap();
        assert!(out.is_applied());
        assert_eq!((rounds, out.rounds_used), (2, 2));
        assert_eq!(read(&d), "a\nBC\nd\n");
    }

    #[test]
    fn loop_first_try() {
        let (_d, sb) = setup("a\nb\n");
        let (_, rounds) = corrected_edit_loop(req(1, 1, "a", "a", "A"), &sb, 3, snap_to_candidate(&sb)).unwrap();
        assert_eq!(rounds, 1);
    }

    #[test]
    fn loop_gives_up() {
        let (d, sb) = setup("a\nb\n");
        let err = corrected_edit_loop(req(1, 1, "zzz", "a", "A"), &sb, 3, snap_to_candidate(&sb)).unwrap_err();
        match err {
            ToolError::RoundLimitExceeded { rounds, hint } => {
                assert_eq!(rounds, 3);
                assert!(hint.candidate_lines.is_empty());
            }
            e => panic!("{e}"),
        }
        assert_eq!(read(&d), "a\nb\n");
    }

    #[test]
    fn hint_message_mentions_lines() {
        let h = EditHint { anchor: AnchorSide::Start, given_line: 7, candidate_lines: vec![4, 12] };
        let msg = h.message(Some(&req(7, 7, "return x", "return x", "")));
        assert!(msg.contains("line 7") && msg.contains("4, 12"), "{msg}");
    }

    const PY: &str = "import os\n\ndef add(a, b):\n    s = a + b\n\n    return s\n\ndef sub(a, b):\n    return a - b\n";

    #[test]
    fn replace_function_block() {
        let (d, sb) = setup(PY);
        let out = replace_function("f.py", "def add(a, b):", "def add(a, b):\n    return a + b", &sb).unwrap();
        assert!(out.is_applied());
        assert_eq!(read(&d), "import os\n\ndef add(a, b):\n    return a + b\n\ndef sub(a, b):\n    return a - b\n");
    }

    #[test]
    fn replace_function_nested_method() {
        let src = "class A:\n    def m(self):\n        return 1\n\n    def n(self):\n        return 2\n";
        let (d, sb) = setup(src);
        replace_function("f.py", "def m(self)", "    def m(self):\n        return 10", &sb).unwrap();
        assert_eq!(read(&d), "class A:\n    def m(self):\n        return 10\n\n    def n(self):\n        return 2\n");
    }

    #[test]
    fn replace_function_missing_and_ambiguous() {
        let (d, sb) = setup(PY);
        let out = replace_function("f.py", "def mul(", "x", &sb).unwrap();
        assert_eq!(out.status, EditStatus::Mismatch);
        assert!(out.hint.as_ref().unwrap().candidate_lines.is_empty());
        let out = replace_function("f.py", "def ", "x", &sb).unwrap();
        assert_eq!(out.hint.unwrap().candidate_lines, vec![3, 8]);
        assert_eq!(read(&d), PY);
    }
}

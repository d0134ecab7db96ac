//! Hand-agent command wire format.
//!
//! A completion carries at most one call `name(arg, arg, key=value)`,
//! preferably inside a fenced block. Arguments are bare tokens or quoted
//! strings (`"..."`, `'...'`, or triple-quoted for multi-line text).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::registry::{CommandSpec, ToolRegistry};
use crate::toolkit::EditRequest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCommand {
    pub name: String,
    pub domain: String,
    /// Bound by parameter name.
    pub args: BTreeMap<String, String>,
    /// The call text as emitted.
    pub raw: String,
}

impl ToolCommand {
    pub fn arg(&self, name: &str) -> Option<&str> {
        self.args.get(name).map(String::as_str)
    }

    fn required(&self, name: &str) -> Result<&str, String> {
        self.arg(name).ok_or_else(|| format!("missing argument `{name}`"))
    }

    fn line_number(&self, name: &str) -> Result<usize, String> {
        let v = self.required(name)?;
        v.trim().parse().map_err(|_| format!("`{name}` must be a line number, got {v:?}"))
    }

    pub fn edit_request(&self) -> Result<EditRequest, String> {
        Ok(EditRequest {
            file: self.required("file")?.to_string(),
            start_line: self.line_number("start_line")?,
            end_line: self.line_number("end_line")?,
            start_line_string: self.required("start_line_string")?.to_string(),
            end_line_string: self.required("end_line_string")?.to_string(),
            new_content: self.required("new_content")?.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionKind {
    /// A real command, but from a domain this agent was not given.
    Misrouted,
    Unknown,
    NoCommand,
    BadArguments,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub kind: RejectionKind,
    pub name: Option<String>,
    /// Domain the command belongs to, for misrouted commands.
    pub domain: Option<String>,
    pub raw: String,
    pub message: String,
}

impl Rejection {
    /// Corrective observation shown to the agent.
    pub fn observation(&self, allowed: &[&CommandSpec]) -> String {
        let names: Vec<&str> = allowed.iter().map(|c| c.name.as_str()).collect();
        format!("error: {} Available commands: {}.", self.message, names.join(", "))
    }
}

/// Text of the first fenced block, or from the first line that looks like a
/// call.
fn command_text(completion: &str) -> Option<&str> {
    if let Some(open) = completion.find("```") {
        let after = &completion[open + 3..];
        // language tag on the fence line
        let body_start = match after.find('\n') {
            Some(nl) if !after[..nl].contains('(') => nl + 1,
            _ => 0,
        };
        let body = &after[body_start..];
        let body = body.find("```").map_or(body, |close| &body[..close]);
        let body = body.trim();
        return (!body.is_empty()).then_some(body);
    }
    let mut offset = 0;
    for line in completion.split_inclusive('\n') {
        let t = line.trim_start();
        let ident_len = t.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(t.len());
        if ident_len > 0 && !t.starts_with(|c: char| c.is_ascii_digit()) && t[ident_len..].starts_with('(') {
            let start = offset + (line.len() - t.len());
            return Some(completion[start..].trim_end());
        }
        offset += line.len();
    }
    None
}

struct Lexer<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn skip_ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start().len();
    }

    fn ident(&mut self) -> Option<&'a str> {
        let r = self.rest();
        let len = r.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(r.len());
        if len == 0 || r.starts_with(|c: char| c.is_ascii_digit()) {
            return None;
        }
        self.pos += len;
        Some(&r[..len])
    }

    fn quoted(&mut self) -> Result<String, String> {
        let r = self.rest();
        for triple in ["\"\"\"", "'''"] {
            if let Some(body) = r.strip_prefix(triple) {
                let end = body.find(triple).ok_or("unterminated triple-quoted string")?;
                self.pos += 3 + end + 3;
                let text = body[..end].strip_prefix('\n').unwrap_or(&body[..end]);
                return Ok(text.to_string());
            }
        }
        let quote = r.chars().next().expect("caller checked");
        let mut out = String::new();
        let mut chars = r.char_indices().skip(1);
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => {
                    let (_, esc) = chars.next().ok_or("unterminated string")?;
                    out.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        '0' => '\0',
                        other => other,
                    });
                }
                c if c == quote => {
                    self.pos += i + c.len_utf8();
                    return Ok(out);
                }
                c => out.push(c),
            }
        }
        Err("unterminated string".into())
    }

    fn bare(&mut self) -> Result<String, String> {
        let r = self.rest();
        let mut depth = 0i32;
        for (i, c) in r.char_indices() {
            match c {
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' if depth > 0 => depth -= 1,
                ',' | ')' if depth == 0 => {
                    self.pos += i;
                    return Ok(r[..i].trim().to_string());
                }
                _ => {}
            }
        }
        Err("missing closing parenthesis".into())
    }

    fn value(&mut self) -> Result<String, String> {
        self.skip_ws();
        if self.rest().starts_with(['"', '\'']) {
            self.quoted()
        } else {
            self.bare()
        }
    }
}

type RawArgs = (Vec<String>, Vec<(String, String)>);

fn parse_call(text: &str) -> Result<(String, RawArgs), String> {
    let mut lx = Lexer { s: text, pos: 0 };
    let name = lx.ident().ok_or("expected a command name")?.to_string();
    lx.skip_ws();
    if !lx.rest().starts_with('(') {
        return Err(format!("expected `(` after `{name}`"));
    }
    lx.pos += 1;
    let mut positional = Vec::new();
    let mut named = Vec::new();
    lx.skip_ws();
    if lx.rest().starts_with(')') {
        return Ok((name, (positional, named)));
    }
    loop {
        lx.skip_ws();
        let save = lx.pos;
        let key = lx.ident().and_then(|k| {
            lx.skip_ws();
            let r = lx.rest();
            (r.starts_with('=') && !r.starts_with("==")).then(|| {
                lx.pos += 1;
                k.to_string()
            })
        });
        if key.is_none() {
            lx.pos = save;
        }
        let value = lx.value()?;
        match key {
            Some(k) => named.push((k, value)),
            None if !named.is_empty() => return Err("positional argument after named argument".into()),
            None => positional.push(value),
        }
        lx.skip_ws();
        match lx.rest().chars().next() {
            Some(',') => lx.pos += 1,
            Some(')') => return Ok((name, (positional, named))),
            _ => return Err("expected `,` or `)`".into()),
        }
    }
}

fn bind(spec: &CommandSpec, (positional, named): RawArgs) -> Result<BTreeMap<String, String>, String> {
    if positional.len() > spec.params.len() {
        return Err(format!("`{}` takes {} arguments, got {}", spec.name, spec.params.len(), positional.len()));
    }
    let mut args = BTreeMap::new();
    for (param, value) in spec.params.iter().zip(positional) {
        args.insert(param.name.clone(), value);
    }
    for (key, value) in named {
        if !spec.params.iter().any(|p| p.name == key) {
            return Err(format!("`{}` has no parameter `{key}`", spec.name));
        }
        if args.insert(key.clone(), value).is_some() {
            return Err(format!("argument `{key}` given twice"));
        }
    }
    for p in &spec.params {
        match (&p.default, args.contains_key(&p.name)) {
            (_, true) => {}
            (Some(d), false) => {
                args.insert(p.name.clone(), d.clone());
            }
            (None, false) => return Err(format!("missing argument `{}`", p.name)),
        }
    }
    Ok(args)
}

/// Extracts and validates the command in `completion`. Only commands from
/// `allowed_domains` are accepted; a command belonging to any other
/// registered domain is rejected as misrouted.
pub fn parse_command(
    completion: &str,
    registry: &ToolRegistry,
    allowed_domains: &[&str],
) -> Result<ToolCommand, Rejection> {
    let reject = |kind, name: Option<String>, domain: Option<String>, raw: &str, message: String| Rejection {
        kind,
        name,
        domain,
        raw: raw.to_string(),
        message,
    };
    let Some(text) = command_text(completion) else {
        return Err(reject(
            RejectionKind::NoCommand,
            None,
            None,
            completion.trim(),
            "no command found; emit exactly one command in a fenced block, or `DONE: <result>`.".into(),
        ));
    };
    let (name, raw_args) = match parse_call(text) {
        Ok(p) => p,
        Err(e) => {
            let name = Lexer { s: text, pos: 0 }.ident().map(str::to_string);
            let kind = match &name {
                Some(n) if registry.domain_of(n).is_none() => RejectionKind::Unknown,
                _ => RejectionKind::BadArguments,
            };
            if kind == RejectionKind::Unknown {
                let n = name.clone().unwrap_or_default();
                return Err(reject(kind, name, None, text, format!("unknown command `{n}`.")));
            }
            return Err(reject(kind, name, None, text, format!("could not parse command: {e}.")));
        }
    };
    let Some(domain) = registry.domain_of(&name) else {
        return Err(reject(
            RejectionKind::Unknown,
            Some(name.clone()),
            None,
            text,
            format!("unknown command `{name}`."),
        ));
    };
    if !allowed_domains.contains(&domain) {
        return Err(reject(
            RejectionKind::Misrouted,
            Some(name.clone()),
            Some(domain.to_string()),
            text,
            format!("`{name}` is not available for this task."),
        ));
    }
    let spec = registry.command(&name).expect("domain_of found it");
    let args = bind(spec, raw_args)
        .map_err(|e| reject(RejectionKind::BadArguments, Some(name.clone()), None, text, format!("{e}.")))?;
    Ok(ToolCommand { name, domain: domain.to_string(), args, raw: text.to_string() })
}

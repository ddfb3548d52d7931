//! Text format for trees.
//!
//! ```text
//! node    := KIND [NAME] ['(' args ')'] ['{' node* '}']
//! KIND    := sequence | fallback | parallel | reactive_sequence
//!          | infinite_loop | condition | action
//! args    := arg (',' arg)*
//! arg     := ID | key '=' value
//! ```
//!
//! Leaves take their condition or module id as the first positional
//! argument; `parallel` takes `M=`. Any node accepts `_while = <predicate>`
//! and `_onSuccess = <key = value>`. Values are booleans, numbers,
//! `;`-separated vectors or text; double quotes force text. `#` starts a
//! comment that runs to the end of the line.

use std::fmt::Write as _;

use thiserror::Error;

use super::{ActionParams, BtNode, Mutation, NodeKind, Params, Predicate, Value};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

const KINDS: [&str; 7] =
    ["sequence", "fallback", "parallel", "reactive_sequence", "infinite_loop", "condition", "action"];

pub fn parse_tree(text: &str) -> Result<BtNode, ParseError> {
    let mut p = Parser { chars: text.chars().collect(), pos: 0 };
    let root = p.node()?;
    p.skip_trivia();
    if p.pos < p.chars.len() {
        return Err(p.error(format!("unexpected trailing input `{}`", p.peek_word())));
    }
    Ok(root)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

enum Arg {
    Positional(String),
    Keyed(String, RawValue),
}

enum RawValue {
    Bare(String),
    Quoted(String),
}

impl Parser {
    fn error(&self, message: impl Into<String>) -> ParseError {
        self.error_at(self.pos, message)
    }

    fn error_at(&self, pos: usize, message: impl Into<String>) -> ParseError {
        let before = &self.chars[..pos.min(self.chars.len())];
        let line = 1 + before.iter().filter(|c| **c == '\n').count();
        let column = 1 + before.iter().rev().take_while(|c| **c != '\n').count();
        ParseError { line, column, message: message.into() }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_word(&self) -> String {
        self.chars[self.pos..].iter().take_while(|c| !c.is_whitespace()).take(24).collect()
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += 1;
            } else if c == '#' {
                while self.peek().is_some_and(|c| c != '\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(is_word_char) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn node(&mut self) -> Result<BtNode, ParseError> {
        self.skip_trivia();
        let start = self.pos;
        let kind_word = self.word();
        if kind_word.is_empty() {
            return Err(match self.peek() {
                Some(_) => self.error(format!("expected a node kind, found `{}`", self.peek_word())),
                None => self.error("expected a node kind, found end of input"),
            });
        }
        if !KINDS.contains(&kind_word.as_str()) {
            return Err(self.error_at(start, format!("unknown node kind `{kind_word}`")));
        }
        self.skip_trivia();
        let mut name = None;
        if self.peek().is_some_and(is_word_char) {
            let at = self.pos;
            let w = self.word();
            if KINDS.contains(&w.as_str()) {
                return Err(self.error_at(at, format!("expected `(` or `{{` after `{kind_word}`, found `{w}`")));
            }
            name = Some(w);
            self.skip_trivia();
        }
        let args_at = self.pos;
        let args = if self.peek() == Some('(') {
            self.pos += 1;
            self.args()?
        } else {
            Vec::new()
        };
        self.skip_trivia();
        let mut children = Vec::new();
        let has_block = self.peek() == Some('{');
        if has_block {
            self.pos += 1;
            loop {
                self.skip_trivia();
                match self.peek() {
                    Some('}') => {
                        self.pos += 1;
                        break;
                    }
                    None => return Err(self.error("unclosed `{`")),
                    _ => children.push(self.node()?),
                }
            }
        }
        let mut node = self.build(&kind_word, args, args_at)?;
        let is_leaf = node.kind.is_leaf();
        if is_leaf && has_block {
            return Err(self.error_at(start, format!("{kind_word} leaf cannot have children")));
        }
        if !is_leaf && !has_block {
            return Err(self.error_at(start, format!("{kind_word} needs a `{{ ... }}` block")));
        }
        node.name = name;
        node.children = children;
        node.validate().map_err(|m| self.error_at(start, m))?;
        Ok(node)
    }

    fn args(&mut self) -> Result<Vec<Arg>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            if self.peek() == Some(')') && out.is_empty() {
                self.pos += 1;
                return Ok(out);
            }
            out.push(self.arg()?);
            self.skip_trivia();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(c) => return Err(self.error(format!("expected `,` or `)`, found `{c}`"))),
                None => return Err(self.error("unclosed `(`")),
            }
        }
    }

    fn arg(&mut self) -> Result<Arg, ParseError> {
        let start = self.pos;
        let key = self.word();
        self.skip_inline_space();
        let keyed = !key.is_empty() && self.peek() == Some('=') && self.chars.get(self.pos + 1) != Some(&'=');
        if !keyed {
            self.pos = start;
            return match self.raw_value()? {
                RawValue::Bare(s) if !s.is_empty() => Ok(Arg::Positional(s)),
                RawValue::Quoted(s) => Ok(Arg::Positional(s)),
                _ => Err(self.error("empty argument")),
            };
        }
        self.pos += 1;
        self.skip_inline_space();
        Ok(Arg::Keyed(key, self.raw_value()?))
    }

    fn skip_inline_space(&mut self) {
        while self.peek().is_some_and(|c| c == ' ' || c == '\t') {
            self.pos += 1;
        }
    }

    fn raw_value(&mut self) -> Result<RawValue, ParseError> {
        if self.peek() == Some('"') {
            self.pos += 1;
            let mut s = String::new();
            loop {
                match self.peek() {
                    Some('"') => {
                        self.pos += 1;
                        return Ok(RawValue::Quoted(s));
                    }
                    Some('\\') => {
                        self.pos += 1;
                        match self.peek() {
                            Some(c @ ('"' | '\\')) => s.push(c),
                            Some('n') => s.push('\n'),
                            _ => return Err(self.error("bad escape in quoted value")),
                        }
                        self.pos += 1;
                    }
                    Some(c) => {
                        s.push(c);
                        self.pos += 1;
                    }
                    None => return Err(self.error("unterminated quoted value")),
                }
            }
        }
        let start = self.pos;
        while self.peek().is_some_and(|c| !matches!(c, ',' | ')' | '(' | '{' | '}' | '#' | '\n')) {
            self.pos += 1;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        Ok(RawValue::Bare(s.trim().to_string()))
    }

    fn build(&self, kind: &str, args: Vec<Arg>, at: usize) -> Result<BtNode, ParseError> {
        let err = |m: String| self.error_at(at, m);
        let mut positional = Vec::new();
        let mut params = Params::new();
        let mut pre_while = None;
        let mut post = None;
        for arg in args {
            match arg {
                Arg::Positional(s) => positional.push(s),
                Arg::Keyed(k, v) => {
                    if params.contains_key(&k) || (k == "_while" && pre_while.is_some()) {
                        return Err(err(format!("duplicate argument `{k}`")));
                    }
                    match k.as_str() {
                        "_while" => pre_while = Some(Predicate::parse(raw_text(&v)).map_err(&err)?),
                        "_onSuccess" => post = Some(Mutation::parse(raw_text(&v)).map_err(&err)?),
                        _ => {
                            let value = match v {
                                RawValue::Bare(s) => Value::parse_token(&s).map_err(&err)?,
                                RawValue::Quoted(s) => Value::Text(s),
                            };
                            params.insert(k, value);
                        }
                    }
                }
            }
        }
        let kind = match kind {
            "condition" | "action" => {
                let [id] = positional.as_slice() else {
                    return Err(err(format!("{kind} needs exactly one id argument")));
                };
                if kind == "condition" {
                    NodeKind::Condition { id: id.clone(), params }
                } else {
                    let typed = ActionParams::from_params(&params).map_err(|e| err(e.to_string()))?;
                    NodeKind::Action { module: id.clone(), params: typed, raw: params }
                }
            }
            other => {
                let threshold = if other == "parallel" {
                    let raw = match (params.remove("M").or_else(|| params.remove("success_threshold")), positional.pop())
                    {
                        (Some(v), None) => v,
                        (None, Some(p)) => Value::parse_token(&p).map_err(&err)?,
                        _ => return Err(err("parallel needs one threshold `M=`".into())),
                    };
                    match raw.as_f64() {
                        Some(m) if m.fract() == 0.0 && m >= 0.0 => Some(m as usize),
                        _ => return Err(err(format!("parallel threshold `{raw}` is not a count"))),
                    }
                } else {
                    None
                };
                if let Some(p) = positional.first() {
                    return Err(err(format!("unexpected argument `{p}` for {other}")));
                }
                if let Some(k) = params.keys().next() {
                    return Err(err(format!("unexpected argument `{k}` for {other}")));
                }
                match other {
                    "sequence" => NodeKind::Sequence,
                    "fallback" => NodeKind::Fallback,
                    "reactive_sequence" => NodeKind::ReactiveSequence,
                    "infinite_loop" => NodeKind::InfiniteLoop,
                    _ => NodeKind::Parallel { success_threshold: threshold.unwrap_or(0) },
                }
            }
        };
        Ok(BtNode { kind, name: None, children: Vec::new(), pre_while, post_on_success: post })
    }
}

fn raw_text(v: &RawValue) -> &str {
    match v {
        RawValue::Bare(s) | RawValue::Quoted(s) => s,
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-' || c == '.'
}

/// Canonical text form; `parse_tree(&serialize_tree(t)) == t`.
pub fn serialize_tree(root: &BtNode) -> String {
    let mut out = String::new();
    write_node(root, 0, &mut out);
    out
}

fn write_node(node: &BtNode, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    out.push_str(&indent);
    out.push_str(node.kind.keyword());
    if let Some(name) = &node.name {
        out.push(' ');
        out.push_str(name);
    }
    let mut args: Vec<String> = Vec::new();
    match &node.kind {
        NodeKind::Condition { id, params } | NodeKind::Action { module: id, raw: params, .. } => {
            args.push(quote(id));
            args.extend(params.iter().map(|(k, v)| format!("{k} = {}", value_text(v))));
        }
        NodeKind::Parallel { success_threshold } => args.push(format!("M = {success_threshold}")),
        _ => {}
    }
    if let Some(p) = &node.pre_while {
        args.push(format!("_while = {}", quote(&p.to_string())));
    }
    if let Some(m) = &node.post_on_success {
        args.push(format!("_onSuccess = {}", quote(&m.to_string())));
    }
    if !args.is_empty() {
        let _ = write!(out, "({})", args.join(", "));
    }
    if node.kind.is_leaf() {
        out.push('\n');
    } else if node.children.is_empty() {
        out.push_str(" {}\n");
    } else {
        out.push_str(" {\n");
        for c in &node.children {
            write_node(c, depth + 1, out);
        }
        out.push_str(&indent);
        out.push_str("}\n");
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Text(t) if Value::parse_token(t).ok().as_ref() != Some(v) || needs_quotes(t) => quoted(t),
        other => other.to_string(),
    }
}

fn quote(s: &str) -> String {
    if needs_quotes(s) {
        quoted(s)
    } else {
        s.to_string()
    }
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || s.trim() != s
        || s.chars().any(|c| matches!(c, ',' | '(' | ')' | '{' | '}' | '"' | '#' | '\n' | '\\'))
}

fn quoted(s: &str) -> String {
    let escaped = s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n");
    format!("\"{escaped}\"")
}

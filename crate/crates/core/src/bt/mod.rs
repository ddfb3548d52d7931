//! Behavior trees: node model, blackboard, tick engine and a text format.
//!
//! Control nodes follow the usual return rules: a sequence fails on the
//! first failing child and resumes a running child on the next tick; a
//! fallback is its dual; a parallel node with threshold `M` succeeds once
//! `M` children succeeded and fails once more than `N - M` failed; a
//! reactive sequence re-ticks every child each loop and halts a running
//! child when an earlier one fails. Action leaves are asynchronous: they
//! are started once and polled on later ticks until they report a
//! terminal status or are halted.

mod engine;
mod params;
mod parse;

pub use engine::{ActionCall, BehaviorTree, BtEnv, NodeId, NodeStatus};
pub use params::{ActionParams, AngularMode, CommandMode, LinearMode, Orientation};
pub use parse::{parse_tree, serialize_tree, ParseError};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

impl TickStatus {
    pub fn is_terminal(self) -> bool {
        self != TickStatus::Running
    }

    pub fn letter(self) -> char {
        match self {
            TickStatus::Success => 'S',
            TickStatus::Failure => 'F',
            TickStatus::Running => 'R',
        }
    }
}

impl From<bool> for TickStatus {
    fn from(ok: bool) -> Self {
        if ok {
            TickStatus::Success
        } else {
            TickStatus::Failure
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BtError {
    #[error("no condition registered as `{0}`")]
    UnknownCondition(String),
    #[error("no action module registered as `{0}`")]
    UnknownAction(String),
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },
}

/// Parameter and blackboard value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Vector(Vec<f64>),
    Text(String),
}

impl Value {
    pub fn truthy(&self) -> bool {
        match self {
            Value::Bool(b) => *b,
            Value::Number(n) => *n != 0.0,
            Value::Vector(v) => !v.is_empty(),
            Value::Text(t) => !t.is_empty() && t != "false",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    /// Interprets a bare token: booleans, numbers, `;`-separated vectors,
    /// otherwise text.
    pub fn parse_token(raw: &str) -> Result<Value, String> {
        let raw = raw.trim();
        match raw {
            "true" => return Ok(Value::Bool(true)),
            "false" => return Ok(Value::Bool(false)),
            _ => {}
        }
        if let Some(n) = parse_finite(raw) {
            return Ok(Value::Number(n));
        }
        if raw.contains(';') {
            let parts: Vec<&str> = raw.split(';').map(str::trim).collect();
            let nums: Vec<Option<f64>> = parts.iter().map(|p| parse_finite(p)).collect();
            if nums.iter().all(Option::is_some) {
                return Ok(Value::Vector(nums.into_iter().flatten().collect()));
            }
            let looks_numeric = parts.iter().any(|p| parse_finite(p).is_some());
            if looks_numeric {
                return Err(format!("malformed vector `{raw}`"));
            }
        }
        Ok(Value::Text(raw.to_string()))
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    let first = s.chars().next()?;
    if !(first.is_ascii_digit() || first == '-' || first == '+' || first == '.') {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join(";"))
            }
            Value::Text(t) => write!(f, "{t}"),
        }
    }
}

pub type Params = BTreeMap<String, Value>;

/// Shared key-value memory of a tree.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Blackboard {
    entries: BTreeMap<String, Value>,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn set(&mut self, key: impl Into<String>, value: Value) {
        self.entries.insert(key.into(), value);
    }

    pub fn set_flag(&mut self, key: impl Into<String>, on: bool) {
        self.set(key, Value::Bool(on));
    }

    pub fn flag(&self, key: &str) -> bool {
        self.get(key).is_some_and(Value::truthy)
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.entries.iter()
    }
}

/// Guard evaluated against the blackboard: `key`, `!key`, `key == v`, `key != v`.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Truthy(String),
    Falsy(String),
    Equals(String, Value),
    NotEquals(String, Value),
}

impl Predicate {
    pub fn parse(raw: &str) -> Result<Predicate, String> {
        let raw = raw.trim();
        let key_ok = |k: &str| !k.is_empty() && k.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.');
        if let Some((k, v)) = raw.split_once("==") {
            let k = k.trim();
            if !key_ok(k) {
                return Err(format!("bad predicate key in `{raw}`"));
            }
            return Ok(Predicate::Equals(k.to_string(), Value::parse_token(v)?));
        }
        if let Some((k, v)) = raw.split_once("!=") {
            let k = k.trim();
            if !key_ok(k) {
                return Err(format!("bad predicate key in `{raw}`"));
            }
            return Ok(Predicate::NotEquals(k.to_string(), Value::parse_token(v)?));
        }
        if let Some(k) = raw.strip_prefix('!') {
            let k = k.trim();
            if key_ok(k) {
                return Ok(Predicate::Falsy(k.to_string()));
            }
        } else if key_ok(raw) {
            return Ok(Predicate::Truthy(raw.to_string()));
        }
        Err(format!("cannot parse predicate `{raw}`"))
    }

    pub fn eval(&self, bb: &Blackboard) -> bool {
        match self {
            Predicate::Truthy(k) => bb.flag(k),
            Predicate::Falsy(k) => !bb.flag(k),
            Predicate::Equals(k, v) => bb.get(k) == Some(v),
            Predicate::NotEquals(k, v) => bb.get(k) != Some(v),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Truthy(k) => write!(f, "{k}"),
            Predicate::Falsy(k) => write!(f, "!{k}"),
            Predicate::Equals(k, v) => write!(f, "{k} == {v}"),
            Predicate::NotEquals(k, v) => write!(f, "{k} != {v}"),
        }
    }
}

/// Blackboard assignment applied when a node succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    pub key: String,
    pub value: Value,
}

impl Mutation {
    pub fn parse(raw: &str) -> Result<Mutation, String> {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| format!("expected `key = value`, got `{raw}`"))?;
        let k = k.trim();
        if k.is_empty() || v.trim_start().starts_with('=') {
            return Err(format!("expected `key = value`, got `{raw}`"));
        }
        Ok(Mutation { key: k.to_string(), value: Value::parse_token(v)? })
    }

    pub fn apply(&self, bb: &mut Blackboard) {
        bb.set(self.key.clone(), self.value.clone());
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.key, self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Sequence,
    Fallback,
    /// Succeeds when at least `success_threshold` children succeeded.
    Parallel { success_threshold: usize },
    ReactiveSequence,
    /// Re-ticks its single child forever; never terminates.
    InfiniteLoop,
    Condition { id: String, params: Params },
    Action { module: String, params: ActionParams, raw: Params },
}

impl NodeKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            NodeKind::Sequence => "sequence",
            NodeKind::Fallback => "fallback",
            NodeKind::Parallel { .. } => "parallel",
            NodeKind::ReactiveSequence => "reactive_sequence",
            NodeKind::InfiniteLoop => "infinite_loop",
            NodeKind::Condition { .. } => "condition",
            NodeKind::Action { .. } => "action",
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, NodeKind::Condition { .. } | NodeKind::Action { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtNode {
    pub kind: NodeKind,
    pub name: Option<String>,
    pub children: Vec<BtNode>,
    pub pre_while: Option<Predicate>,
    pub post_on_success: Option<Mutation>,
}

impl BtNode {
    fn control(kind: NodeKind, children: Vec<BtNode>) -> Self {
        BtNode { kind, name: None, children, pre_while: None, post_on_success: None }
    }

    pub fn sequence(children: Vec<BtNode>) -> Self {
        Self::control(NodeKind::Sequence, children)
    }

    pub fn fallback(children: Vec<BtNode>) -> Self {
        Self::control(NodeKind::Fallback, children)
    }

    pub fn reactive_sequence(children: Vec<BtNode>) -> Self {
        Self::control(NodeKind::ReactiveSequence, children)
    }

    pub fn parallel(success_threshold: usize, children: Vec<BtNode>) -> Self {
        Self::control(NodeKind::Parallel { success_threshold }, children)
    }

    pub fn infinite_loop(child: BtNode) -> Self {
        Self::control(NodeKind::InfiniteLoop, vec![child])
    }

    pub fn condition(id: &str) -> Self {
        Self::control(NodeKind::Condition { id: id.to_string(), params: Params::new() }, vec![])
    }

    pub fn action(module: &str) -> Self {
        Self::control(
            NodeKind::Action { module: module.to_string(), params: ActionParams::default(), raw: Params::new() },
            vec![],
        )
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn with_while(mut self, p: Predicate) -> Self {
        self.pre_while = Some(p);
        self
    }

    pub fn with_on_success(mut self, m: Mutation) -> Self {
        self.post_on_success = Some(m);
        self
    }

    /// Checks structural invariants: leaves have no children, parallel
    /// thresholds lie in `1..=N`, loops have exactly one child.
    pub fn validate(&self) -> Result<(), String> {
        match &self.kind {
            k if k.is_leaf() && !self.children.is_empty() => {
                return Err(format!("{} leaf cannot have children", k.keyword()));
            }
            NodeKind::Parallel { success_threshold: m } => {
                let n = self.children.len();
                if *m < 1 || *m > n {
                    return Err(format!("parallel threshold M={m} outside 1..={n}"));
                }
            }
            NodeKind::InfiniteLoop if self.children.len() != 1 => {
                return Err("infinite_loop needs exactly one child".into());
            }
            _ => {}
        }
        self.children.iter().try_for_each(BtNode::validate)
    }

    /// Human-readable label used in logs.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.kind {
            NodeKind::Condition { id, .. } => id.clone(),
            NodeKind::Action { module, .. } => module.clone(),
            k => k.keyword().to_string(),
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(BtNode::size).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_parsing() {
        assert_eq!(Value::parse_token("-1;0;0").unwrap(), Value::Vector(vec![-1.0, 0.0, 0.0]));
        assert_eq!(Value::parse_token(" 0.5 ").unwrap(), Value::Number(0.5));
        assert_eq!(Value::parse_token("Track").unwrap(), Value::Text("Track".into()));
        assert_eq!(Value::parse_token("true").unwrap(), Value::Bool(true));
        assert!(Value::parse_token("1;x;0").is_err());
    }

    #[test]
    fn predicates() {
        let mut bb = Blackboard::new();
        bb.set_flag("grasp_requested", true);
        bb.set("mode", Value::Text("laser".into()));
        assert!(Predicate::parse("grasp_requested").unwrap().eval(&bb));
        assert!(!Predicate::parse("!grasp_requested").unwrap().eval(&bb));
        assert!(Predicate::parse("mode == laser").unwrap().eval(&bb));
        assert!(Predicate::parse("mode != keyboard").unwrap().eval(&bb));
        assert!(!Predicate::parse("missing").unwrap().eval(&bb));
        assert!(Predicate::parse("a b").is_err());
    }

    #[test]
    fn mutation_applies() {
        let mut bb = Blackboard::new();
        Mutation::parse("grasp_requested = false").unwrap().apply(&mut bb);
        assert_eq!(bb.get("grasp_requested"), Some(&Value::Bool(false)));
        assert!(Mutation::parse("x == 1").is_err());
    }

    #[test]
    fn validation() {
        assert!(BtNode::parallel(0, vec![BtNode::condition("a")]).validate().is_err());
        assert!(BtNode::parallel(2, vec![BtNode::condition("a")]).validate().is_err());
        assert!(BtNode::parallel(1, vec![BtNode::condition("a")]).validate().is_ok());
        let mut leaf = BtNode::condition("a");
        leaf.children.push(BtNode::condition("b"));
        assert!(leaf.validate().is_err());
    }
}

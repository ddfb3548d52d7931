use super::{ActionParams, Blackboard, BtError, BtNode, Mutation, NodeKind, Params, Predicate, TickStatus};

/// Preorder index of a node inside a [`BehaviorTree`].
pub type NodeId = usize;

/// An action leaf as seen by the environment.
#[derive(Debug, Clone, Copy)]
pub struct ActionCall<'a> {
    pub node: NodeId,
    pub module: &'a str,
    pub params: &'a ActionParams,
    pub raw: &'a Params,
}

/// Conditions and action modules the tree calls into.
///
/// `start_action` is called once per activation; while the action reports
/// `Running`, later ticks call `poll_action` instead. `abort_action` is
/// delivered exactly once when a running action is halted.
pub trait BtEnv {
    fn condition(&mut self, id: &str, params: &Params, bb: &mut Blackboard) -> Result<bool, BtError>;
    fn start_action(&mut self, call: ActionCall<'_>, bb: &mut Blackboard) -> Result<TickStatus, BtError>;
    fn poll_action(&mut self, call: ActionCall<'_>, bb: &mut Blackboard) -> Result<TickStatus, BtError>;
    fn abort_action(&mut self, call: ActionCall<'_>, bb: &mut Blackboard);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeStatus {
    #[default]
    Idle,
    Running,
    Success,
    Failure,
}

impl From<TickStatus> for NodeStatus {
    fn from(s: TickStatus) -> Self {
        match s {
            TickStatus::Success => NodeStatus::Success,
            TickStatus::Failure => NodeStatus::Failure,
            TickStatus::Running => NodeStatus::Running,
        }
    }
}

#[derive(Debug, Clone)]
struct FlatNode {
    kind: NodeKind,
    label: String,
    children: Vec<NodeId>,
    pre_while: Option<Predicate>,
    post_on_success: Option<Mutation>,
}

#[derive(Debug, Clone, Default)]
struct RuntimeState {
    running: bool,
    /// Next child to tick for memoryful sequence/fallback nodes.
    cursor: usize,
    /// Terminal statuses already collected by a parallel node.
    finished: Vec<Option<TickStatus>>,
}

/// A validated tree plus its execution state.
#[derive(Debug, Clone)]
pub struct BehaviorTree {
    root: BtNode,
    nodes: Vec<FlatNode>,
    state: Vec<RuntimeState>,
    ticked: Vec<Option<TickStatus>>,
}

impl BehaviorTree {
    pub fn new(root: BtNode) -> Result<Self, String> {
        root.validate()?;
        let mut nodes = Vec::with_capacity(root.size());
        flatten(&root, &mut nodes);
        let n = nodes.len();
        Ok(Self { root, nodes, state: vec![RuntimeState::default(); n], ticked: vec![None; n] })
    }

    pub fn root(&self) -> &BtNode {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id].label
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id].kind
    }

    /// First node (in preorder) whose label matches.
    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label)
    }

    pub fn is_running(&self, id: NodeId) -> bool {
        self.state[id].running
    }

    /// Status each node returned during the most recent tick, `None` for
    /// nodes that were not ticked.
    pub fn last_tick(&self) -> &[Option<TickStatus>] {
        &self.ticked
    }

    pub fn status(&self, id: NodeId) -> NodeStatus {
        if self.state[id].running {
            NodeStatus::Running
        } else {
            self.ticked[id].map_or(NodeStatus::Idle, NodeStatus::from)
        }
    }

    /// Action leaves currently running, as `(node, module)`.
    pub fn running_actions(&self) -> Vec<(NodeId, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| match &n.kind {
                NodeKind::Action { module, .. } if self.state[id].running => Some((id, module.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn tick(&mut self, bb: &mut Blackboard, env: &mut dyn BtEnv) -> Result<TickStatus, BtError> {
        self.ticked.iter_mut().for_each(|t| *t = None);
        let mut ctx = Ctx { nodes: &self.nodes, state: &mut self.state, ticked: &mut self.ticked, bb, env };
        ctx.tick(0)
    }

    /// Halts `id` and its descendants; running actions receive one abort.
    pub fn halt_subtree(&mut self, id: NodeId, bb: &mut Blackboard, env: &mut dyn BtEnv) {
        let mut ctx = Ctx { nodes: &self.nodes, state: &mut self.state, ticked: &mut self.ticked, bb, env };
        ctx.halt(id);
    }

    pub fn halt(&mut self, bb: &mut Blackboard, env: &mut dyn BtEnv) {
        self.halt_subtree(0, bb, env);
    }
}

fn flatten(node: &BtNode, out: &mut Vec<FlatNode>) -> NodeId {
    let id = out.len();
    out.push(FlatNode {
        kind: node.kind.clone(),
        label: node.label(),
        children: Vec::new(),
        pre_while: node.pre_while.clone(),
        post_on_success: node.post_on_success.clone(),
    });
    let children: Vec<NodeId> = node.children.iter().map(|c| flatten(c, out)).collect();
    out[id].children = children;
    id
}

struct Ctx<'a> {
    nodes: &'a [FlatNode],
    state: &'a mut [RuntimeState],
    ticked: &'a mut [Option<TickStatus>],
    bb: &'a mut Blackboard,
    env: &'a mut dyn BtEnv,
}

impl Ctx<'_> {
    fn tick(&mut self, id: NodeId) -> Result<TickStatus, BtError> {
        let node = &self.nodes[id];
        if let Some(guard) = &node.pre_while {
            if !guard.eval(self.bb) {
                if self.state[id].running {
                    self.halt(id);
                }
                self.ticked[id] = Some(TickStatus::Failure);
                return Ok(TickStatus::Failure);
            }
        }
        let status = match &node.kind {
            NodeKind::Sequence => self.tick_memory(id, TickStatus::Success)?,
            NodeKind::Fallback => self.tick_memory(id, TickStatus::Failure)?,
            NodeKind::ReactiveSequence => self.tick_reactive(id)?,
            NodeKind::Parallel { success_threshold } => self.tick_parallel(id, *success_threshold)?,
            NodeKind::InfiniteLoop => {
                self.tick(node.children[0])?;
                TickStatus::Running
            }
            NodeKind::Condition { id: cond, params } => self.env.condition(cond, params, self.bb)?.into(),
            NodeKind::Action { module, params, raw } => {
                let call = ActionCall { node: id, module, params, raw };
                if self.state[id].running {
                    self.env.poll_action(call, self.bb)?
                } else {
                    self.env.start_action(call, self.bb)?
                }
            }
        };
        self.state[id].running = status == TickStatus::Running;
        if status == TickStatus::Success {
            if let Some(m) = &node.post_on_success {
                m.apply(self.bb);
            }
        }
        self.ticked[id] = Some(status);
        Ok(status)
    }

    /// Sequence (`advance_on = Success`) or fallback (`Failure`): children
    /// are ticked from the remembered cursor; a running child is resumed.
    fn tick_memory(&mut self, id: NodeId, advance_on: TickStatus) -> Result<TickStatus, BtError> {
        let children = &self.nodes[id].children;
        let mut i = self.state[id].cursor;
        loop {
            if i >= children.len() {
                self.state[id].cursor = 0;
                return Ok(advance_on);
            }
            let s = self.tick(children[i])?;
            if s == advance_on {
                i += 1;
            } else if s == TickStatus::Running {
                self.state[id].cursor = i;
                return Ok(TickStatus::Running);
            } else {
                self.halt_children(id, 0);
                self.state[id].cursor = 0;
                return Ok(s);
            }
        }
    }

    fn tick_reactive(&mut self, id: NodeId) -> Result<TickStatus, BtError> {
        let children = &self.nodes[id].children;
        for (i, child) in children.iter().enumerate() {
            match self.tick(*child)? {
                TickStatus::Success => continue,
                TickStatus::Failure => {
                    self.halt_children(id, 0);
                    return Ok(TickStatus::Failure);
                }
                TickStatus::Running => {
                    self.halt_children(id, i + 1);
                    return Ok(TickStatus::Running);
                }
            }
        }
        Ok(TickStatus::Success)
    }

    fn tick_parallel(&mut self, id: NodeId, threshold: usize) -> Result<TickStatus, BtError> {
        let children = &self.nodes[id].children;
        let n = children.len();
        if self.state[id].finished.len() != n {
            self.state[id].finished = vec![None; n];
        }
        for (i, child) in children.iter().enumerate() {
            if self.state[id].finished[i].is_some() {
                continue;
            }
            let s = self.tick(*child)?;
            if s.is_terminal() {
                self.state[id].finished[i] = Some(s);
            }
        }
        let finished = &self.state[id].finished;
        let successes = finished.iter().filter(|s| **s == Some(TickStatus::Success)).count();
        let failures = finished.iter().filter(|s| **s == Some(TickStatus::Failure)).count();
        let outcome = if successes >= threshold {
            TickStatus::Success
        } else if failures > n - threshold {
            TickStatus::Failure
        } else {
            return Ok(TickStatus::Running);
        };
        self.halt_children(id, 0);
        self.state[id].finished.clear();
        Ok(outcome)
    }

    fn halt_children(&mut self, id: NodeId, from: usize) {
        let children = &self.nodes[id].children;
        for child in children.iter().skip(from) {
            self.halt(*child);
        }
    }

    fn halt(&mut self, id: NodeId) {
        let node = &self.nodes[id];
        if let NodeKind::Action { module, params, raw } = &node.kind {
            if self.state[id].running {
                let call = ActionCall { node: id, module, params, raw };
                self.env.abort_action(call, self.bb);
            }
        }
        self.state[id] = RuntimeState::default();
        for child in &node.children {
            self.halt(*child);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, VecDeque};

    /// Conditions read the blackboard flag of the same name; actions replay
    /// a scripted queue of statuses and log their lifecycle.
    #[derive(Default)]
    struct Script {
        replies: BTreeMap<String, VecDeque<TickStatus>>,
        log: Vec<String>,
    }

    impl Script {
        fn reply(&mut self, module: &str, statuses: &[TickStatus]) {
            self.replies.entry(module.into()).or_default().extend(statuses);
        }

        fn next(&mut self, module: &str) -> TickStatus {
            let s = self.replies.get_mut(module).and_then(VecDeque::pop_front).unwrap_or(TickStatus::Running);
            if s.is_terminal() {
                self.log.push(format!("done {module}"));
            }
            s
        }

        fn count(&self, entry: &str) -> usize {
            self.log.iter().filter(|l| *l == entry).count()
        }
    }

    impl BtEnv for Script {
        fn condition(&mut self, id: &str, _: &Params, bb: &mut Blackboard) -> Result<bool, BtError> {
            self.log.push(format!("check {id}"));
            match bb.get(id) {
                Some(v) => Ok(v.truthy()),
                None => Err(BtError::UnknownCondition(id.into())),
            }
        }

        fn start_action(&mut self, call: ActionCall<'_>, _: &mut Blackboard) -> Result<TickStatus, BtError> {
            if call.module == "missing" {
                return Err(BtError::UnknownAction(call.module.into()));
            }
            self.log.push(format!("start {}", call.module));
            Ok(self.next(call.module))
        }

        fn poll_action(&mut self, call: ActionCall<'_>, _: &mut Blackboard) -> Result<TickStatus, BtError> {
            self.log.push(format!("poll {}", call.module));
            Ok(self.next(call.module))
        }

        fn abort_action(&mut self, call: ActionCall<'_>, _: &mut Blackboard) {
            self.log.push(format!("abort {}", call.module));
        }
    }

    use TickStatus::{Failure as F, Running as R, Success as S};

    fn bb_with(flags: &[(&str, bool)]) -> Blackboard {
        let mut bb = Blackboard::new();
        for (k, v) in flags {
            bb.set_flag(*k, *v);
        }
        bb
    }

    #[test]
    fn sequence_resumes_running_child_without_reticking_successes() {
        let tree = BtNode::sequence(vec![BtNode::condition("c"), BtNode::action("a")]);
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        env.reply("a", &[R, R, S]);
        let mut bb = bb_with(&[("c", true)]);
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), R);
        bb.set_flag("c", false);
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), R);
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), S);
        assert_eq!(env.count("check c"), 1);
        assert_eq!(env.count("start a"), 1);
        assert_eq!(env.count("poll a"), 2);
    }

    #[test]
    fn reactive_sequence_halts_running_child() {
        let tree = BtNode::reactive_sequence(vec![BtNode::condition("c"), BtNode::action("a")]);
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        let mut bb = bb_with(&[("c", true)]);
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), R);
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), R);
        bb.set_flag("c", false);
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), F);
        assert_eq!(env.count("check c"), 3);
        assert_eq!(env.count("abort a"), 1);
        assert!(!bt.is_running(2));
    }

    #[test]
    fn halting_idle_subtree_sends_nothing() {
        let tree = BtNode::sequence(vec![BtNode::action("a"), BtNode::action("b")]);
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        let mut bb = Blackboard::new();
        bt.halt(&mut bb, &mut env);
        assert!(env.log.is_empty());
    }

    #[test]
    fn halting_running_action_aborts_once_and_restart_is_fresh() {
        let tree = BtNode::sequence(vec![BtNode::action("a")]);
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        let mut bb = Blackboard::new();
        bt.tick(&mut bb, &mut env).unwrap();
        bt.halt(&mut bb, &mut env);
        bt.halt(&mut bb, &mut env);
        bt.tick(&mut bb, &mut env).unwrap();
        assert_eq!(env.log, vec!["start a", "abort a", "start a"]);
    }

    #[test]
    fn while_guard_halts_and_fails() {
        let tree = BtNode::fallback(vec![
            BtNode::action("grasp").with_while(Predicate::parse("grasp_requested").unwrap()),
            BtNode::action("idle"),
        ]);
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        let mut bb = bb_with(&[("grasp_requested", true)]);
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), R);
        bb.set_flag("grasp_requested", false);
        // the fallback resumes its running child, whose guard now fails
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), R);
        assert_eq!(env.log, vec!["start grasp", "abort grasp", "start idle"]);
    }

    #[test]
    fn on_success_mutates_blackboard() {
        let tree = BtNode::sequence(vec![BtNode::action("a")])
            .with_on_success(Mutation::parse("done = true").unwrap());
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        env.reply("a", &[S]);
        let mut bb = Blackboard::new();
        assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), S);
        assert!(bb.flag("done"));
    }

    #[test]
    fn infinite_loop_restarts_child() {
        let tree = BtNode::infinite_loop(BtNode::action("a"));
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        env.reply("a", &[S, S]);
        let mut bb = Blackboard::new();
        for _ in 0..3 {
            assert_eq!(bt.tick(&mut bb, &mut env).unwrap(), R);
        }
        assert_eq!(env.count("start a"), 3);
    }

    #[test]
    fn unknown_leaf_is_an_error() {
        let mut bt = BehaviorTree::new(BtNode::condition("nope")).unwrap();
        let mut bb = Blackboard::new();
        let err = bt.tick(&mut bb, &mut Script::default()).unwrap_err();
        assert_eq!(err, BtError::UnknownCondition("nope".into()));
        let mut bt = BehaviorTree::new(BtNode::action("missing")).unwrap();
        assert!(bt.tick(&mut bb, &mut Script::default()).is_err());
    }

    #[test]
    fn no_double_start_without_terminal_or_abort() {
        // random toggling of a reactive guard never starts `a` twice in a row
        let tree = BtNode::reactive_sequence(vec![BtNode::condition("c"), BtNode::action("a")]);
        let mut bt = BehaviorTree::new(tree).unwrap();
        let mut env = Script::default();
        let mut bb = Blackboard::new();
        let pattern = [true, true, false, true, true, true, false, false, true];
        for (i, on) in pattern.iter().cycle().take(60).enumerate() {
            bb.set_flag("c", *on);
            if i % 7 == 3 {
                env.reply("a", &[S]);
            }
            bt.tick(&mut bb, &mut env).unwrap();
        }
        let mut active = false;
        for entry in &env.log {
            if entry == "start a" {
                assert!(!active, "second start without intervening terminal status");
                active = true;
            } else if entry == "abort a" {
                active = false;
            }
            if entry == "done a" {
                active = false;
            }
        }
    }

    #[test]
    fn determinism_of_status_sequence() {
        let run = || {
            let tree = BtNode::fallback(vec![
                BtNode::reactive_sequence(vec![BtNode::condition("c"), BtNode::action("a")]),
                BtNode::action("b"),
            ]);
            let mut bt = BehaviorTree::new(tree).unwrap();
            let mut env = Script::default();
            env.reply("a", &[R, F, R, S]);
            env.reply("b", &[R, S]);
            let mut bb = Blackboard::new();
            let mut out = Vec::new();
            for i in 0..12 {
                bb.set_flag("c", i % 3 != 0);
                out.push(bt.tick(&mut bb, &mut env).unwrap());
            }
            (out, env.log)
        };
        assert_eq!(run(), run());
    }
}

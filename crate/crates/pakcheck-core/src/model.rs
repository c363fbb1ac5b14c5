//! Finite purely probabilistic systems: trees of global states with
//! probability-weighted edges, the runs they induce, and exact run
//! measures.
//!
//! A tree has a distinguished root that carries no global state; its
//! outgoing edges encode the initial distribution. Every path from a
//! root child to a leaf is a run, and the measure of a run is the
//! product of the edge probabilities along it. All leaves sit at the
//! same depth (the horizon), and every agent's local state at a depth-t
//! node carries `time = t`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::Rat;

/// Reserved participant name for the environment/scheduler.
pub const ENV: &str = "env";

/// Reserved no-op action, implicitly available to every participant and
/// excluded from declared alphabets.
pub const SKIP: &str = "skip";

/// Scalar variable values: integers, booleans, and interned symbols.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Sym(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Sym(s) => write!(f, "{s}"),
        }
    }
}

/// An agent's private information at a point. Two local states are
/// indistinguishable to the agent exactly when they are equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocalState {
    pub agent: String,
    pub time: u32,
    pub vars: BTreeMap<String, Value>,
}

impl LocalState {
    pub fn new(agent: &str, time: u32, vars: &[(&str, Value)]) -> Self {
        LocalState {
            agent: agent.to_string(),
            time,
            vars: vars
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for LocalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@t{}{{", self.agent, self.time)?;
        for (i, (k, v)) in self.vars.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        write!(f, "}}")
    }
}

/// One entry of the environment's action log.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub action: String,
    pub agent: String,
    pub time: u32,
}

/// Environment state: its own variables plus the history of every
/// action performed strictly before the current time, ordered by
/// (time, participant).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct EnvState {
    pub history: Vec<HistoryRecord>,
    pub vars: BTreeMap<String, Value>,
}

/// A global state: the environment state plus one local state per agent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GlobalState {
    pub env: EnvState,
    pub locals: BTreeMap<String, LocalState>,
}

impl fmt::Display for GlobalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let time = self.locals.values().next().map(|l| l.time).unwrap_or(0);
        write!(f, "t={time} env{{")?;
        for (i, (k, v)) in self.env.vars.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        write!(f, "}}")?;
        for (agent, local) in &self.locals {
            write!(f, " {agent}{{")?;
            for (i, (k, v)) in local.vars.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{k}={v}")?;
            }
            write!(f, "}}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// `None` only for the root.
    pub parent: Option<NodeId>,
    /// Probability of the edge from the parent; meaningless at the root.
    pub prob: Rat,
    /// `None` only for the root, which carries no global state.
    pub state: Option<GlobalState>,
    pub children: Vec<NodeId>,
}

/// Runs are indexed by their position in the canonical (depth-first)
/// enumeration order of a tree's leaves.
pub type RunId = usize;

/// A set of runs of one tree, by run index.
pub type RunSet = BTreeSet<RunId>;

/// A single run: the node at each time, from a root child to a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub nodes: Vec<NodeId>,
}

impl Run {
    /// Node at time `t`.
    pub fn node_at(&self, t: u32) -> Option<NodeId> {
        self.nodes.get(t as usize).copied()
    }

    pub fn leaf(&self) -> NodeId {
        *self.nodes.last().expect("runs are never empty")
    }
}

/// All runs of a tree with their exact measures, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    pub runs: Vec<Run>,
    pub measures: Vec<Rat>,
}

impl RunTable {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// The set of all runs.
    pub fn all(&self) -> RunSet {
        (0..self.len()).collect()
    }

    pub fn total(&self) -> Rat {
        self.measures.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "valid")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid tree: {0}")]
    Invalid(ValidationReport),
    #[error("run not in tree: run index {0}")]
    RunNotInTree(RunId),
    #[error("conditioning on null event")]
    NullConditioning,
    #[error("not a point of the tree: run {run}, time {time}")]
    NotAPoint { run: RunId, time: u32 },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("unknown action `{action}` for `{agent}`")]
    UnknownAction { agent: String, action: String },
}

/// Derived data for a valid tree, computed once on first use.
#[derive(Debug)]
struct Derived {
    table: RunTable,
    horizon: u32,
    /// Depth per node; the root sits at -1, its children at 0.
    depth: Vec<i64>,
    /// Probability of reaching each node from the root.
    reach: Vec<Rat>,
    /// Half-open range of run indices whose runs pass through each node.
    run_range: Vec<Range<usize>>,
    /// Points at which each local state occurs, as (node, time).
    occurrences: BTreeMap<LocalState, Vec<(NodeId, u32)>>,
    /// Per node: the actions that led into it, one per participant
    /// (empty for the root and for initial nodes).
    round_actions: Vec<BTreeMap<String, String>>,
}

#[derive(Debug)]
struct Caches {
    validation: ValidationReport,
    derived: Option<Derived>,
}

/// A finite purely probabilistic system.
///
/// Immutable after construction; all operations are pure functions and
/// may run concurrently. Derived data (run table, indexes) is memoized
/// internally behind a [`OnceLock`].
#[derive(Debug)]
pub struct PpsTree {
    nodes: Vec<Node>,
    agents: Vec<String>,
    actions: BTreeMap<String, Vec<String>>,
    caches: OnceLock<Caches>,
}

impl Clone for PpsTree {
    fn clone(&self) -> Self {
        PpsTree {
            nodes: self.nodes.clone(),
            agents: self.agents.clone(),
            actions: self.actions.clone(),
            caches: OnceLock::new(),
        }
    }
}

impl PartialEq for PpsTree {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.agents == other.agents && self.actions == other.actions
    }
}

impl PpsTree {
    pub(crate) fn from_parts(
        nodes: Vec<Node>,
        agents: Vec<String>,
        actions: BTreeMap<String, Vec<String>>,
    ) -> Self {
        PpsTree {
            nodes,
            agents,
            actions,
            caches: OnceLock::new(),
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn actions(&self) -> &BTreeMap<String, Vec<String>> {
        &self.actions
    }

    /// Declared alphabet of a participant (agents or [`ENV`]); empty if
    /// none was declared.
    pub fn alphabet(&self, participant: &str) -> &[String] {
        self.actions
            .get(participant)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn has_agent(&self, agent: &str) -> bool {
        self.agents.iter().any(|a| a == agent)
    }

    /// True if `action` is performable by `participant`: declared in its
    /// alphabet, or the reserved `skip`.
    pub fn has_action(&self, participant: &str, action: &str) -> bool {
        action == SKIP || self.alphabet(participant).iter().any(|a| a == action)
    }

    fn caches(&self) -> &Caches {
        self.caches.get_or_init(|| {
            let validation = self.compute_validation();
            let derived = validation.is_valid().then(|| self.compute_derived());
            Caches {
                validation,
                derived,
            }
        })
    }

    pub fn validate(&self) -> &ValidationReport {
        &self.caches().validation
    }

    fn derived(&self) -> Result<&Derived, ModelError> {
        let caches = self.caches();
        caches
            .derived
            .as_ref()
            .ok_or_else(|| ModelError::Invalid(caches.validation.clone()))
    }

    /// All runs with their exact measures; fails on an invalid tree.
    pub fn run_table(&self) -> Result<&RunTable, ModelError> {
        Ok(&self.derived()?.table)
    }

    /// Depth of the leaves; every run has `horizon + 1` states.
    pub fn horizon(&self) -> Result<u32, ModelError> {
        Ok(self.derived()?.horizon)
    }

    /// Depth of a node: root children at 0, the root itself at -1.
    pub fn depth(&self, id: NodeId) -> Result<i64, ModelError> {
        Ok(self.derived()?.depth[id.0])
    }

    /// Probability of reaching `id` from the root.
    pub fn reach(&self, id: NodeId) -> Result<&Rat, ModelError> {
        Ok(&self.derived()?.reach[id.0])
    }

    /// Indices of the runs passing through `id`; contiguous because run
    /// enumeration is depth-first.
    pub fn runs_through(&self, id: NodeId) -> Result<Range<usize>, ModelError> {
        Ok(self.derived()?.run_range[id.0].clone())
    }

    /// The global state at point (run, t).
    pub fn global(&self, run: RunId, t: u32) -> Result<&GlobalState, ModelError> {
        let node = self.point_node(run, t)?;
        Ok(self.nodes[node.0].state.as_ref().expect("non-root node"))
    }

    /// Agent `agent`'s local state at point (run, t).
    pub fn local(&self, run: RunId, t: u32, agent: &str) -> Result<&LocalState, ModelError> {
        let state = self.global(run, t)?;
        state
            .locals
            .get(agent)
            .ok_or_else(|| ModelError::UnknownAgent(agent.to_string()))
    }

    fn point_node(&self, run: RunId, t: u32) -> Result<NodeId, ModelError> {
        let table = self.run_table()?;
        let r = table
            .runs
            .get(run)
            .ok_or(ModelError::RunNotInTree(run))?;
        r.node_at(t).ok_or(ModelError::NotAPoint { run, time: t })
    }

    /// True iff (run, t) is a point of this tree.
    pub fn is_point(&self, run: RunId, t: u32) -> Result<bool, ModelError> {
        let table = self.run_table()?;
        Ok(run < table.len() && (t as usize) < table.runs[run].nodes.len())
    }

    /// All points (node, time) at which a local state occurs; empty if
    /// the state does not occur in the tree.
    pub fn occurrences(&self, state: &LocalState) -> Result<&[(NodeId, u32)], ModelError> {
        Ok(self
            .derived()?
            .occurrences
            .get(state)
            .map(|v| v.as_slice())
            .unwrap_or(&[]))
    }

    /// All distinct local states of one agent occurring in the tree.
    pub fn local_states_of(&self, agent: &str) -> Result<Vec<&LocalState>, ModelError> {
        if !self.has_agent(agent) {
            return Err(ModelError::UnknownAgent(agent.to_string()));
        }
        Ok(self
            .derived()?
            .occurrences
            .keys()
            .filter(|l| l.agent == agent)
            .collect())
    }

    /// The action `participant` performed in the round leading into
    /// `id`, if any round did.
    pub fn round_action(&self, id: NodeId, participant: &str) -> Result<Option<&str>, ModelError> {
        Ok(self.derived()?.round_actions[id.0]
            .get(participant)
            .map(|s| s.as_str()))
    }

    /// Whether `agent` performs `action` at point (run, t). At the final
    /// time of a run this is false by definition: there is no successor
    /// state to record the action.
    pub fn performed_at(
        &self,
        run: RunId,
        t: u32,
        agent: &str,
        action: &str,
    ) -> Result<bool, ModelError> {
        let table = self.run_table()?;
        let r = table
            .runs
            .get(run)
            .ok_or(ModelError::RunNotInTree(run))?;
        if t as usize >= r.nodes.len() {
            return Err(ModelError::NotAPoint { run, time: t });
        }
        match r.node_at(t + 1) {
            None => Ok(false),
            Some(next) => Ok(self.round_action(next, agent)? == Some(action)),
        }
    }

    /// Times at which `agent` performs `action`, per run.
    pub fn action_occurrences(
        &self,
        agent: &str,
        action: &str,
    ) -> Result<Vec<Vec<u32>>, ModelError> {
        if !self.has_agent(agent) && agent != ENV {
            return Err(ModelError::UnknownAgent(agent.to_string()));
        }
        if !self.has_action(agent, action) {
            return Err(ModelError::UnknownAction {
                agent: agent.to_string(),
                action: action.to_string(),
            });
        }
        let table = self.run_table()?;
        let mut out = Vec::with_capacity(table.len());
        for r in &table.runs {
            let mut times = Vec::new();
            for (t, node) in r.nodes.iter().enumerate().skip(1) {
                if self.round_action(*node, agent)? == Some(action) {
                    times.push(t as u32 - 1);
                }
            }
            out.push(times);
        }
        Ok(out)
    }

    fn compute_validation(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.nodes.len();

        if n == 0 || self.nodes[0].parent.is_some() {
            v.push("node 0 must be the root".to_string());
            return ValidationReport { violations: v };
        }
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            match node.parent {
                None => v.push(format!("node {i}: second root (exactly one root allowed)")),
                Some(p) if p.0 >= n => v.push(format!("node {i}: parent {p} out of range")),
                _ => {}
            }
            if node.state.is_none() {
                v.push(format!("node {i}: non-root node carries no global state"));
            }
        }
        if self.nodes[0].state.is_some() {
            v.push("node 0: the root carries no global state".to_string());
        }
        if !v.is_empty() {
            return ValidationReport { violations: v };
        }

        // Depths via breadth-first walk; unreachable nodes are cycles or
        // orphans.
        let mut depth = vec![i64::MIN; n];
        depth[0] = -1;
        let mut queue = vec![NodeId(0)];
        while let Some(id) = queue.pop() {
            for &c in &self.nodes[id.0].children {
                depth[c.0] = depth[id.0] + 1;
                queue.push(c);
            }
        }
        for i in 0..n {
            if depth[i] == i64::MIN {
                v.push(format!("node {i}: unreachable from the root"));
            }
        }
        if !v.is_empty() {
            return ValidationReport { violations: v };
        }

        if self.nodes[0].children.is_empty() {
            v.push("root has no children: no initial states".to_string());
        }

        // Participant declarations.
        let mut seen = BTreeSet::new();
        for a in &self.agents {
            if a == ENV {
                v.push(format!("`{ENV}` is reserved and cannot be an agent name"));
            }
            if !seen.insert(a.clone()) {
                v.push(format!("duplicate agent `{a}`"));
            }
        }
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (participant, alphabet) in &self.actions {
            if participant != ENV && !self.has_agent(participant) {
                v.push(format!(
                    "action alphabet declared for unknown participant `{participant}`"
                ));
            }
            for action in alphabet {
                if action == SKIP {
                    v.push(format!(
                        "`{SKIP}` is reserved and may not be declared in Act_{participant}"
                    ));
                    continue;
                }
                if let Some(other) = owner.insert(action, participant) {
                    v.push(format!(
                        "action alphabets not disjoint: `{action}` declared for both `{other}` and `{participant}`"
                    ));
                }
            }
        }

        // Edge probabilities and outgoing sums.
        for (i, node) in self.nodes.iter().enumerate() {
            if i > 0 && !node.prob.is_edge_probability() {
                v.push(format!(
                    "node {i}: edge probability {} outside (0,1]",
                    node.prob
                ));
            }
            if !node.children.is_empty() {
                let sum: Rat = node.children.iter().map(|c| &self.nodes[c.0].prob).sum();
                if !sum.is_one() {
                    v.push(format!("node {i}: outgoing sum {sum} != 1"));
                }
            }
        }

        // Uniform horizon.
        let leaf_depths: BTreeSet<i64> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, node)| node.children.is_empty())
            .map(|(i, _)| depth[i])
            .collect();
        if leaf_depths.len() > 1 {
            let depths: Vec<String> = leaf_depths.iter().map(|d| d.to_string()).collect();
            v.push(format!("leaves at unequal depths: {}", depths.join(", ")));
        }

        // Synchrony and history consistency.
        let agent_set: BTreeSet<&str> = self.agents.iter().map(|s| s.as_str()).collect();
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let d = depth[i] as u32;
            let state = node.state.as_ref().expect("checked above");
            let keys: BTreeSet<&str> = state.locals.keys().map(|s| s.as_str()).collect();
            if keys != agent_set {
                v.push(format!("node {i}: locals do not match the declared agents"));
            }
            for (agent, local) in &state.locals {
                if &local.agent != agent {
                    v.push(format!(
                        "node {i}: local state for `{agent}` labelled `{}`",
                        local.agent
                    ));
                }
                if local.time != d {
                    v.push(format!(
                        "node {i}: agent `{agent}` local time {} != depth {d}",
                        local.time
                    ));
                }
            }

            let hist = &state.env.history;
            for w in hist.windows(2) {
                if (w[1].time, &w[1].agent) <= (w[0].time, &w[0].agent) {
                    v.push(format!("node {i}: history not ordered by (time, agent)"));
                    break;
                }
            }
            for rec in hist {
                if rec.time >= d {
                    v.push(format!(
                        "node {i}: history record at time {} not strictly before {d}",
                        rec.time
                    ));
                }
                if rec.agent != ENV && !agent_set.contains(rec.agent.as_str()) {
                    v.push(format!(
                        "node {i}: history record for unknown participant `{}`",
                        rec.agent
                    ));
                }
                if !self.has_action(&rec.agent, &rec.action) {
                    v.push(format!(
                        "node {i}: history action `{}` not in Act_{}",
                        rec.action, rec.agent
                    ));
                }
            }
            let parent = node.parent.expect("non-root");
            if parent.0 != 0 {
                let parent_hist = &self.nodes[parent.0].state.as_ref().unwrap().env.history;
                let prefix_ok = hist.len() >= parent_hist.len()
                    && hist[..parent_hist.len()] == parent_hist[..];
                if !prefix_ok {
                    v.push(format!(
                        "node {i}: history does not extend the parent's history"
                    ));
                } else if hist[parent_hist.len()..]
                    .iter()
                    .any(|rec| rec.time + 1 != d)
                {
                    v.push(format!(
                        "node {i}: new history records not stamped with the round time {}",
                        d.saturating_sub(1)
                    ));
                }
            } else if !hist.is_empty() {
                v.push(format!("node {i}: initial state has nonempty history"));
            }
        }

        ValidationReport { violations: v }
    }

    fn compute_derived(&self) -> Derived {
        let n = self.nodes.len();
        let mut depth = vec![-1i64; n];
        let mut reach = vec![Rat::one(); n];
        let mut run_range = vec![0..0; n];
        let mut round_actions: Vec<BTreeMap<String, String>> = vec![BTreeMap::new(); n];
        let mut runs = Vec::new();
        let mut measures = Vec::new();

        // Iterative depth-first walk keeps run order canonical and
        // fills subtree run ranges on the way back up.
        let mut stack: Vec<(NodeId, usize)> = vec![(NodeId(0), 0)];
        let mut path: Vec<NodeId> = Vec::new();
        while let Some((id, next_child)) = stack.last().copied() {
            if next_child == 0 {
                run_range[id.0].start = runs.len();
                if id.0 != 0 {
                    let parent = self.nodes[id.0].parent.unwrap();
                    depth[id.0] = depth[parent.0] + 1;
                    reach[id.0] = &reach[parent.0] * &self.nodes[id.0].prob;
                    path.push(id);

                    let parent_len = if parent.0 == 0 {
                        0
                    } else {
                        self.nodes[parent.0]
                            .state
                            .as_ref()
                            .unwrap()
                            .env
                            .history
                            .len()
                    };
                    let hist = &self.nodes[id.0].state.as_ref().unwrap().env.history;
                    for rec in &hist[parent_len..] {
                        round_actions[id.0].insert(rec.agent.clone(), rec.action.clone());
                    }
                }
            }
            let children = &self.nodes[id.0].children;
            if next_child < children.len() {
                stack.last_mut().unwrap().1 += 1;
                stack.push((children[next_child], 0));
            } else {
                if id.0 != 0 && children.is_empty() {
                    runs.push(Run { nodes: path.clone() });
                    measures.push(reach[id.0].clone());
                }
                run_range[id.0].end = runs.len();
                if id.0 != 0 {
                    path.pop();
                }
                stack.pop();
            }
        }

        debug_assert!(measures.iter().sum::<Rat>().is_one());

        let horizon = runs
            .first()
            .map(|r| r.nodes.len() as u32 - 1)
            .unwrap_or(0);

        let mut occurrences: BTreeMap<LocalState, Vec<(NodeId, u32)>> = BTreeMap::new();
        for id in self.node_ids().skip(1) {
            let d = depth[id.0] as u32;
            for local in self.nodes[id.0].state.as_ref().unwrap().locals.values() {
                occurrences
                    .entry(local.clone())
                    .or_default()
                    .push((id, d));
            }
        }

        Derived {
            table: RunTable { runs, measures },
            horizon,
            depth,
            reach,
            run_range,
            occurrences,
            round_actions,
        }
    }
}

/// Reports every violated well-formedness condition; an empty report
/// means the tree is a valid pps.
pub fn validate_tree(tree: &PpsTree) -> ValidationReport {
    tree.validate().clone()
}

/// One entry per leaf, in canonical depth-first order. Measures are the
/// exact products of the edge probabilities and sum to 1.
pub fn enumerate_runs(tree: &PpsTree) -> Result<Vec<(Run, Rat)>, ModelError> {
    let table = tree.run_table()?;
    Ok(table
        .runs
        .iter()
        .cloned()
        .zip(table.measures.iter().cloned())
        .collect())
}

/// Exact measure of a set of runs.
pub fn measure(tree: &PpsTree, runs: &RunSet) -> Result<Rat, ModelError> {
    let table = tree.run_table()?;
    let mut total = Rat::zero();
    for &r in runs {
        if r >= table.len() {
            return Err(ModelError::RunNotInTree(r));
        }
        total += &table.measures[r];
    }
    Ok(total)
}

/// Exact conditional measure of `event` given `given`.
pub fn conditional_measure(
    tree: &PpsTree,
    event: &RunSet,
    given: &RunSet,
) -> Result<Rat, ModelError> {
    let given_measure = measure(tree, given)?;
    if given_measure.is_zero() {
        return Err(ModelError::NullConditioning);
    }
    let both: RunSet = event.intersection(given).copied().collect();
    Ok(measure(tree, &both)? / given_measure)
}

/// Whether an action is proper for an agent: performed at least once in
/// the tree and at most once per run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Properness {
    pub proper: bool,
    /// On failure, a run with zero or multiple occurrences.
    pub witness: Option<RunId>,
    pub detail: String,
}

pub fn properness(tree: &PpsTree, agent: &str, action: &str) -> Result<Properness, ModelError> {
    let occ = tree.action_occurrences(agent, action)?;
    if let Some(run) = occ.iter().position(|times| times.len() > 1) {
        return Ok(Properness {
            proper: false,
            witness: Some(run),
            detail: format!(
                "`{agent}` performs `{action}` {} times in run {run}",
                occ[run].len()
            ),
        });
    }
    if occ.iter().all(|times| times.is_empty()) {
        return Ok(Properness {
            proper: false,
            witness: if occ.is_empty() { None } else { Some(0) },
            detail: format!("`{agent}` never performs `{action}` in the tree"),
        });
    }
    Ok(Properness {
        proper: true,
        witness: None,
        detail: String::new(),
    })
}

/// Incremental construction of a [`PpsTree`]; validation stays separate.
#[derive(Debug)]
pub struct TreeBuilder {
    nodes: Vec<Node>,
    agents: Vec<String>,
    actions: BTreeMap<String, Vec<String>>,
}

impl TreeBuilder {
    pub fn new(agents: Vec<String>, actions: BTreeMap<String, Vec<String>>) -> Self {
        TreeBuilder {
            nodes: vec![Node {
                parent: None,
                prob: Rat::one(),
                state: None,
                children: Vec::new(),
            }],
            agents,
            actions,
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn add_child(&mut self, parent: NodeId, prob: Rat, state: GlobalState) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            parent: Some(parent),
            prob,
            state: Some(state),
            children: Vec::new(),
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    pub fn finish(self) -> PpsTree {
        PpsTree::from_parts(self.nodes, self.agents, self.actions)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Global state helper: `(agent, [(var, value)])` pairs plus env vars
    /// and an explicit history.
    pub fn global_state(
        time: u32,
        env_vars: &[(&str, Value)],
        history: Vec<HistoryRecord>,
        locals: &[(&str, &[(&str, Value)])],
    ) -> GlobalState {
        GlobalState {
            env: EnvState {
                history,
                vars: env_vars
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect(),
            },
            locals: locals
                .iter()
                .map(|(agent, vars)| (agent.to_string(), LocalState::new(agent, time, vars)))
                .collect(),
        }
    }

    pub fn record(time: u32, agent: &str, action: &str) -> HistoryRecord {
        HistoryRecord {
            action: action.to_string(),
            agent: agent.to_string(),
            time,
        }
    }

    /// λ → a → b chain with unit probabilities and a single agent.
    pub fn chain_tree() -> PpsTree {
        let mut b = TreeBuilder::new(
            vec!["a1".into()],
            BTreeMap::from([("a1".to_string(), vec!["go".to_string()])]),
        );
        let root = b.root();
        let n0 = b.add_child(root, Rat::one(), global_state(0, &[], vec![], &[("a1", &[])]));
        b.add_child(
            n0,
            Rat::one(),
            global_state(
                1,
                &[],
                vec![record(0, "a1", "go"), record(0, ENV, SKIP)],
                &[("a1", &[])],
            ),
        );
        b.finish()
    }
}

//! Compilation of finite-table joint protocols into probabilistic
//! system trees.
//!
//! A protocol assigns each participant (the agents and the environment)
//! an ordered rule table mapping local states to action distributions;
//! rules use first-match semantics, and a participant with no matching
//! rule performs the reserved `skip`. Every tuple of actions performed
//! at a global state determines a unique successor: the engine bumps
//! every local time, appends one history record per participant, and
//! applies the variable assignments of the first matching transition
//! rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    EnvState, GlobalState, HistoryRecord, LocalState, PpsTree, TreeBuilder, Value, ENV, SKIP,
};
use crate::rational::Rat;

/// A finite-support distribution over one participant's actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionDistribution {
    pub entries: Vec<DistEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistEntry {
    pub action: String,
    pub prob: Rat,
}

impl ActionDistribution {
    /// A deterministic step.
    pub fn singleton(action: &str) -> Self {
        ActionDistribution {
            entries: vec![DistEntry {
                action: action.to_string(),
                prob: Rat::one(),
            }],
        }
    }

    pub fn mixed(entries: &[(&str, Rat)]) -> Self {
        ActionDistribution {
            entries: entries
                .iter()
                .map(|(a, p)| DistEntry {
                    action: a.to_string(),
                    prob: p.clone(),
                })
                .collect(),
        }
    }

    pub fn total(&self) -> Rat {
        self.entries.iter().map(|e| &e.prob).sum()
    }

    pub fn is_singleton(&self) -> bool {
        self.entries.len() == 1
    }
}

/// Conjunction of equality tests over one participant's variables,
/// optionally pinning the time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateGuard {
    pub time: Option<u32>,
    pub vars: BTreeMap<String, Value>,
}

impl StateGuard {
    pub fn any() -> Self {
        StateGuard::default()
    }

    pub fn at_time(time: u32) -> Self {
        StateGuard {
            time: Some(time),
            vars: BTreeMap::new(),
        }
    }

    pub fn with_var(mut self, name: &str, value: Value) -> Self {
        self.vars.insert(name.to_string(), value);
        self
    }

    fn matches(&self, time: u32, vars: &BTreeMap<String, Value>) -> bool {
        self.time.is_none_or(|t| t == time)
            && self.vars.iter().all(|(k, v)| vars.get(k) == Some(v))
    }
}

/// One row of a participant's protocol table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRule {
    pub distribution: ActionDistribution,
    pub guard: StateGuard,
}

impl AgentRule {
    pub fn new(guard: StateGuard, distribution: ActionDistribution) -> Self {
        AgentRule {
            distribution,
            guard,
        }
    }
}

/// Equality test on one participant's variable within a global state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalTest {
    pub name: String,
    pub participant: String,
    pub value: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalGuard {
    pub tests: Vec<GlobalTest>,
    pub time: Option<u32>,
}

impl GlobalGuard {
    pub fn any() -> Self {
        GlobalGuard::default()
    }

    pub fn at_time(time: u32) -> Self {
        GlobalGuard {
            tests: Vec::new(),
            time: Some(time),
        }
    }

    fn matches(&self, state: &GlobalState, time: u32) -> bool {
        if self.time.is_some_and(|t| t != time) {
            return false;
        }
        self.tests.iter().all(|test| {
            let vars = if test.participant == ENV {
                Some(&state.env.vars)
            } else {
                state.locals.get(&test.participant).map(|l| &l.vars)
            };
            vars.is_some_and(|vars| vars.get(&test.name) == Some(&test.value))
        })
    }
}

/// Variable assignment applied to the successor state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub name: String,
    pub participant: String,
    pub value: Value,
}

impl Assignment {
    pub fn set(participant: &str, name: &str, value: Value) -> Self {
        Assignment {
            name: name.to_string(),
            participant: participant.to_string(),
            value,
        }
    }
}

/// One row of the transition table: when the guard matches the current
/// global state and the pattern matches the joint action, the listed
/// assignments shape the successor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub assignments: Vec<Assignment>,
    pub guard: GlobalGuard,
    /// Participant → required action; unconstrained participants match
    /// anything.
    pub pattern: BTreeMap<String, String>,
}

impl TransitionRule {
    pub fn new(
        guard: GlobalGuard,
        pattern: &[(&str, &str)],
        assignments: Vec<Assignment>,
    ) -> Self {
        TransitionRule {
            assignments,
            guard,
            pattern: pattern
                .iter()
                .map(|(p, a)| (p.to_string(), a.to_string()))
                .collect(),
        }
    }

    pub fn catch_all() -> Self {
        TransitionRule {
            assignments: Vec::new(),
            guard: GlobalGuard::any(),
            pattern: BTreeMap::new(),
        }
    }

    fn matches(&self, state: &GlobalState, time: u32, joint: &BTreeMap<String, String>) -> bool {
        self.guard.matches(state, time)
            && self
                .pattern
                .iter()
                .all(|(p, a)| joint.get(p).map(|x| x == a).unwrap_or(false))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialState {
    pub prob: Rat,
    pub state: GlobalState,
}

/// A finite-table joint protocol together with its initial distribution
/// and horizon; compilable to a [`PpsTree`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub agent_rules: BTreeMap<String, Vec<AgentRule>>,
    pub agents: Vec<String>,
    pub env_rules: Vec<AgentRule>,
    pub horizon: u32,
    pub initial: Vec<InitialState>,
    pub transition_rules: Vec<TransitionRule>,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("protocol has no agents")]
    NoAgents,
    #[error("horizon must be at least 1")]
    HorizonZero,
    #[error("initial distribution is empty")]
    EmptyInitial,
    #[error("initial probabilities sum to {sum}, not 1")]
    InitialSum { sum: Rat },
    #[error("bad initial state: {0}")]
    BadInitial(String),
    #[error("rule {rule} for `{owner}`: distribution is empty")]
    EmptyDistribution { owner: String, rule: usize },
    #[error("rule {rule} for `{owner}`: probability {prob} is not positive")]
    NonPositiveProb {
        owner: String,
        rule: usize,
        prob: Rat,
    },
    #[error("rule {rule} for `{owner}`: distribution sums to {sum}, not 1")]
    DistributionSum {
        owner: String,
        rule: usize,
        sum: Rat,
    },
    #[error("action `{action}` used by both `{first}` and `{second}`: alphabets must be disjoint")]
    ActionConflict {
        action: String,
        first: String,
        second: String,
    },
    #[error("unknown participant `{participant}` in {context}")]
    UnknownParticipant {
        participant: String,
        context: String,
    },
    #[error("no transition rule covers state [{state}] under joint action [{joint}]")]
    UncoveredTransition { state: String, joint: String },
    #[error("rules reference undeclared agent `{0}`")]
    UnknownRuleAgent(String),
    #[error("counterexample requires 0 < eps < p < 1 (got p={p}, eps={eps})")]
    CounterexampleParams { p: Rat, eps: Rat },
}

/// Per-participant action alphabets induced by a spec's rule tables,
/// with `skip` excluded.
pub fn derived_alphabets(
    spec: &ProtocolSpec,
) -> Result<BTreeMap<String, Vec<String>>, ProtocolError> {
    let mut owner: BTreeMap<String, String> = BTreeMap::new();
    let mut alphabets: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut add = |participant: &str, action: &str| -> Result<(), ProtocolError> {
        if action == SKIP {
            return Ok(());
        }
        match owner.get(action) {
            Some(existing) if existing != participant => Err(ProtocolError::ActionConflict {
                action: action.to_string(),
                first: existing.clone(),
                second: participant.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                owner.insert(action.to_string(), participant.to_string());
                alphabets
                    .entry(participant.to_string())
                    .or_default()
                    .push(action.to_string());
                Ok(())
            }
        }
    };
    for (agent, rules) in &spec.agent_rules {
        for rule in rules {
            for entry in &rule.distribution.entries {
                add(agent, &entry.action)?;
            }
        }
    }
    for rule in &spec.env_rules {
        for entry in &rule.distribution.entries {
            add(ENV, &entry.action)?;
        }
    }
    for alphabet in alphabets.values_mut() {
        alphabet.sort();
    }
    Ok(alphabets)
}

/// Static well-formedness checks; run automatically by [`build_tree`]
/// and by model loading.
pub fn validate_spec(spec: &ProtocolSpec) -> Result<(), ProtocolError> {
    if spec.agents.is_empty() {
        return Err(ProtocolError::NoAgents);
    }
    if spec.horizon == 0 {
        return Err(ProtocolError::HorizonZero);
    }
    if spec.initial.is_empty() {
        return Err(ProtocolError::EmptyInitial);
    }
    let sum: Rat = spec.initial.iter().map(|i| &i.prob).sum();
    if !sum.is_one() {
        return Err(ProtocolError::InitialSum { sum });
    }
    for init in &spec.initial {
        if !init.prob.is_edge_probability() {
            return Err(ProtocolError::BadInitial(format!(
                "initial probability {} outside (0,1]",
                init.prob
            )));
        }
        if !init.state.env.history.is_empty() {
            return Err(ProtocolError::BadInitial(
                "initial state has nonempty history".to_string(),
            ));
        }
        let keys: Vec<&String> = init.state.locals.keys().collect();
        let mut agents: Vec<&String> = spec.agents.iter().collect();
        agents.sort();
        if keys != agents {
            return Err(ProtocolError::BadInitial(
                "initial locals do not match the declared agents".to_string(),
            ));
        }
        for (agent, local) in &init.state.locals {
            if local.time != 0 || &local.agent != agent {
                return Err(ProtocolError::BadInitial(format!(
                    "initial local state for `{agent}` must carry time 0 and its own agent id"
                )));
            }
        }
    }

    let check_rules = |owner: &str, rules: &[AgentRule]| -> Result<(), ProtocolError> {
        for (idx, rule) in rules.iter().enumerate() {
            if rule.distribution.entries.is_empty() {
                return Err(ProtocolError::EmptyDistribution {
                    owner: owner.to_string(),
                    rule: idx,
                });
            }
            for entry in &rule.distribution.entries {
                if !entry.prob.is_edge_probability() {
                    return Err(ProtocolError::NonPositiveProb {
                        owner: owner.to_string(),
                        rule: idx,
                        prob: entry.prob.clone(),
                    });
                }
            }
            let sum = rule.distribution.total();
            if !sum.is_one() {
                return Err(ProtocolError::DistributionSum {
                    owner: owner.to_string(),
                    rule: idx,
                    sum,
                });
            }
        }
        Ok(())
    };
    for (agent, rules) in &spec.agent_rules {
        if !spec.agents.contains(agent) {
            return Err(ProtocolError::UnknownRuleAgent(agent.clone()));
        }
        check_rules(agent, rules)?;
    }
    check_rules(ENV, &spec.env_rules)?;

    let known = |p: &str| p == ENV || spec.agents.iter().any(|a| a == p);
    for rule in &spec.transition_rules {
        for test in &rule.guard.tests {
            if !known(&test.participant) {
                return Err(ProtocolError::UnknownParticipant {
                    participant: test.participant.clone(),
                    context: "transition guard".to_string(),
                });
            }
        }
        for (participant, _) in &rule.pattern {
            if !known(participant) {
                return Err(ProtocolError::UnknownParticipant {
                    participant: participant.clone(),
                    context: "transition pattern".to_string(),
                });
            }
        }
        for assign in &rule.assignments {
            if !known(&assign.participant) {
                return Err(ProtocolError::UnknownParticipant {
                    participant: assign.participant.clone(),
                    context: "transition assignment".to_string(),
                });
            }
        }
    }
    derived_alphabets(spec)?;
    Ok(())
}

fn chosen_distribution<'a>(
    rules: &'a [AgentRule],
    time: u32,
    vars: &BTreeMap<String, Value>,
    skip_dist: &'a ActionDistribution,
) -> &'a ActionDistribution {
    rules
        .iter()
        .find(|r| r.guard.matches(time, vars))
        .map(|r| &r.distribution)
        .unwrap_or(skip_dist)
}

fn joint_description(joint: &BTreeMap<String, String>) -> String {
    joint
        .iter()
        .map(|(p, a)| format!("{p}:{a}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Applies one synchronous round: bumps every local time, appends one
/// history record per participant, and applies the assignments.
pub(crate) fn step_state(
    state: &GlobalState,
    time: u32,
    joint: &BTreeMap<String, String>,
    assignments: &[Assignment],
) -> GlobalState {
    let mut env = EnvState {
        history: state.env.history.clone(),
        vars: state.env.vars.clone(),
    };
    for (participant, action) in joint {
        env.history.push(HistoryRecord {
            action: action.clone(),
            agent: participant.clone(),
            time,
        });
    }
    let mut locals: BTreeMap<String, LocalState> = state
        .locals
        .iter()
        .map(|(agent, local)| {
            let mut next = local.clone();
            next.time = time + 1;
            (agent.clone(), next)
        })
        .collect();
    for assign in assignments {
        if assign.participant == ENV {
            env.vars.insert(assign.name.clone(), assign.value.clone());
        } else if let Some(local) = locals.get_mut(&assign.participant) {
            local.vars.insert(assign.name.clone(), assign.value.clone());
        }
    }
    GlobalState { env, locals }
}

/// Sums probabilities of successors with identical global states. The
/// history component records the joint action, so distinct joint
/// actions always yield distinct successors; only genuinely identical
/// outcomes collapse.
pub(crate) fn merge_successors(
    successors: Vec<(GlobalState, Rat)>,
) -> BTreeMap<GlobalState, Rat> {
    let mut merged: BTreeMap<GlobalState, Rat> = BTreeMap::new();
    for (state, prob) in successors {
        match merged.get_mut(&state) {
            Some(existing) => *existing += &prob,
            None => {
                merged.insert(state, prob);
            }
        }
    }
    merged
}

/// Compiles a protocol into a valid pps tree of depth `horizon`.
pub fn build_tree(spec: &ProtocolSpec) -> Result<PpsTree, ProtocolError> {
    validate_spec(spec)?;
    let alphabets = derived_alphabets(spec)?;
    let skip_dist = ActionDistribution::singleton(SKIP);
    let empty_rules: Vec<AgentRule> = Vec::new();

    let mut builder = TreeBuilder::new(spec.agents.clone(), alphabets);
    let root = builder.root();

    // Queue of expandable nodes with their states and depths.
    let mut queue: Vec<(crate::model::NodeId, GlobalState, u32)> = Vec::new();
    for init in &spec.initial {
        let id = builder.add_child(root, init.prob.clone(), init.state.clone());
        queue.push((id, init.state.clone(), 0));
    }

    while let Some((node, state, time)) = queue.pop() {
        if time == spec.horizon {
            continue;
        }
        // One distribution per participant, chosen by first-match on its
        // own local view.
        let mut participants: Vec<(&str, &ActionDistribution)> = Vec::new();
        participants.push((
            ENV,
            chosen_distribution(&spec.env_rules, time, &state.env.vars, &skip_dist),
        ));
        for agent in &spec.agents {
            let rules = spec.agent_rules.get(agent).unwrap_or(&empty_rules);
            let local = &state.locals[agent];
            participants.push((
                agent,
                chosen_distribution(rules, time, &local.vars, &skip_dist),
            ));
        }

        // Cartesian product over the supports.
        let mut joints: Vec<(BTreeMap<String, String>, Rat)> =
            vec![(BTreeMap::new(), Rat::one())];
        for (participant, dist) in &participants {
            let mut next = Vec::with_capacity(joints.len() * dist.entries.len());
            for (joint, prob) in &joints {
                for entry in &dist.entries {
                    let mut joint = joint.clone();
                    joint.insert(participant.to_string(), entry.action.clone());
                    next.push((joint, prob * &entry.prob));
                }
            }
            joints = next;
        }

        let mut successors: Vec<(GlobalState, Rat)> = Vec::with_capacity(joints.len());
        for (joint, prob) in joints {
            let rule = spec
                .transition_rules
                .iter()
                .find(|r| r.matches(&state, time, &joint))
                .ok_or_else(|| ProtocolError::UncoveredTransition {
                    state: state.to_string(),
                    joint: joint_description(&joint),
                })?;
            successors.push((step_state(&state, time, &joint, &rule.assignments), prob));
        }

        for (succ, prob) in merge_successors(successors) {
            let id = builder.add_child(node, prob, succ.clone());
            queue.push((id, succ, time + 1));
        }
    }

    Ok(builder.finish())
}

//! Posterior beliefs and their aggregates.
//!
//! An agent's degree of belief in φ at a point is the conditional
//! measure μ(φ@ℓ | R(ℓ)) for its current local state ℓ — the posterior
//! obtained by conditioning the prior run measure on the local state.
//! Everything here is exact.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::fact::{at_action, fact_table, r_action, Fact, FactError, PointTable};
use crate::model::{
    conditional_measure, measure, properness, LocalState, ModelError, PpsTree, RunId, RunSet,
};
use crate::rational::Rat;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("action must be proper: `{agent}.{action}` ({detail})")]
    NotProper {
        agent: String,
        action: String,
        detail: String,
    },
    #[error(transparent)]
    Fact(#[from] FactError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Beliefs of one agent in one fact at the points where it performs one
/// proper action.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefProfile {
    pub agent: String,
    pub action: String,
    pub fact: Fact,
    /// Belief per run; zero for runs in which the action is not
    /// performed, by convention.
    pub per_run: Vec<Rat>,
    /// Belief at each local state in L_i[α], the support.
    pub per_state: BTreeMap<LocalState, Rat>,
    /// R(α): the runs in which the action is performed.
    pub acting_runs: RunSet,
    /// Time at which the action is performed, per acting run.
    pub firing_time: Vec<Option<u32>>,
}

impl BeliefProfile {
    /// L_i[α]: the local states at which the action is ever performed.
    pub fn support(&self) -> impl Iterator<Item = &LocalState> {
        self.per_state.keys()
    }

    /// Smallest belief over the support; `None` for an empty profile.
    pub fn min_belief(&self) -> Option<&Rat> {
        self.per_state.values().min()
    }
}

/// μ(φ@ℓ | R(ℓ)) for an occurring local state, given φ's point table.
fn belief_at_state(
    tree: &PpsTree,
    table: &PointTable,
    state: &LocalState,
) -> Result<Rat, BeliefError> {
    let mut numer = Rat::zero();
    let mut denom = Rat::zero();
    for &(node, t) in tree.occurrences(state)? {
        denom += tree.reach(node)?;
        let measures = &tree.run_table()?.measures;
        for run in tree.runs_through(node)? {
            if table[run][t as usize] {
                numer += &measures[run];
            }
        }
    }
    // Occurring states always have positive measure: every edge
    // probability is positive.
    debug_assert!(!denom.is_zero());
    Ok(numer / denom)
}

/// The agent's degree of belief in the fact at point (run, t).
pub fn belief_at(
    tree: &PpsTree,
    agent: &str,
    fact: &Fact,
    run: RunId,
    t: u32,
) -> Result<Rat, BeliefError> {
    let state = tree.local(run, t, agent)?.clone();
    let table = fact_table(tree, fact)?;
    belief_at_state(tree, &table, &state)
}

/// Beliefs at every point where the agent performs the action, per run
/// and per local state.
pub fn belief_profile(
    tree: &PpsTree,
    agent: &str,
    fact: &Fact,
    action: &str,
) -> Result<BeliefProfile, BeliefError> {
    let prop = properness(tree, agent, action)?;
    if !prop.proper {
        return Err(BeliefError::NotProper {
            agent: agent.to_string(),
            action: action.to_string(),
            detail: prop.detail,
        });
    }
    let table = fact_table(tree, fact)?;
    let occurrences = tree.action_occurrences(agent, action)?;

    let mut per_state: BTreeMap<LocalState, Rat> = BTreeMap::new();
    let mut per_run = vec![Rat::zero(); occurrences.len()];
    let mut acting_runs = RunSet::new();
    let mut firing_time = vec![None; occurrences.len()];

    for (run, times) in occurrences.iter().enumerate() {
        let Some(&t) = times.first() else { continue };
        acting_runs.insert(run);
        firing_time[run] = Some(t);
        let state = tree.local(run, t, agent)?.clone();
        let belief = match per_state.get(&state) {
            Some(b) => b.clone(),
            None => {
                let b = belief_at_state(tree, &table, &state)?;
                per_state.insert(state, b.clone());
                b
            }
        };
        per_run[run] = belief;
    }

    Ok(BeliefProfile {
        agent: agent.to_string(),
        action: action.to_string(),
        fact: fact.clone(),
        per_run,
        per_state,
        acting_runs,
        firing_time,
    })
}

/// μ(φ@α | R(α)): the exact probability that the fact holds when the
/// action is performed.
pub fn success_probability(
    tree: &PpsTree,
    fact: &Fact,
    agent: &str,
    action: &str,
) -> Result<Rat, BeliefError> {
    let event = at_action(tree, fact, agent, action)?;
    let given = r_action(tree, agent, action)?;
    Ok(conditional_measure(tree, &event.runs, &given.runs)?)
}

/// Expected belief when acting: Σ_r μ(r | R(α)) · (Bel_i(φ)@α)[r],
/// summed verbatim over runs.
pub fn expected_belief(
    tree: &PpsTree,
    agent: &str,
    fact: &Fact,
    action: &str,
) -> Result<Rat, BeliefError> {
    let profile = belief_profile(tree, agent, fact, action)?;
    expected_belief_of(tree, &profile)
}

pub fn expected_belief_of(tree: &PpsTree, profile: &BeliefProfile) -> Result<Rat, BeliefError> {
    let measures = &tree.run_table()?.measures;
    let acting_measure = measure(tree, &profile.acting_runs)?;
    let mut sum = Rat::zero();
    for &run in &profile.acting_runs {
        sum += &(&measures[run] * &profile.per_run[run]);
    }
    Ok(sum / acting_measure)
}

/// The same expectation regrouped by local state:
/// Σ_{ℓ ∈ L_i[α]} μ(α@ℓ | R(α)) · Bel(ℓ). Kept as an independent
/// cross-check of the run-wise sum; the two must agree exactly.
pub fn expected_belief_grouped(
    tree: &PpsTree,
    agent: &str,
    fact: &Fact,
    action: &str,
) -> Result<Rat, BeliefError> {
    let profile = belief_profile(tree, agent, fact, action)?;
    expected_belief_grouped_of(tree, &profile)
}

pub fn expected_belief_grouped_of(
    tree: &PpsTree,
    profile: &BeliefProfile,
) -> Result<Rat, BeliefError> {
    let measures = &tree.run_table()?.measures;
    let acting_measure = measure(tree, &profile.acting_runs)?;
    let mut sum = Rat::zero();
    for (state, belief) in &profile.per_state {
        let mut cell = Rat::zero();
        for &run in &profile.acting_runs {
            let t = profile.firing_time[run].expect("acting runs have a firing time");
            if tree.local(run, t, &profile.agent)? == state {
                cell += &measures[run];
            }
        }
        sum += &(&(cell / &acting_measure) * belief);
    }
    Ok(sum)
}

/// μ({r ∈ R(α) : Bel ≥ p} | R(α)): the measure of acting runs whose
/// belief meets the threshold (non-strict comparison).
pub fn threshold_measure(
    tree: &PpsTree,
    agent: &str,
    fact: &Fact,
    action: &str,
    p: &Rat,
) -> Result<Rat, BeliefError> {
    let profile = belief_profile(tree, agent, fact, action)?;
    threshold_measure_of(tree, &profile, p)
}

pub fn threshold_measure_of(
    tree: &PpsTree,
    profile: &BeliefProfile,
    p: &Rat,
) -> Result<Rat, BeliefError> {
    let meeting: RunSet = profile
        .acting_runs
        .iter()
        .copied()
        .filter(|&run| &profile.per_run[run] >= p)
        .collect();
    Ok(conditional_measure(tree, &meeting, &profile.acting_runs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{build_counterexample, builtin_fig1, builtin_fs, builtin_fs_refrain};
    use crate::fact::parse_fact;
    use crate::model::Value;
    use crate::protocol::build_tree;
    use std::collections::BTreeSet;

    fn fs_tree() -> PpsTree {
        build_tree(&builtin_fs()).unwrap()
    }

    fn fire_b() -> Fact {
        Fact::performs("B", "fireB")
    }

    fn both() -> Fact {
        parse_fact("performs(A, fireA) and performs(B, fireB)").unwrap()
    }

    #[test]
    fn belief_in_true_is_one_and_false_is_zero_everywhere() {
        let tree = fs_tree();
        let n = tree.run_table().unwrap().len();
        for run in 0..n {
            for t in 0..=tree.horizon().unwrap() {
                for agent in ["A", "B"] {
                    assert_eq!(
                        belief_at(&tree, agent, &Fact::True, run, t).unwrap(),
                        Rat::one()
                    );
                    assert_eq!(
                        belief_at(&tree, agent, &Fact::False, run, t).unwrap(),
                        Rat::zero()
                    );
                }
            }
        }
    }

    /// Alice's three firing information states.
    fn alice_state(reply: &str) -> LocalState {
        LocalState::new(
            "A",
            2,
            &[
                ("go", Value::Int(1)),
                ("reply", Value::Sym(reply.to_string())),
            ],
        )
    }

    fn run_with_alice_state(tree: &PpsTree, reply: &str) -> RunId {
        let want = alice_state(reply);
        (0..tree.run_table().unwrap().len())
            .find(|&r| tree.local(r, 2, "A").unwrap() == &want)
            .expect("state occurs")
    }

    #[test]
    fn fs_alice_beliefs_at_her_three_information_states() {
        let tree = fs_tree();
        let cases = [("yes", Rat::one()), ("none", Rat::new(99, 100)), ("no", Rat::zero())];
        for (reply, expected) in cases {
            let run = run_with_alice_state(&tree, reply);
            assert_eq!(
                belief_at(&tree, "A", &fire_b(), run, 2).unwrap(),
                expected,
                "reply {reply}"
            );
        }
    }

    #[test]
    fn fs_profile_covers_exactly_the_three_states() {
        let tree = fs_tree();
        let profile = belief_profile(&tree, "A", &fire_b(), "fireA").unwrap();
        assert_eq!(profile.per_state.len(), 3);
        let beliefs: BTreeSet<Rat> = profile.per_state.values().cloned().collect();
        assert_eq!(
            beliefs,
            BTreeSet::from([Rat::one(), Rat::new(99, 100), Rat::zero()])
        );
        // Convention: zero outside R(α).
        for run in 0..profile.per_run.len() {
            if !profile.acting_runs.contains(&run) {
                assert!(profile.per_run[run].is_zero());
            }
        }
        // Runs sharing a firing state carry that state's belief.
        for &run in &profile.acting_runs {
            let t = profile.firing_time[run].unwrap();
            let state = tree.local(run, t, "A").unwrap();
            assert_eq!(&profile.per_run[run], &profile.per_state[state]);
        }
    }

    #[test]
    fn fig1_profile_half_and_zero() {
        let tree = builtin_fig1();
        let psi = parse_fact("not performs(i, alpha)").unwrap();
        let profile = belief_profile(&tree, "i", &psi, "alpha").unwrap();
        assert_eq!(profile.acting_runs.len(), 1);
        let acting = *profile.acting_runs.iter().next().unwrap();
        assert_eq!(profile.per_run[acting], Rat::new(1, 2));
        assert_eq!(profile.per_run[1 - acting], Rat::zero());
    }

    #[test]
    fn counterexample_profile_matches_the_construction() {
        let tree = build_counterexample(&Rat::new(9, 10), &Rat::new(1, 100)).unwrap();
        let phi = parse_fact("var(j, bit) == 1").unwrap();
        let profile = belief_profile(&tree, "i", &phi, "alpha").unwrap();
        let mut beliefs: Vec<Rat> = profile.per_run.clone();
        beliefs.sort();
        assert_eq!(
            beliefs,
            vec![Rat::new(89, 99), Rat::new(89, 99), Rat::one()]
        );
    }

    #[test]
    fn success_probability_golden_values() {
        let tree = fs_tree();
        assert_eq!(
            success_probability(&tree, &Fact::True, "A", "fireA").unwrap(),
            Rat::one()
        );
        assert_eq!(
            success_probability(&tree, &both(), "A", "fireA").unwrap(),
            Rat::new(99, 100)
        );
        let refrain = build_tree(&builtin_fs_refrain()).unwrap();
        assert_eq!(
            success_probability(&refrain, &both(), "A", "fireA").unwrap(),
            Rat::new(990, 991)
        );
    }

    #[test]
    fn refrain_eliminates_the_zero_belief_state() {
        let tree = build_tree(&builtin_fs_refrain()).unwrap();
        let profile = belief_profile(&tree, "A", &fire_b(), "fireA").unwrap();
        let beliefs: BTreeSet<Rat> = profile.per_state.values().cloned().collect();
        assert_eq!(beliefs, BTreeSet::from([Rat::one(), Rat::new(99, 100)]));
    }

    #[test]
    fn fig1_expectation_gap() {
        let tree = builtin_fig1();
        let phi = Fact::performs("i", "alpha");
        assert_eq!(
            success_probability(&tree, &phi, "i", "alpha").unwrap(),
            Rat::one()
        );
        assert_eq!(
            expected_belief(&tree, "i", &phi, "alpha").unwrap(),
            Rat::new(1, 2)
        );
    }

    #[test]
    fn fs_expected_belief_equals_success_probability() {
        let tree = fs_tree();
        // Hand-computed oracle over the three information states:
        // 891/1000·1 + 100/1000·(99/100) + 9/1000·0.
        let oracle = Rat::new(891, 1000) * Rat::one()
            + Rat::new(100, 1000) * Rat::new(99, 100)
            + Rat::new(9, 1000) * Rat::zero();
        assert_eq!(oracle, Rat::new(99, 100));
        assert_eq!(
            expected_belief(&tree, "A", &fire_b(), "fireA").unwrap(),
            oracle
        );
        assert_eq!(
            expected_belief(&tree, "A", &Fact::True, "fireA").unwrap(),
            Rat::one()
        );
    }

    #[test]
    fn counterexample_expected_belief_is_p() {
        // (99/100)·(89/99) + (1/100)·1 = 9/10, by hand.
        let hand = Rat::new(99, 100) * Rat::new(89, 99) + Rat::new(1, 100) * Rat::one();
        assert_eq!(hand, Rat::new(9, 10));
        let tree = build_counterexample(&Rat::new(9, 10), &Rat::new(1, 100)).unwrap();
        let phi = parse_fact("var(j, bit) == 1").unwrap();
        assert_eq!(
            expected_belief(&tree, "i", &phi, "alpha").unwrap(),
            Rat::new(9, 10)
        );
    }

    #[test]
    fn grouped_expectation_agrees_with_run_sum() {
        let fs = fs_tree();
        let fig1 = builtin_fig1();
        let ce = build_counterexample(&Rat::new(3, 4), &Rat::new(1, 4)).unwrap();
        let cases: Vec<(&PpsTree, &str, Fact, &str)> = vec![
            (&fs, "A", fire_b(), "fireA"),
            (&fs, "A", parse_fact("var(A, go) == 1").unwrap(), "fireA"),
            (&fig1, "i", parse_fact("not performs(i, alpha)").unwrap(), "alpha"),
            (&fig1, "i", Fact::performs("i", "alpha"), "alpha"),
            (&ce, "i", parse_fact("var(j, bit) == 1").unwrap(), "alpha"),
        ];
        for (tree, agent, fact, action) in cases {
            let run_sum = expected_belief(tree, agent, &fact, action).unwrap();
            let grouped = expected_belief_grouped(tree, agent, &fact, action).unwrap();
            assert_eq!(run_sum, grouped, "{fact} @ {agent}.{action}");
        }
    }

    #[test]
    fn threshold_measure_golden_values() {
        let tree = fs_tree();
        assert_eq!(
            threshold_measure(&tree, "A", &fire_b(), "fireA", &Rat::zero()).unwrap(),
            Rat::one()
        );
        assert_eq!(
            threshold_measure(&tree, "A", &fire_b(), "fireA", &Rat::new(19, 20)).unwrap(),
            Rat::new(991, 1000)
        );
        let ce = build_counterexample(&Rat::new(9, 10), &Rat::new(1, 100)).unwrap();
        let phi = parse_fact("var(j, bit) == 1").unwrap();
        assert_eq!(
            threshold_measure(&ce, "i", &phi, "alpha", &Rat::new(9, 10)).unwrap(),
            Rat::new(1, 100)
        );
    }

    #[test]
    fn threshold_measure_is_monotone_in_p() {
        let tree = fs_tree();
        let grid = [
            Rat::zero(),
            Rat::new(1, 10),
            Rat::new(19, 20),
            Rat::new(99, 100),
            Rat::one(),
        ];
        let mut last = Rat::one();
        for p in grid {
            let tm = threshold_measure(&tree, "A", &fire_b(), "fireA", &p).unwrap();
            assert!(tm <= last, "threshold_measure must shrink as p grows");
            last = tm;
        }
    }

    #[test]
    fn beliefs_are_additive_over_pointwise_disjoint_facts() {
        let tree = fs_tree();
        let recv2 = parse_fact("var(B, recv) == 2").unwrap();
        let recv0 = parse_fact("var(B, recv) == 0").unwrap();
        let either = recv2.clone().or(recv0.clone());
        let run = run_with_alice_state(&tree, "none");
        let b2 = belief_at(&tree, "A", &recv2, run, 2).unwrap();
        let b0 = belief_at(&tree, "A", &recv0, run, 2).unwrap();
        let b = belief_at(&tree, "A", &either, run, 2).unwrap();
        assert_eq!(b, b2.clone() + b0);
        assert_eq!(b2, Rat::new(81, 100));
    }

    /// For FS, fireA is deterministic, so fireB-performs is local-state
    /// independent of it; the per-state identity μ(φ@α | α@ℓ) =
    /// μ(φ@ℓ | R(ℓ)) must hold at every firing state.
    #[test]
    fn per_state_success_equals_belief_for_deterministic_fire() {
        let tree = fs_tree();
        let profile = belief_profile(&tree, "A", &fire_b(), "fireA").unwrap();
        let phi_at_alpha = at_action(&tree, &fire_b(), "A", "fireA").unwrap();
        for (state, belief) in &profile.per_state {
            let alpha_at_state =
                crate::fact::at_state(&tree, &Fact::performs("A", "fireA"), state).unwrap();
            let lhs =
                conditional_measure(&tree, &phi_at_alpha.runs, &alpha_at_state.runs).unwrap();
            assert_eq!(&lhs, belief, "at {state}");
        }
    }

    #[test]
    fn improper_action_is_rejected() {
        // skip is performed at every round of every run.
        let tree = fs_tree();
        let err = belief_profile(&tree, "A", &Fact::True, crate::model::SKIP).unwrap_err();
        assert!(err.to_string().contains("action must be proper"));

        // An action repeated within a run is improper too.
        let spec = crate::protocol::ProtocolSpec {
            agent_rules: std::collections::BTreeMap::from([(
                "a1".to_string(),
                vec![crate::protocol::AgentRule::new(
                    crate::protocol::StateGuard::any(),
                    crate::protocol::ActionDistribution::singleton("beep"),
                )],
            )]),
            agents: vec!["a1".to_string()],
            env_rules: Vec::new(),
            horizon: 2,
            initial: vec![crate::protocol::InitialState {
                prob: Rat::one(),
                state: crate::model::GlobalState {
                    env: crate::model::EnvState::default(),
                    locals: std::collections::BTreeMap::from([(
                        "a1".to_string(),
                        LocalState::new("a1", 0, &[]),
                    )]),
                },
            }],
            transition_rules: vec![crate::protocol::TransitionRule::catch_all()],
        };
        let repeater = build_tree(&spec).unwrap();
        let err = belief_profile(&repeater, "a1", &Fact::True, "beep").unwrap_err();
        assert!(err.to_string().contains("action must be proper"));
    }

    #[test]
    fn out_of_range_point_is_rejected() {
        let tree = fs_tree();
        assert!(matches!(
            belief_at(&tree, "A", &Fact::True, 0, 9),
            Err(BeliefError::Model(ModelError::NotAPoint { .. }))
        ));
    }
}

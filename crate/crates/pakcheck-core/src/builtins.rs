//! Canonical built-in systems.
//!
//! `fs` is the relaxed firing-squad protocol: Alice draws a fair `go`
//! bit, sends two messages to Bob when `go = 1` (each lost independently
//! with probability 1/10), Bob replies `YES` and fires at time 2 if he
//! received at least one of them, or replies `NO` and never fires, and
//! Alice fires at time 2 whenever `go = 1`. `fs-refrain` is identical
//! except that Alice does not fire after receiving a `NO` reply. `fig1`
//! is the two-run system with a single mixed step, and
//! [`build_counterexample`] is the three-run tree showing that a
//! constraint's threshold may be met on an arbitrarily small measure of
//! acting runs.

use std::collections::BTreeMap;

use crate::model::{
    EnvState, GlobalState, LocalState, PpsTree, TreeBuilder, Value, ENV, SKIP,
};
use crate::protocol::{
    build_tree, ActionDistribution, AgentRule, Assignment, GlobalGuard, InitialState,
    ProtocolError, ProtocolSpec, StateGuard, TransitionRule,
};
use crate::rational::Rat;

fn sym(s: &str) -> Value {
    Value::Sym(s.to_string())
}

fn initial_state(locals: &[(&str, &[(&str, Value)])], prob: Rat) -> InitialState {
    InitialState {
        prob,
        state: GlobalState {
            env: EnvState::default(),
            locals: locals
                .iter()
                .map(|(agent, vars)| (agent.to_string(), LocalState::new(agent, 0, vars)))
                .collect(),
        },
    }
}

fn fs_base(refrain: bool) -> ProtocolSpec {
    let half = Rat::new(1, 2);
    let mut alice_rules = vec![AgentRule::new(
        StateGuard::at_time(0).with_var("go", Value::Int(1)),
        ActionDistribution::singleton("send2"),
    )];
    if refrain {
        // Fire only on a YES reply or on silence.
        for reply in ["yes", "none"] {
            alice_rules.push(AgentRule::new(
                StateGuard::at_time(2)
                    .with_var("go", Value::Int(1))
                    .with_var("reply", sym(reply)),
                ActionDistribution::singleton("fireA"),
            ));
        }
    } else {
        alice_rules.push(AgentRule::new(
            StateGuard::at_time(2).with_var("go", Value::Int(1)),
            ActionDistribution::singleton("fireA"),
        ));
    }

    let bob_rules = vec![
        AgentRule::new(
            StateGuard::at_time(1).with_var("recv", Value::Int(0)),
            ActionDistribution::singleton("send_no"),
        ),
        AgentRule::new(StateGuard::at_time(1), ActionDistribution::singleton("send_yes")),
        AgentRule::new(
            StateGuard::at_time(2).with_var("recv", Value::Int(1)),
            ActionDistribution::singleton("fireB"),
        ),
        AgentRule::new(
            StateGuard::at_time(2).with_var("recv", Value::Int(2)),
            ActionDistribution::singleton("fireB"),
        ),
    ];

    // One environment action per delivery-outcome subset of Alice's two
    // messages, probabilities multiplied out; then one per reply outcome.
    let env_rules = vec![
        AgentRule::new(
            StateGuard::at_time(0),
            ActionDistribution::mixed(&[
                ("ch_both", Rat::new(81, 100)),
                ("ch_first", Rat::new(9, 100)),
                ("ch_second", Rat::new(9, 100)),
                ("ch_none", Rat::new(1, 100)),
            ]),
        ),
        AgentRule::new(
            StateGuard::at_time(1),
            ActionDistribution::mixed(&[
                ("deliver_reply", Rat::new(9, 10)),
                ("lose_reply", Rat::new(1, 10)),
            ]),
        ),
    ];

    let recv = |n: i64| vec![Assignment::set("B", "recv", Value::Int(n))];
    let reply = |r: &str| vec![Assignment::set("A", "reply", sym(r))];
    let transition_rules = vec![
        TransitionRule::new(GlobalGuard::at_time(0), &[("A", "send2"), (ENV, "ch_both")], recv(2)),
        TransitionRule::new(GlobalGuard::at_time(0), &[("A", "send2"), (ENV, "ch_first")], recv(1)),
        TransitionRule::new(GlobalGuard::at_time(0), &[("A", "send2"), (ENV, "ch_second")], recv(1)),
        TransitionRule::new(GlobalGuard::at_time(0), &[("A", "send2"), (ENV, "ch_none")], recv(0)),
        TransitionRule::new(GlobalGuard::at_time(0), &[("A", SKIP)], recv(0)),
        TransitionRule::new(
            GlobalGuard::at_time(1),
            &[("B", "send_yes"), (ENV, "deliver_reply")],
            reply("yes"),
        ),
        TransitionRule::new(
            GlobalGuard::at_time(1),
            &[("B", "send_no"), (ENV, "deliver_reply")],
            reply("no"),
        ),
        TransitionRule::new(GlobalGuard::at_time(1), &[(ENV, "lose_reply")], reply("none")),
        TransitionRule::catch_all(),
    ];

    ProtocolSpec {
        agent_rules: BTreeMap::from([
            ("A".to_string(), alice_rules),
            ("B".to_string(), bob_rules),
        ]),
        agents: vec!["A".to_string(), "B".to_string()],
        env_rules,
        horizon: 3,
        initial: vec![
            initial_state(&[("A", &[("go", Value::Int(0))]), ("B", &[])], half.clone()),
            initial_state(&[("A", &[("go", Value::Int(1))]), ("B", &[])], half),
        ],
        transition_rules,
    }
}

/// The firing-squad protocol FS.
pub fn builtin_fs() -> ProtocolSpec {
    fs_base(false)
}

/// FS with Alice refraining from firing after a NO reply.
pub fn builtin_fs_refrain() -> ProtocolSpec {
    fs_base(true)
}

pub(crate) fn fig1_spec() -> ProtocolSpec {
    ProtocolSpec {
        agent_rules: BTreeMap::from([(
            "i".to_string(),
            vec![AgentRule::new(
                StateGuard::at_time(0),
                ActionDistribution::mixed(&[
                    ("alpha", Rat::new(1, 2)),
                    ("alpha_prime", Rat::new(1, 2)),
                ]),
            )],
        )]),
        agents: vec!["i".to_string()],
        env_rules: Vec::new(),
        horizon: 1,
        initial: vec![initial_state(&[("i", &[])], Rat::one())],
        transition_rules: vec![TransitionRule::catch_all()],
    }
}

/// The two-run single-agent system with one mixed step: from the sole
/// initial state, `i` performs `alpha` or `alpha_prime`, each with
/// probability 1/2.
pub fn builtin_fig1() -> PpsTree {
    build_tree(&fig1_spec()).expect("fig1 spec is well-formed")
}

/// The three-run tree witnessing that there is no positive lower bound
/// on the measure of acting runs meeting a constraint's threshold.
///
/// Two agents `i` and `j`; `j` holds a constant `bit`. With probability
/// `1 - p` the bit is 0 and `j` sends `m_j`; with probability `p` the
/// bit is 1 and `j` sends `m_j` with probability `1 - eps/p` or `m_jp`
/// with probability `eps/p`. Agent `i` records the received message and
/// unconditionally performs `alpha` at time 1. Requires
/// `0 < eps < p < 1`.
pub fn build_counterexample(p: &Rat, eps: &Rat) -> Result<PpsTree, ProtocolError> {
    let zero = Rat::zero();
    let one = Rat::one();
    if !(&zero < eps && eps < p && p < &one) {
        return Err(ProtocolError::CounterexampleParams {
            p: p.clone(),
            eps: eps.clone(),
        });
    }

    let actions = BTreeMap::from([
        ("i".to_string(), vec!["alpha".to_string()]),
        (
            "j".to_string(),
            vec!["send_mj".to_string(), "send_mjp".to_string()],
        ),
    ]);
    let mut b = TreeBuilder::new(vec!["i".to_string(), "j".to_string()], actions);
    let root = b.root();

    let state = |time: u32, bit: i64, msg: Option<&str>, hist: Vec<(u32, &str, &str)>| {
        let mut i_vars: Vec<(&str, Value)> = Vec::new();
        if let Some(m) = msg {
            i_vars.push(("msg", sym(m)));
        }
        GlobalState {
            env: EnvState {
                history: hist
                    .into_iter()
                    .map(|(t, agent, action)| crate::model::HistoryRecord {
                        action: action.to_string(),
                        agent: agent.to_string(),
                        time: t,
                    })
                    .collect(),
                vars: BTreeMap::new(),
            },
            locals: BTreeMap::from([
                ("i".to_string(), LocalState::new("i", time, &i_vars)),
                (
                    "j".to_string(),
                    LocalState::new("j", time, &[("bit", Value::Int(bit))]),
                ),
            ]),
        }
    };

    let s0 = b.add_child(root, &one - p, state(0, 0, None, vec![]));
    let s1 = b.add_child(root, p.clone(), state(0, 1, None, vec![]));

    fn round0(msg_action: &str) -> Vec<(u32, &str, &str)> {
        vec![(0, ENV, SKIP), (0, "i", SKIP), (0, "j", msg_action)]
    }
    fn round1(msg_action: &str) -> Vec<(u32, &str, &str)> {
        vec![
            (0, ENV, SKIP),
            (0, "i", SKIP),
            (0, "j", msg_action),
            (1, ENV, SKIP),
            (1, "i", "alpha"),
            (1, "j", SKIP),
        ]
    }

    // bit = 0: j deterministically sends m_j.
    let u0 = b.add_child(s0, one.clone(), state(1, 0, Some("mj"), round0("send_mj")));
    b.add_child(u0, one.clone(), state(2, 0, Some("mj"), round1("send_mj")));

    // bit = 1: j mixes between m_j and m_jp.
    let p_mj = &one - &(eps / p);
    let p_mjp = eps / p;
    let u1 = b.add_child(s1, p_mj, state(1, 1, Some("mj"), round0("send_mj")));
    b.add_child(u1, one.clone(), state(2, 1, Some("mj"), round1("send_mj")));
    let u2 = b.add_child(s1, p_mjp, state(1, 1, Some("mjp"), round0("send_mjp")));
    b.add_child(u2, one, state(2, 1, Some("mjp"), round1("send_mjp")));

    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{conditional_measure, enumerate_runs, validate_tree, RunSet};

    #[test]
    fn fs_tree_is_valid_and_measures_sum_to_one() {
        let tree = build_tree(&builtin_fs()).unwrap();
        assert!(validate_tree(&tree).is_valid(), "{}", tree.validate());
        let runs = enumerate_runs(&tree).unwrap();
        assert_eq!(runs.len(), 16);
        assert!(runs.iter().map(|(_, m)| m).sum::<Rat>().is_one());
        assert!(runs.iter().all(|(_, m)| m > &Rat::zero()));
    }

    /// Independent oracle for FS: enumerate (go, delivery outcome,
    /// reply delivery) with hand-multiplied probabilities and check the
    /// lost-lost-NO-delivered run measure from first principles.
    #[test]
    fn fs_lost_messages_no_delivered_run_has_measure_9_2000() {
        let tree = build_tree(&builtin_fs()).unwrap();
        let runs = enumerate_runs(&tree).unwrap();
        let expected = Rat::new(1, 2) * Rat::new(1, 100) * Rat::new(9, 10);
        assert_eq!(expected, Rat::new(9, 2000));

        let horizon = tree.horizon().unwrap();
        let mut matches = Vec::new();
        for (idx, (_, m)) in runs.iter().enumerate() {
            let go1 = tree.local(idx, 0, "A").unwrap().vars["go"] == Value::Int(1);
            if !go1 {
                continue;
            }
            let recv0 = tree.local(idx, 1, "B").unwrap().vars["recv"] == Value::Int(0);
            let reply_no = tree.local(idx, 2, "A").unwrap().vars.get("reply")
                == Some(&sym("no"));
            if go1 && recv0 && reply_no {
                matches.push((idx, m.clone()));
            }
        }
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].1, Rat::new(9, 2000));
        assert_eq!(horizon, 3);
    }

    #[test]
    fn fs_both_fire_given_alice_fires_is_99_100() {
        let tree = build_tree(&builtin_fs()).unwrap();
        let runs = enumerate_runs(&tree).unwrap();
        let mut alice_fires = RunSet::new();
        let mut both_fire = RunSet::new();
        for idx in 0..runs.len() {
            let a = tree.performed_at(idx, 2, "A", "fireA").unwrap();
            let b = tree.performed_at(idx, 2, "B", "fireB").unwrap();
            if a {
                alice_fires.insert(idx);
            }
            if a && b {
                both_fire.insert(idx);
            }
        }
        assert_eq!(
            crate::model::measure(&tree, &alice_fires).unwrap(),
            Rat::new(1, 2)
        );
        assert_eq!(
            conditional_measure(&tree, &both_fire, &alice_fires).unwrap(),
            Rat::new(99, 100)
        );
    }

    #[test]
    fn fs_refrain_reaches_990_991() {
        let tree = build_tree(&builtin_fs_refrain()).unwrap();
        let runs = enumerate_runs(&tree).unwrap();
        let mut alice_fires = RunSet::new();
        let mut both_fire = RunSet::new();
        for idx in 0..runs.len() {
            let a = tree.performed_at(idx, 2, "A", "fireA").unwrap();
            let b = tree.performed_at(idx, 2, "B", "fireB").unwrap();
            if a {
                alice_fires.insert(idx);
            }
            if a && b {
                both_fire.insert(idx);
            }
        }
        // Brute-force oracle: 1/2 * (99/100 + 1/100 * 1/10).
        assert_eq!(
            crate::model::measure(&tree, &alice_fires).unwrap(),
            Rat::new(991, 2000)
        );
        assert_eq!(
            conditional_measure(&tree, &both_fire, &alice_fires).unwrap(),
            Rat::new(990, 991)
        );
    }

    #[test]
    fn fig1_has_two_half_runs() {
        let tree = builtin_fig1();
        assert!(validate_tree(&tree).is_valid());
        let runs = enumerate_runs(&tree).unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs.iter().all(|(_, m)| *m == Rat::new(1, 2)));
        let performed: Vec<bool> = (0..2)
            .map(|idx| tree.performed_at(idx, 0, "i", "alpha").unwrap())
            .collect();
        assert_eq!(performed.iter().filter(|b| **b).count(), 1);
    }

    #[test]
    fn counterexample_run_measures_are_exact() {
        let p = Rat::new(9, 10);
        let eps = Rat::new(1, 100);
        let tree = build_counterexample(&p, &eps).unwrap();
        assert!(validate_tree(&tree).is_valid(), "{}", tree.validate());
        let runs = enumerate_runs(&tree).unwrap();
        assert_eq!(runs.len(), 3);
        let measures: Vec<Rat> = runs.iter().map(|(_, m)| m.clone()).collect();
        let mut sorted = measures.clone();
        sorted.sort();
        assert_eq!(
            sorted,
            vec![Rat::new(1, 100), Rat::new(1, 10), Rat::new(89, 100)]
        );
        assert!(measures.iter().sum::<Rat>().is_one());
    }

    #[test]
    fn counterexample_rejects_bad_parameters() {
        for (p, eps) in [
            (Rat::new(1, 2), Rat::new(1, 2)),
            (Rat::new(1, 4), Rat::new(1, 2)),
            (Rat::one(), Rat::new(1, 2)),
            (Rat::new(1, 2), Rat::zero()),
        ] {
            let err = build_counterexample(&p, &eps).unwrap_err();
            assert!(err.to_string().contains("0 < eps < p < 1"));
        }
        // 0 < 1/4 < 3/4 < 1 is fine.
        assert!(build_counterexample(&Rat::new(3, 4), &Rat::new(1, 4)).is_ok());
    }
}

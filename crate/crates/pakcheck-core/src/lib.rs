//! Exact-arithmetic analysis of finite purely probabilistic systems:
//! run measures, agents' posterior beliefs, probabilistic action
//! constraints, and machine checks of the structural theorems that
//! relate them.
//!
//! Everything is computed over exact rationals; there is no floating
//! point anywhere in measure or belief computation.

pub mod builtins;
pub mod belief;
pub mod fact;
pub mod model;
pub mod protocol;
pub mod rational;

pub use model::{
    conditional_measure, enumerate_runs, measure, properness, validate_tree, EnvState,
    GlobalState, HistoryRecord, LocalState, ModelError, Node, NodeId, PpsTree, Properness, Run,
    RunId, RunSet, RunTable, TreeBuilder, ValidationReport, Value, ENV, SKIP,
};
pub use rational::{Rat, RatError};

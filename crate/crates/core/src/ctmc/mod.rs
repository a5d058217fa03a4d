//! Exact analysis of the reservoir as a continuous-time Markov chain.

mod analysis;
pub mod closed_form;
mod model;
pub mod solve;

use serde::{Deserialize, Serialize};

pub use analysis::{
    decision_transition_stats, next_decision_probs, steady_state, transition_stats_from, NextDecision,
    SteadyState, TransitionStats, DENSE_STATE_LIMIT,
};
pub use closed_form::{closed_form_value, ClosedFormComparison, SignRelation};
pub use model::{CtmcModel, Rates, Transition, TransitionKind, MAX_LEVELS, N1_STATE_ORDER};

use crate::error::Result;

/// Everything the exact analysis reports for one `(N, rates)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmcReport {
    pub n: usize,
    pub rates: Rates,
    pub num_states: usize,
    pub p_ll: f64,
    pub p_lr: f64,
    pub imbalance: f64,
    pub residual: f64,
    pub steady_state: Vec<f64>,
}

pub fn analyze(n_levels: usize, rates: Rates) -> Result<CtmcReport> {
    let model = CtmcModel::build(n_levels, rates)?;
    let steady = steady_state(&model)?;
    let next = next_decision_probs(&model)?;
    let stats = transition_stats_from(&model, &steady, &next);
    Ok(CtmcReport {
        n: n_levels,
        rates,
        num_states: model.num_states(),
        p_ll: stats.p_ll,
        p_lr: stats.p_lr,
        imbalance: stats.imbalance,
        residual: steady.residual,
        steady_state: steady.pi,
    })
}

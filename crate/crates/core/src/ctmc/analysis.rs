//! Steady state and decision-transition probabilities.
//!
//! The probability that the decision following a given one is L is a
//! first-passage quantity: starting from the state right after a decision,
//! the chain evolves through fills and decays until the next excitation, and
//! `h_L(s)` is the chance that this excitation is an L-arrow.

use serde::{Deserialize, Serialize};

use super::model::{CtmcModel, TransitionKind};
use super::solve::{gauss_seidel, DenseLu, SparseRows};
use crate::error::{Error, Result};
use crate::reservoir::ArrowKind;

/// Models with at most this many states are solved densely.
pub const DENSE_STATE_LIMIT: usize = 128;

const MAX_RESIDUAL: f64 = 1e-10;
const ITER_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub pi: Vec<f64>,
    /// `max |(Q pi)_i|`.
    pub residual: f64,
}

/// Per-state probability that the next decision is L (resp. R).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextDecision {
    pub h_l: Vec<f64>,
    pub h_r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub p_ll: f64,
    pub p_lr: f64,
    pub p_rl: f64,
    pub p_rr: f64,
    /// `p_ll - p_lr`.
    pub imbalance: f64,
}

/// Solves `Q pi = 0`, `sum(pi) = 1`.
pub fn steady_state(model: &CtmcModel) -> Result<SteadyState> {
    let m = model.num_states();
    let mut pi = if m <= DENSE_STATE_LIMIT {
        let q = model.generator_dense();
        let mut a: Vec<f64> = q.into_iter().flatten().collect();
        a[(m - 1) * m..].fill(1.0);
        let mut b = vec![0.0; m];
        b[m - 1] = 1.0;
        DenseLu::factor(m, a)?.solve(&b)
    } else {
        // pi_j * exit_j = sum_i rate(i -> j) * pi_i
        let mut incoming: SparseRows = vec![Vec::new(); m];
        for t in model.transitions() {
            incoming[t.to].push((t.from, t.rate));
        }
        let mut pi = vec![1.0 / m as f64; m];
        gauss_seidel(model.exit_rates(), &incoming, &vec![0.0; m], &mut pi, ITER_TOL, MAX_SWEEPS, |x| {
            let s: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
        })?;
        pi
    };

    let most_negative = pi.iter().copied().fold(0.0f64, f64::min);
    if most_negative < -1e-12 {
        return Err(Error::Numerical {
            reason: format!("negative stationary probability {most_negative:e}"),
            residual: most_negative.abs(),
        });
    }
    pi.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);

    let residual = max_abs(&model.apply(&pi));
    if residual > MAX_RESIDUAL {
        return Err(Error::Numerical { reason: "steady state residual too large".into(), residual });
    }
    Ok(SteadyState { pi, residual })
}

/// First-passage probabilities of the next excitation being L or R.
///
/// `exit(s) h(s) - sum_{fill/decay s->s'} rate h(s') = gamma_up * n_kind(s)`.
pub fn next_decision_probs(model: &CtmcModel) -> Result<NextDecision> {
    let m = model.num_states();
    let gamma_up = model.rates().gamma_up;
    let rhs = |kind| -> Vec<f64> {
        (0..m)
            .map(|s| gamma_up * model.enabled_count(s, kind) as f64)
            .collect()
    };
    let (b_l, b_r) = (rhs(ArrowKind::L), rhs(ArrowKind::R));
    if let Some(s) = model.exit_rates().iter().position(|&r| r <= 0.0) {
        panic!("state {s} has no outflow; rates must be positive");
    }

    let (h_l, h_r) = if m <= DENSE_STATE_LIMIT {
        let mut a = vec![0.0; m * m];
        for (s, &r) in model.exit_rates().iter().enumerate() {
            a[s * m + s] = r;
        }
        for t in model.transitions() {
            if !matches!(t.kind, TransitionKind::Excite(_)) {
                a[t.from * m + t.to] -= t.rate;
            }
        }
        let lu = DenseLu::factor(m, a)?;
        (lu.solve(&b_l), lu.solve(&b_r))
    } else {
        let mut onward: SparseRows = vec![Vec::new(); m];
        for t in model.transitions() {
            if !matches!(t.kind, TransitionKind::Excite(_)) {
                onward[t.from].push((t.to, t.rate));
            }
        }
        let solve = |b: &[f64]| -> Result<Vec<f64>> {
            let mut h = vec![0.5; m];
            gauss_seidel(model.exit_rates(), &onward, b, &mut h, ITER_TOL, MAX_SWEEPS, |_| {})?;
            Ok(h)
        };
        (solve(&b_l)?, solve(&b_r)?)
    };
    Ok(NextDecision { h_l, h_r })
}

/// `P(L->L)`, `P(L->R)`, `P(R->L)`, `P(R->R)` weighted by the steady-state flux
/// of each decision transition.
pub fn decision_transition_stats(model: &CtmcModel) -> Result<TransitionStats> {
    let steady = steady_state(model)?;
    let next = next_decision_probs(model)?;
    Ok(transition_stats_from(model, &steady, &next))
}

pub fn transition_stats_from(model: &CtmcModel, steady: &SteadyState, next: &NextDecision) -> TransitionStats {
    let (mut flux_l, mut ll, mut flux_r, mut rr) = (0.0, 0.0, 0.0, 0.0);
    for (t, kind) in model.decision_transitions() {
        let flux = steady.pi[t.from] * t.rate;
        match kind {
            ArrowKind::L => {
                flux_l += flux;
                ll += flux * next.h_l[t.to];
            }
            ArrowKind::R => {
                flux_r += flux;
                rr += flux * next.h_r[t.to];
            }
        }
    }
    let p_ll = ll / flux_l;
    let p_rr = rr / flux_r;
    TransitionStats {
        p_ll,
        p_lr: 1.0 - p_ll,
        p_rl: 1.0 - p_rr,
        p_rr,
        imbalance: p_ll - (1.0 - p_ll),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

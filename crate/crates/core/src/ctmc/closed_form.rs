//! Closed-form imbalance for the single-level reservoir, evaluated term by term.
//!
//! The closed-form expression is a sum of non-negative terms, while the
//! first-passage imbalance of the same chain is negative; [`compare`] records
//! how the two relate instead of reconciling them.

use serde::{Deserialize, Serialize};

use super::analysis::{decision_transition_stats, steady_state, SteadyState};
use super::model::{CtmcModel, Rates, N1_STATE_ORDER};
use crate::error::{Error, Result};

/// Evaluates the closed form with the steady state of the `N = 1` chain.
pub fn closed_form_value(rates: &Rates, steady: &SteadyState) -> Result<f64> {
    if steady.pi.len() != 8 {
        return Err(Error::InvalidConfig(format!(
            "closed form needs the 8-state N=1 steady state, got {} states",
            steady.pi.len()
        )));
    }
    // p[k] is the probability of 1-based state k of the rate equation.
    let mut p = [0.0; 9];
    for (k, &mask) in N1_STATE_ORDER.iter().enumerate() {
        p[k + 1] = steady.pi[mask];
    }
    let (gi, gu, go) = (rates.gamma_in, rates.gamma_up, rates.gamma_out);
    let a = gi + go;
    let b = gu + go;
    let lead = gi * gu / (a * b);
    let t12 = 0.5 * (p[1] + p[2]);
    let t34 = (gi * go + go * b) / (2.0 * a * b) * (p[3] + p[4]);
    let t7 = (2.0 * (2.0 * gi + go) * b * go * go + gi * go * a * a) / (2.0 * (gi + 2.0 * go) * a * a * b) * p[7];
    let t568 = go / (2.0 * b) * (p[5] + p[6] + p[8]);
    Ok(lead * (t12 + t34 + t7 + t568))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignRelation {
    /// Closed form equals the first-passage imbalance.
    Equal,
    /// Closed form equals minus the first-passage imbalance.
    Negated,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormComparison {
    pub rates: Rates,
    pub closed_form: f64,
    pub imbalance: f64,
    pub same_sign: bool,
    pub magnitude_ratio: f64,
    pub relation: SignRelation,
}

/// Evaluates both routes for `N = 1` at the given rates.
pub fn compare(rates: &Rates) -> Result<ClosedFormComparison> {
    let model = CtmcModel::build(1, *rates)?;
    let steady = steady_state(&model)?;
    let closed_form = closed_form_value(rates, &steady)?;
    let imbalance = decision_transition_stats(&model)?.imbalance;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
    let relation = if close(closed_form, imbalance) {
        SignRelation::Equal
    } else if close(closed_form, -imbalance) {
        SignRelation::Negated
    } else {
        SignRelation::Neither
    };
    Ok(ClosedFormComparison {
        rates: *rates,
        closed_form,
        imbalance,
        same_sign: closed_form.signum() == imbalance.signum(),
        magnitude_ratio: closed_form.abs() / imbalance.abs(),
        relation,
    })
}

//! Trial aggregation: decision-consistency curves, active portion, random-walk
//! traces and parameter sweeps.
//!
//! All reductions are integer counts merged associatively, so results do not
//! depend on the order in which trials are processed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::{run_trial, ArrowKind, Outcome, ReservoirConfig, StallPolicy, Trial};

/// Mean decision consistency per offset `t = 1..=max_offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub offsets: Vec<u64>,
    /// Trials whose decision at the offset matched the reference.
    pub consistent: Vec<u64>,
    /// Trials contributing a sample at the offset.
    pub samples: Vec<u64>,
    /// Trials that produced a reference decision.
    pub reference_trials: u64,
}

impl ConsistencyCurve {
    pub fn empty(max_offset: usize) -> Self {
        Self {
            offsets: (1..=max_offset as u64).collect(),
            consistent: vec![0; max_offset],
            samples: vec![0; max_offset],
            reference_trials: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.iter().all(|&s| s == 0)
    }

    /// Mean at offset `t` (1-based), `None` when nothing was sampled there.
    pub fn mean(&self, t: u64) -> Option<f64> {
        let k = usize::try_from(t).ok()?.checked_sub(1)?;
        match (self.consistent.get(k), self.samples.get(k)) {
            (Some(&c), Some(&s)) if s > 0 => Some(c as f64 / s as f64),
            _ => None,
        }
    }

    pub fn means(&self) -> Vec<Option<f64>> {
        self.offsets.iter().map(|&t| self.mean(t)).collect()
    }

    /// Mean of the per-offset means over `lo..=hi`, skipping unsampled offsets.
    pub fn average_over(&self, lo: u64, hi: u64) -> Option<f64> {
        let vals: Vec<f64> = (lo..=hi).filter_map(|t| self.mean(t)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn merge(mut self, other: Self) -> Self {
        debug_assert_eq!(self.offsets, other.offsets);
        for (a, b) in self.consistent.iter_mut().zip(&other.consistent) {
            *a += b;
        }
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b;
        }
        self.reference_trials += other.reference_trials;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivePortionStat {
    pub mean_fraction: f64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkTrace {
    pub trial_id: u64,
    pub first_decision: ArrowKind,
    /// Position after each decision from `t0` on; L is +1, R is -1 and a
    /// stalled cycle repeats the previous position.
    pub positions: Vec<i64>,
}

impl WalkTrace {
    pub fn sign(&self) -> i64 {
        match self.first_decision {
            ArrowKind::L => 1,
            ArrowKind::R => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub lifetime: u64,
    pub max_consistency: f64,
    pub active_portion: f64,
}

/// Consistency curve and active portion of one configuration, from a single pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirAnalysis {
    pub curve: ConsistencyCurve,
    pub active_portion: ActivePortionStat,
}

#[derive(Debug, Clone)]
struct Tally {
    curve: ConsistencyCurve,
    disabled_arrows: u64,
    trials: u64,
}

impl Tally {
    fn new(max_offset: usize) -> Self {
        Self {
            curve: ConsistencyCurve::empty(max_offset),
            disabled_arrows: 0,
            trials: 0,
        }
    }

    fn merge(self, other: Self) -> Self {
        Self {
            curve: self.curve.merge(other.curve),
            disabled_arrows: self.disabled_arrows + other.disabled_arrows,
            trials: self.trials + other.trials,
        }
    }

    fn add_trial(mut self, config: &ReservoirConfig, trial_index: u64) -> Self {
        let mut trial = Trial::new(config, trial_index).expect("validated config");
        let mut visible = Readout::new(config.stall_policy);
        for _ in 1..config.t0 {
            visible.observe(trial.step().outcome);
        }
        trial.state.recover(config.t0);
        self.disabled_arrows += trial.state.disabled_count() as u64;
        self.trials += 1;

        let Some(reference) = visible.observe(trial.state.decide(&mut trial.rng).outcome) else {
            return self;
        };
        self.curve.reference_trials += 1;
        for k in 0..self.curve.len() {
            if let Some(kind) = visible.observe(trial.step().outcome) {
                self.curve.samples[k] += 1;
                self.curve.consistent[k] += u64::from(kind == reference);
            }
        }
        self
    }
}

/// Decision shown for each cycle under a [`StallPolicy`].
#[derive(Debug, Clone, Copy)]
pub struct Readout {
    policy: StallPolicy,
    last: Option<ArrowKind>,
}

impl Readout {
    pub fn new(policy: StallPolicy) -> Self {
        Self { policy, last: None }
    }

    /// Feeds the next cycle's outcome and returns the decision read out for it.
    pub fn observe(&mut self, outcome: Outcome) -> Option<ArrowKind> {
        let decided = match outcome {
            Outcome::L => Some(ArrowKind::L),
            Outcome::R => Some(ArrowKind::R),
            Outcome::Stall => None,
        };
        match (decided, self.policy) {
            (Some(kind), _) => {
                self.last = Some(kind);
                Some(kind)
            }
            (None, StallPolicy::CarryForward) => self.last,
            (None, StallPolicy::Skip) => None,
        }
    }
}

fn check_window(config: &ReservoirConfig, max_offset: usize) -> Result<()> {
    config.validate()?;
    if max_offset < 1 || config.t0 + max_offset as u64 > config.total_cycles {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= max_offset and t0 + max_offset <= total_cycles (t0 = {}, max_offset = {max_offset}, total_cycles = {})",
            config.t0, config.total_cycles
        )));
    }
    Ok(())
}

/// Runs every trial once and collects both the consistency curve and the
/// disabled-arrow fraction at the start of cycle `t0`.
pub fn analyze(config: &ReservoirConfig, max_offset: usize) -> Result<ReservoirAnalysis> {
    check_window(config, max_offset)?;
    let tally = (0..config.trials)
        .into_par_iter()
        .fold(|| Tally::new(max_offset), |acc, i| acc.add_trial(config, i))
        .reduce(|| Tally::new(max_offset), Tally::merge);
    let denom = (2 * config.n_levels) as f64 * tally.trials as f64;
    Ok(ReservoirAnalysis {
        curve: tally.curve,
        active_portion: ActivePortionStat {
            mean_fraction: tally.disabled_arrows as f64 / denom,
            trials: tally.trials,
        },
    })
}

/// Decision consistency relative to the decision read out at `t0`.
///
/// Under [`StallPolicy::Skip`] a stall at `t0` drops the trial and a stall at
/// `t0 + t` drops that sample only. Under [`StallPolicy::CarryForward`] a
/// stalled cycle shows the most recent decision, and only trials with no
/// decision at all up to `t0` are dropped.
pub fn consistency_curve(config: &ReservoirConfig, max_offset: usize) -> Result<ConsistencyCurve> {
    let curve = analyze(config, max_offset)?.curve;
    if curve.reference_trials == 0 {
        return Err(Error::EmptyCurve);
    }
    Ok(curve)
}

/// Largest sampled mean over all offsets of the curve.
pub fn max_consistency(curve: &ConsistencyCurve) -> Result<f64> {
    curve
        .means()
        .into_iter()
        .flatten()
        .reduce(f64::max)
        .ok_or(Error::EmptyCurve)
}

/// Mean fraction of the `2N` arrows that are disabled at the start of cycle `t0`.
pub fn active_portion(config: &ReservoirConfig) -> Result<ActivePortionStat> {
    config.validate()?;
    // The curve part needs at least one offset; it is discarded here.
    let window = ReservoirConfig {
        total_cycles: config.total_cycles.max(config.t0 + 1),
        ..*config
    };
    Ok(analyze(&window, 1)?.active_portion)
}

/// Random-walk views of the first `n_traces` trials that decide at `t0`.
pub fn walk_traces(config: &ReservoirConfig, n_traces: usize) -> Result<Vec<WalkTrace>> {
    config.validate()?;
    if n_traces as u64 > config.trials {
        return Err(Error::InvalidConfig(format!(
            "n_traces ({n_traces}) exceeds trials ({})",
            config.trials
        )));
    }
    let mut traces = Vec::with_capacity(n_traces);
    for trial_id in 0..config.trials {
        if traces.len() == n_traces {
            break;
        }
        let events = run_trial(config, trial_id)?;
        let tail = &events[(config.t0 - 1) as usize..];
        let first_decision = match tail[0].outcome {
            Outcome::L => ArrowKind::L,
            Outcome::R => ArrowKind::R,
            Outcome::Stall => continue,
        };
        traces.push(WalkTrace {
            trial_id,
            first_decision,
            positions: walk_positions(tail.iter().map(|e| e.outcome)),
        });
    }
    Ok(traces)
}

/// Cumulative position of a walker moving +1 on L and -1 on R.
pub fn walk_positions(outcomes: impl IntoIterator<Item = Outcome>) -> Vec<i64> {
    outcomes
        .into_iter()
        .scan(0i64, |pos, o| {
            *pos += match o {
                Outcome::L => 1,
                Outcome::R => -1,
                Outcome::Stall => 0,
            };
            Some(*pos)
        })
        .collect()
}

/// Ensemble mean of `positions[k]`, optionally multiplied by the sign of the
/// first decision.
pub fn mean_position(traces: &[WalkTrace], k: usize, signed: bool) -> Option<f64> {
    let vals: Vec<f64> = traces
        .iter()
        .filter_map(|tr| {
            let p = *tr.positions.get(k)?;
            Some(if signed { p * tr.sign() } else { p } as f64)
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// One row per grid cell: maximum consistency over `1..=max_offset` and active portion.
pub fn sweep(grid: &[ReservoirConfig], max_offset: usize) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    grid.iter()
        .map(|cfg| {
            let analysis = analyze(cfg, max_offset)?;
            if analysis.curve.reference_trials == 0 {
                return Err(Error::EmptyCurve);
            }
            Ok(SweepRow {
                n: cfg.n_levels,
                lifetime: cfg.lifetime,
                max_consistency: max_consistency(&analysis.curve)?,
                active_portion: analysis.active_portion.mean_fraction,
            })
        })
        .collect()
}

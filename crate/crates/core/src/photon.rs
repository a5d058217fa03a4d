//! Single-photon decision maker.
//!
//! A linearly polarized photon hits a polarization beam splitter; the
//! horizontal port (D1) fires with probability `cos²θ`. Each detection rotates
//! the waveplate by `Δ = π/R` towards the port that fired, which makes the same
//! detection more likely next time. Once the angle leaves `[0, π/2]` the trial
//! stops producing decisions.
//!
//! The angle is tracked as an integer number of net steps `k` away from `π/4`,
//! so boundary tests are exact: the trial is active while `|4k| <= R`.

use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{trial_rng, TrialRng};
use crate::stats::{ActivePortionStat, ConsistencyCurve};

pub const MIN_RESOLUTION: u32 = 4;
pub const MAX_RESOLUTION: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonConfig {
    /// `R` in `Δ = π/R`.
    pub resolution: u32,
    pub cycles: u64,
    pub trials: u64,
    pub seed: u64,
}

impl Default for PhotonConfig {
    fn default() -> Self {
        Self { resolution: 10, cycles: 500, trials: 20_000, seed: 42 }
    }
}

impl PhotonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(Error::InvalidConfig(format!(
                "resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {}",
                self.resolution
            )));
        }
        if self.cycles < 1 {
            return Err(Error::InvalidConfig("cycles must be >= 1".into()));
        }
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        std::f64::consts::PI / self.resolution as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detection {
    /// Horizontal port.
    D1,
    /// Vertical port.
    D2,
}

impl Detection {
    pub fn swapped(self) -> Self {
        match self {
            Detection::D1 => Detection::D2,
            Detection::D2 => Detection::D1,
        }
    }
}

/// Samples a detection at polarization angle `theta` (0 = horizontal).
///
/// # Panics
/// If `theta` is outside `[0, π/2]`.
pub fn detect(theta: f64, rng: &mut impl Rng) -> Detection {
    assert!(
        (0.0..=2.0 * FRAC_PI_4).contains(&theta),
        "polarization angle {theta} outside [0, pi/2]"
    );
    let c = theta.cos();
    if rng.random::<f64>() < c * c {
        Detection::D1
    } else {
        Detection::D2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleUpdate {
    Active(f64),
    Terminated,
}

/// Rotates the angle by `delta` towards the port that fired.
pub fn update_angle(theta: f64, decision: Detection, delta: f64) -> AngleUpdate {
    let next = match decision {
        Detection::D1 => theta - delta,
        Detection::D2 => theta + delta,
    };
    if (0.0..=2.0 * FRAC_PI_4).contains(&next) {
        AngleUpdate::Active(next)
    } else {
        AngleUpdate::Terminated
    }
}

/// Waveplate state of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonState {
    resolution: u32,
    /// Net steps towards vertical (`D2` minus `D1`).
    steps: i64,
    /// First cycle without a decision.
    terminated_at: Option<u64>,
}

impl PhotonState {
    pub fn new(resolution: u32) -> Self {
        Self { resolution, steps: 0, terminated_at: None }
    }

    pub fn theta(&self) -> f64 {
        FRAC_PI_4 + self.steps as f64 * std::f64::consts::PI / self.resolution as f64
    }

    pub fn steps(&self) -> i64 {
        self.steps
    }

    pub fn terminated_at(&self) -> Option<u64> {
        self.terminated_at
    }

    pub fn is_active(&self) -> bool {
        self.terminated_at.is_none()
    }

    /// `|θ − π/4| / (π/4)`; 1 once terminated.
    pub fn rotation_fraction(&self) -> f64 {
        if self.is_active() {
            (4 * self.steps.unsigned_abs()) as f64 / self.resolution as f64
        } else {
            1.0
        }
    }

    /// Detects at `cycle` and rotates; the rotated angle stays frozen at its
    /// last in-range value if it would leave `[0, π/2]`.
    pub fn step(&mut self, cycle: u64, rng: &mut impl Rng) -> Detection {
        assert!(self.is_active(), "trial terminated at cycle {:?}", self.terminated_at);
        let d = detect(self.theta(), rng);
        let next = self.steps + if d == Detection::D1 { -1 } else { 1 };
        if 4 * next.unsigned_abs() <= self.resolution as u64 {
            self.steps = next;
        } else {
            self.terminated_at = Some(cycle + 1);
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonTrialResult {
    pub decisions: Vec<Detection>,
    pub terminated_at: Option<u64>,
    pub final_theta: f64,
}

struct PhotonTrial {
    state: PhotonState,
    rng: TrialRng,
    cycle: u64,
}

impl PhotonTrial {
    fn new(config: &PhotonConfig, trial_index: u64) -> Self {
        Self { state: PhotonState::new(config.resolution), rng: trial_rng(config.seed, trial_index), cycle: 0 }
    }

    fn next(&mut self) -> Option<Detection> {
        if !self.state.is_active() {
            return None;
        }
        self.cycle += 1;
        Some(self.state.step(self.cycle, &mut self.rng))
    }
}

pub fn run_photon_trial(config: &PhotonConfig, trial_index: u64) -> Result<PhotonTrialResult> {
    config.validate()?;
    let mut trial = PhotonTrial::new(config, trial_index);
    let mut decisions = Vec::new();
    while decisions.len() < config.cycles as usize {
        match trial.next() {
            Some(d) => decisions.push(d),
            None => break,
        }
    }
    Ok(PhotonTrialResult {
        decisions,
        terminated_at: trial.state.terminated_at,
        final_theta: trial.state.theta(),
    })
}

/// How terminated trials enter the consistency average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhotonAveraging {
    /// A terminated trial counts as inconsistent at every later offset.
    #[default]
    ZeroFill,
    /// Only trials still producing decisions contribute.
    Survivors,
}

/// Consistency curve over offsets `1..cycles`, with the reference taken at cycle 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonCurve {
    pub curve: ConsistencyCurve,
    /// Trials still producing a decision at each offset.
    pub surviving: Vec<u64>,
    /// Trials terminated within the configured cycles.
    pub terminated: u64,
}

#[derive(Debug, Clone)]
struct PhotonTally {
    consistent: Vec<u64>,
    surviving: Vec<u64>,
    terminated: u64,
    trials: u64,
    fraction_sum: f64,
}

impl PhotonTally {
    fn new(max_offset: usize) -> Self {
        Self {
            consistent: vec![0; max_offset],
            surviving: vec![0; max_offset],
            terminated: 0,
            trials: 0,
            fraction_sum: 0.0,
        }
    }

    fn add_trial(mut self, config: &PhotonConfig, index: u64) -> Self {
        let mut trial = PhotonTrial::new(config, index);
        let reference = trial.next().expect("a fresh trial always decides");
        let mut fractions = trial.state.rotation_fraction();
        for t in 0..self.consistent.len() {
            if let Some(d) = trial.next() {
                self.surviving[t] += 1;
                self.consistent[t] += u64::from(d == reference);
            }
            fractions += trial.state.rotation_fraction();
        }
        self.fraction_sum += fractions / config.cycles as f64;
        self.terminated += u64::from(!trial.state.is_active());
        self.trials += 1;
        self
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.consistent.iter_mut().zip(&other.consistent) {
            *a += b;
        }
        for (a, b) in self.surviving.iter_mut().zip(&other.surviving) {
            *a += b;
        }
        self.terminated += other.terminated;
        self.trials += other.trials;
        self.fraction_sum += other.fraction_sum;
        self
    }
}

fn tally(config: &PhotonConfig) -> Result<PhotonTally> {
    config.validate()?;
    let max_offset = (config.cycles - 1) as usize;
    Ok((0..config.trials)
        .into_par_iter()
        .fold(|| PhotonTally::new(max_offset), |acc, i| acc.add_trial(config, i))
        .reduce(|| PhotonTally::new(max_offset), PhotonTally::merge))
}

fn curve_from(t: &PhotonTally, averaging: PhotonAveraging) -> PhotonCurve {
    let max_offset = t.consistent.len();
    let samples = match averaging {
        PhotonAveraging::ZeroFill => vec![t.trials; max_offset],
        PhotonAveraging::Survivors => t.surviving.clone(),
    };
    PhotonCurve {
        curve: ConsistencyCurve {
            offsets: (1..=max_offset as u64).collect(),
            consistent: t.consistent.clone(),
            samples,
            reference_trials: t.trials,
        },
        surviving: t.surviving.clone(),
        terminated: t.terminated,
    }
}

fn active_from(t: &PhotonTally) -> ActivePortionStat {
    ActivePortionStat { mean_fraction: t.fraction_sum / t.trials as f64, trials: t.trials }
}

pub fn photon_consistency_curve(config: &PhotonConfig, averaging: PhotonAveraging) -> Result<PhotonCurve> {
    if config.cycles < 2 {
        return Err(Error::InvalidConfig("consistency needs cycles >= 2".into()));
    }
    Ok(curve_from(&tally(config)?, averaging))
}

/// Mean over trials and cycles of the waveplate rotation `|θ − π/4| / (π/4)`,
/// sampled after each cycle's update; cycles after termination count as a
/// full rotation.
pub fn photon_active_portion(config: &PhotonConfig) -> Result<ActivePortionStat> {
    Ok(active_from(&tally(config)?))
}

/// Per-trial rotation measured only at the end of the run:
/// `|final_theta − π/4| / (π/4)`, using the frozen angle for terminated trials.
pub fn final_rotation(result: &PhotonTrialResult) -> f64 {
    (result.final_theta - FRAC_PI_4).abs() / FRAC_PI_4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonSweepRow {
    pub resolution: u32,
    pub max_consistency: f64,
    pub active_portion: f64,
    pub termination_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonAnalysis {
    pub curve: PhotonCurve,
    pub active_portion: ActivePortionStat,
}

/// Curve and active portion from a single pass over the trials.
pub fn analyze(config: &PhotonConfig, averaging: PhotonAveraging) -> Result<PhotonAnalysis> {
    if config.cycles < 2 {
        return Err(Error::InvalidConfig("consistency needs cycles >= 2".into()));
    }
    let t = tally(config)?;
    Ok(PhotonAnalysis { curve: curve_from(&t, averaging), active_portion: active_from(&t) })
}

pub fn sweep(configs: &[PhotonConfig], averaging: PhotonAveraging) -> Result<Vec<PhotonSweepRow>> {
    configs
        .iter()
        .map(|c| {
            let a = analyze(c, averaging)?;
            Ok(PhotonSweepRow {
                resolution: c.resolution,
                max_consistency: crate::stats::max_consistency(&a.curve.curve)?,
                active_portion: a.active_portion.mean_fraction,
                termination_fraction: a.curve.terminated as f64 / c.trials as f64,
            })
        })
        .collect()
}

//! Discrete-cycle Monte Carlo engine for the one-dimensional local reservoir.
//!
//! The reservoir has `N` lower levels and `N + 1` upper levels. Lower level `i`
//! (1-based) can be excited along two arrows:
//!
//! * `L_i` to upper level `i + 1`, read out as Decision L,
//! * `R_i` to upper level `i`, read out as Decision R.
//!
//! An arrow is enabled iff its source is occupied and its target is empty.
//! Firing an arrow empties the source and fills the target; both levels are
//! restored `lifetime` cycles later. Enabled arrows are always derived from
//! occupancy and never stored.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{trial_rng, TrialRng};

/// Failed draws over all `2N` arrows before falling back to enumeration.
const REJECTION_TRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    /// Number of lower levels `N`.
    pub n_levels: usize,
    /// Cycles until a touched level recovers.
    pub lifetime: u64,
    pub total_cycles: u64,
    /// Reference cycle for consistency statistics (1-based).
    pub t0: u64,
    pub trials: u64,
    pub seed: u64,
    /// How a stalled cycle is read out by the statistics.
    #[serde(default)]
    pub stall_policy: StallPolicy,
}

/// Read-out of a cycle in which no arrow could fire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StallPolicy {
    /// The visible system keeps showing the most recent decision.
    #[default]
    CarryForward,
    /// The cycle carries no decision and is dropped from the statistics.
    Skip,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            n_levels: 4,
            lifetime: 10,
            total_cycles: 1_200,
            t0: 1_000,
            trials: 20_000,
            seed: 42,
            stall_policy: StallPolicy::CarryForward,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 1 {
            return Err(Error::InvalidConfig("n_levels must be >= 1".into()));
        }
        if self.lifetime < 1 {
            return Err(Error::InvalidConfig("lifetime must be >= 1".into()));
        }
        if self.total_cycles < 1 {
            return Err(Error::InvalidConfig("total_cycles must be >= 1".into()));
        }
        if self.t0 < 1 || self.t0 >= self.total_cycles {
            return Err(Error::InvalidConfig(format!(
                "t0 must satisfy 1 <= t0 < total_cycles (t0 = {}, total_cycles = {})",
                self.t0, self.total_cycles
            )));
        }
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArrowKind {
    L,
    R,
}

impl ArrowKind {
    pub fn mirrored(self) -> Self {
        match self {
            ArrowKind::L => ArrowKind::R,
            ArrowKind::R => ArrowKind::L,
        }
    }
}

/// Excitation path out of lower level `index` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arrow {
    pub kind: ArrowKind,
    pub index: usize,
}

impl Arrow {
    pub fn l(index: usize) -> Self {
        Self { kind: ArrowKind::L, index }
    }

    pub fn r(index: usize) -> Self {
        Self { kind: ArrowKind::R, index }
    }

    /// 0-based lower level the arrow drains.
    pub fn source(&self) -> usize {
        self.index - 1
    }

    /// 0-based upper level the arrow fills.
    pub fn target(&self) -> usize {
        match self.kind {
            ArrowKind::L => self.index,
            ArrowKind::R => self.index - 1,
        }
    }

    /// Image of the arrow under the left/right reflection of a size-`n` reservoir.
    pub fn mirrored(&self, n: usize) -> Self {
        Self {
            kind: self.kind.mirrored(),
            index: n + 1 - self.index,
        }
    }

    /// All `2N` arrows, `L1..LN` followed by `R1..RN`.
    pub fn all(n: usize) -> impl Iterator<Item = Arrow> {
        (1..=n).map(Arrow::l).chain((1..=n).map(Arrow::r))
    }

    fn from_slot(n: usize, slot: usize) -> Self {
        if slot < n {
            Arrow::l(slot + 1)
        } else {
            Arrow::r(slot - n + 1)
        }
    }
}

impl fmt::Display for Arrow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            ArrowKind::L => 'L',
            ArrowKind::R => 'R',
        };
        write!(f, "{k}{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    L,
    R,
    Stall,
}

impl Outcome {
    pub fn is_decision(self) -> bool {
        self != Outcome::Stall
    }
}

impl From<ArrowKind> for Outcome {
    fn from(kind: ArrowKind) -> Self {
        match kind {
            ArrowKind::L => Outcome::L,
            ArrowKind::R => Outcome::R,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub cycle: u64,
    pub outcome: Outcome,
    pub fired_arrow: Option<Arrow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Lower(usize),
    Upper(usize),
}

/// Occupancy and recovery timers of one reservoir.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservoirState {
    lifetime: u64,
    cycle: u64,
    lower_occupied: Vec<bool>,
    upper_occupied: Vec<bool>,
    lower_refill_at: Vec<Option<u64>>,
    upper_clear_at: Vec<Option<u64>>,
    // Timers in due order; every timer is set to `cycle + lifetime` when it is
    // armed, so arming order is due order.
    pending: VecDeque<(u64, Level)>,
}

impl ReservoirState {
    /// Initial state: every lower level occupied, every upper level empty.
    pub fn new(config: &ReservoirConfig) -> Result<Self> {
        Self::with_levels(config.n_levels, config.lifetime)
    }

    pub fn with_levels(n_levels: usize, lifetime: u64) -> Result<Self> {
        if n_levels < 1 {
            return Err(Error::InvalidConfig("n_levels must be >= 1".into()));
        }
        if lifetime < 1 {
            return Err(Error::InvalidConfig("lifetime must be >= 1".into()));
        }
        Ok(Self {
            lifetime,
            cycle: 0,
            lower_occupied: vec![true; n_levels],
            upper_occupied: vec![false; n_levels + 1],
            lower_refill_at: vec![None; n_levels],
            upper_clear_at: vec![None; n_levels + 1],
            pending: VecDeque::new(),
        })
    }

    pub fn n_levels(&self) -> usize {
        self.lower_occupied.len()
    }

    pub fn lifetime(&self) -> u64 {
        self.lifetime
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn lower_occupied(&self) -> &[bool] {
        &self.lower_occupied
    }

    pub fn upper_occupied(&self) -> &[bool] {
        &self.upper_occupied
    }

    pub fn lower_refill_at(&self) -> &[Option<u64>] {
        &self.lower_refill_at
    }

    pub fn upper_clear_at(&self) -> &[Option<u64>] {
        &self.upper_clear_at
    }

    pub fn is_enabled(&self, arrow: Arrow) -> bool {
        self.lower_occupied[arrow.source()] && !self.upper_occupied[arrow.target()]
    }

    /// Enabled arrows in canonical order (`L1..LN`, then `R1..RN`).
    pub fn enabled_arrows(&self) -> Vec<Arrow> {
        Arrow::all(self.n_levels())
            .filter(|a| self.is_enabled(*a))
            .collect()
    }

    pub fn enabled_count(&self) -> usize {
        Arrow::all(self.n_levels())
            .filter(|a| self.is_enabled(*a))
            .count()
    }

    pub fn disabled_count(&self) -> usize {
        2 * self.n_levels() - self.enabled_count()
    }

    /// Advances the clock to `now` and restores every level whose timer is due.
    ///
    /// Panics unless `now == self.cycle() + 1`.
    pub fn recover(&mut self, now: u64) {
        assert_eq!(now, self.cycle + 1, "recover must advance exactly one cycle");
        self.cycle = now;
        while let Some(&(due, level)) = self.pending.front() {
            if due > now {
                break;
            }
            self.pending.pop_front();
            match level {
                Level::Lower(i) => {
                    self.lower_occupied[i] = true;
                    self.lower_refill_at[i] = None;
                }
                Level::Upper(j) => {
                    self.upper_occupied[j] = false;
                    self.upper_clear_at[j] = None;
                }
            }
        }
    }

    /// Moves the excitation along `arrow` at the current cycle.
    ///
    /// Panics if the arrow is not enabled.
    pub fn fire(&mut self, arrow: Arrow) {
        assert!(self.is_enabled(arrow), "arrow {arrow} is not enabled");
        let due = self.cycle + self.lifetime;
        let (src, dst) = (arrow.source(), arrow.target());
        self.lower_occupied[src] = false;
        self.lower_refill_at[src] = Some(due);
        self.upper_occupied[dst] = true;
        self.upper_clear_at[dst] = Some(due);
        self.pending.push_back((due, Level::Lower(src)));
        self.pending.push_back((due, Level::Upper(dst)));
    }

    /// Draws one enabled arrow uniformly, or `None` when every arrow is blocked.
    pub fn sample_arrow<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Arrow> {
        let n = self.n_levels();
        for _ in 0..REJECTION_TRIES {
            let arrow = Arrow::from_slot(n, rng.random_range(0..2 * n));
            if self.is_enabled(arrow) {
                return Some(arrow);
            }
        }
        // Uniform on acceptance and uniform on fallback, so the mixture is
        // uniform over the enabled set as well.
        let enabled = self.enabled_arrows();
        if enabled.is_empty() {
            None
        } else {
            Some(enabled[rng.random_range(0..enabled.len())])
        }
    }

    /// Samples and fires at the current cycle without advancing the clock.
    pub fn decide<R: Rng + ?Sized>(&mut self, rng: &mut R) -> DecisionEvent {
        match self.sample_arrow(rng) {
            Some(arrow) => {
                self.fire(arrow);
                DecisionEvent {
                    cycle: self.cycle,
                    outcome: arrow.kind.into(),
                    fired_arrow: Some(arrow),
                }
            }
            None => DecisionEvent {
                cycle: self.cycle,
                outcome: Outcome::Stall,
                fired_arrow: None,
            },
        }
    }

    /// One full cycle: recovery, then a uniformly sampled excitation.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> DecisionEvent {
        self.recover(self.cycle + 1);
        self.decide(rng)
    }

    /// Reflection `lower i -> N+1-i`, `upper j -> N+2-j` (timers travel with levels).
    pub fn mirrored(&self) -> Self {
        let mut lower_occupied = self.lower_occupied.clone();
        let mut upper_occupied = self.upper_occupied.clone();
        let mut lower_refill_at = self.lower_refill_at.clone();
        let mut upper_clear_at = self.upper_clear_at.clone();
        lower_occupied.reverse();
        upper_occupied.reverse();
        lower_refill_at.reverse();
        upper_clear_at.reverse();
        let n = self.n_levels();
        let pending = self
            .pending
            .iter()
            .map(|&(due, level)| match level {
                Level::Lower(i) => (due, Level::Lower(n - 1 - i)),
                Level::Upper(j) => (due, Level::Upper(n - j)),
            })
            .collect();
        Self {
            lifetime: self.lifetime,
            cycle: self.cycle,
            lower_occupied,
            upper_occupied,
            lower_refill_at,
            upper_clear_at,
            pending,
        }
    }

    /// Checks the occupancy/timer coupling; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let window = self.cycle + 1..=self.cycle + self.lifetime;
        for (i, (&occ, timer)) in self.lower_occupied.iter().zip(&self.lower_refill_at).enumerate() {
            match (occ, timer) {
                (true, None) => {}
                (false, Some(t)) if window.contains(t) => {}
                _ => return Err(format!("lower {} occupied={occ} timer={timer:?}", i + 1)),
            }
        }
        for (j, (&occ, timer)) in self.upper_occupied.iter().zip(&self.upper_clear_at).enumerate() {
            match (occ, timer) {
                (false, None) => {}
                (true, Some(t)) if window.contains(t) => {}
                _ => return Err(format!("upper {} occupied={occ} timer={timer:?}", j + 1)),
            }
        }
        let armed = self.lower_refill_at.iter().chain(&self.upper_clear_at).flatten().count();
        if armed != self.pending.len() {
            return Err(format!("{armed} timers set but {} pending", self.pending.len()));
        }
        Ok(())
    }
}

/// A reservoir together with the random stream of one trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub state: ReservoirState,
    pub rng: TrialRng,
}

impl Trial {
    pub fn new(config: &ReservoirConfig, trial_index: u64) -> Result<Self> {
        Ok(Self {
            state: ReservoirState::new(config)?,
            rng: trial_rng(config.seed, trial_index),
        })
    }

    pub fn step(&mut self) -> DecisionEvent {
        self.state.step(&mut self.rng)
    }
}

/// Runs `total_cycles` steps from the initial state. `events[k]` is cycle `k + 1`.
pub fn run_trial(config: &ReservoirConfig, trial_index: u64) -> Result<Vec<DecisionEvent>> {
    config.validate()?;
    if trial_index >= config.trials {
        return Err(Error::InvalidConfig(format!(
            "trial index {trial_index} out of range (trials = {})",
            config.trials
        )));
    }
    let mut trial = Trial::new(config, trial_index)?;
    Ok((0..config.total_cycles).map(|_| trial.step()).collect())
}

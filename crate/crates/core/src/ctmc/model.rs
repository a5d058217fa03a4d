//! Occupancy-state enumeration and generator construction.
//!
//! A state is a bitmask over `2N + 1` levels: bits `0..N` are the lower levels,
//! bits `N..=2N` the upper levels. The generator follows `dp/dt = Q p`, so
//! `Q[to][from]` holds the rate of `from -> to` and every column sums to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::{Arrow, ArrowKind};

/// Largest reservoir the exact analysis accepts (`2^11 = 2048` states).
pub const MAX_LEVELS: usize = 5;

/// Bitmask of each 1-based state of the `N = 1` rate equation, in the order
/// the rate matrix lists them: empty, lower only, upper 1 only, upper 2 only,
/// upper 1 + lower, upper 2 + lower, both uppers, everything.
pub const N1_STATE_ORDER: [usize; 8] = [0b000, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Lower-level refill rate.
    pub gamma_in: f64,
    /// Excitation rate per enabled arrow.
    pub gamma_up: f64,
    /// Upper-level decay rate.
    pub gamma_out: f64,
}

impl Rates {
    pub fn new(gamma_in: f64, gamma_up: f64, gamma_out: f64) -> Result<Self> {
        let r = Self { gamma_in, gamma_up, gamma_out };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_in", self.gamma_in),
            ("gamma_up", self.gamma_up),
            ("gamma_out", self.gamma_out),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionKind {
    /// Lower level (0-based) refilled.
    Fill(usize),
    /// Excitation along an arrow; this is a decision event.
    Excite(Arrow),
    /// Upper level (0-based) emptied.
    Decay(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    pub kind: TransitionKind,
}

#[derive(Debug, Clone)]
pub struct CtmcModel {
    n_levels: usize,
    rates: Rates,
    transitions: Vec<Transition>,
    exit_rates: Vec<f64>,
}

impl CtmcModel {
    pub fn build(n_levels: usize, rates: Rates) -> Result<Self> {
        rates.validate()?;
        if n_levels < 1 {
            return Err(Error::InvalidConfig("n_levels must be >= 1".into()));
        }
        if n_levels > MAX_LEVELS {
            return Err(Error::Capacity {
                n: n_levels,
                states: 1usize.checked_shl((2 * n_levels + 1) as u32).unwrap_or(usize::MAX),
                max_n: MAX_LEVELS,
            });
        }
        let n = n_levels;
        let num_states = 1usize << (2 * n + 1);
        let mut transitions = Vec::new();
        let mut exit_rates = vec![0.0; num_states];
        for s in 0..num_states {
            let lower = |i: usize| s >> i & 1 == 1;
            let upper = |j: usize| s >> (n + j) & 1 == 1;
            let mut push = |to: usize, rate: f64, kind| {
                transitions.push(Transition { from: s, to, rate, kind });
                exit_rates[s] += rate;
            };
            for i in (0..n).filter(|&i| !lower(i)) {
                push(s | 1 << i, rates.gamma_in, TransitionKind::Fill(i));
            }
            for arrow in Arrow::all(n) {
                if lower(arrow.source()) && !upper(arrow.target()) {
                    let to = (s & !(1 << arrow.source())) | 1 << (n + arrow.target());
                    push(to, rates.gamma_up, TransitionKind::Excite(arrow));
                }
            }
            for j in (0..=n).filter(|&j| upper(j)) {
                push(s & !(1 << (n + j)), rates.gamma_out, TransitionKind::Decay(j));
            }
        }
        Ok(Self { n_levels, rates, transitions, exit_rates })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn rates(&self) -> Rates {
        self.rates
    }

    pub fn num_states(&self) -> usize {
        self.exit_rates.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Total outflow rate of each state (`-Q[s][s]`).
    pub fn exit_rates(&self) -> &[f64] {
        &self.exit_rates
    }

    pub fn decision_transitions(&self) -> impl Iterator<Item = (&Transition, ArrowKind)> {
        self.transitions.iter().filter_map(|t| match t.kind {
            TransitionKind::Excite(a) => Some((t, a.kind)),
            _ => None,
        })
    }

    /// Number of enabled arrows of `kind` in state `s`.
    pub fn enabled_count(&self, s: usize, kind: ArrowKind) -> usize {
        let n = self.n_levels;
        Arrow::all(n)
            .filter(|a| a.kind == kind && s >> a.source() & 1 == 1 && s >> (n + a.target()) & 1 == 0)
            .count()
    }

    /// Dense generator, `q[to][from]`.
    pub fn generator_dense(&self) -> Vec<Vec<f64>> {
        let m = self.num_states();
        let mut q = vec![vec![0.0; m]; m];
        for t in &self.transitions {
            q[t.to][t.from] += t.rate;
        }
        for (s, &out) in self.exit_rates.iter().enumerate() {
            q[s][s] = -out;
        }
        q
    }

    /// `Q p`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.exit_rates.iter().zip(p).map(|(r, x)| -r * x).collect();
        for t in &self.transitions {
            out[t.to] += t.rate * p[t.from];
        }
        out
    }

    /// Image of state `s` under the left/right reflection.
    pub fn mirror_state(&self, s: usize) -> usize {
        let n = self.n_levels;
        let mut m = 0;
        for i in 0..n {
            if s >> i & 1 == 1 {
                m |= 1 << (n - 1 - i);
            }
        }
        for j in 0..=n {
            if s >> (n + j) & 1 == 1 {
                m |= 1 << (n + (n - j));
            }
        }
        m
    }

    /// Whether every state reaches every other state.
    pub fn is_strongly_connected(&self) -> bool {
        let m = self.num_states();
        let mut fwd = vec![Vec::new(); m];
        let mut bwd = vec![Vec::new(); m];
        for t in &self.transitions {
            fwd[t.from].push(t.to);
            bwd[t.to].push(t.from);
        }
        let reach_all = |adj: &[Vec<usize>]| {
            let mut seen = vec![false; m];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            seen.into_iter().all(|x| x)
        };
        reach_all(&fwd) && reach_all(&bwd)
    }
}

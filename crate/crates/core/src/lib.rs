//! Local reservoir model of choice-based learning.
//!
//! * [`reservoir`]: discrete-cycle Monte Carlo engine.
//! * [`stats`]: consistency curves, active portion, random walks, sweeps.
//! * [`ctmc`]: exact continuous-time Markov chain analysis.
//! * [`photon`]: single-photon polarization decision maker.
//! * [`fit`]: inverting behavioral consistency into a reservoir size.

pub mod ctmc;
pub mod error;
pub mod fit;
pub mod photon;
pub mod reservoir;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

//! Simulator for distributed adaptive optimization with local updates.
//!
//! Workers run Adam-style (or momentum SGD) steps on coordinate-wise clipped
//! stochastic gradients and periodically average their iterates and moment
//! estimates. The crate also provides the minibatch baselines that spend the
//! same gradient budget, heavy-tailed noise oracles, and the diagnostics used
//! to study these methods (consensus error, the momentum-corrected
//! `z`-sequence, Moreau-envelope stationarity).

pub mod clip;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod noise;
pub mod objective;
pub mod optim;
pub mod vector;

pub use error::{Error, Result};
pub use vector::{DiagPrecond, Vector};

//! Stochastic gradient methods for minimizing the conditional value-at-risk
//! (CVaR) of a loss, with the tooling to run them on real data.
//!
//! The upper tail of a loss distribution is handled through the auxiliary
//! objective `f(w, tau; z) = [l(w; z) - tau]_+ / alpha + tau`, whose minimum
//! over `tau` is the CVaR at level `alpha`. See [`objective`] for the
//! objective and its smoothed variants, [`optim`] for the algorithms and
//! [`experiment`] for the train/evaluate pipeline behind the `cvar-bench`
//! binary.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod optim;
pub mod smoothing;

pub use error::{Error, Result};
pub use objective::{AugmentedPoint, RiskParams};
pub use optim::{FeasibleRegion, RunOptions, RunResult, Schedule};
pub use smoothing::{PlusFunction, PlusKind};

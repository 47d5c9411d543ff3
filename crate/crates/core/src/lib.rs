//! Singular-value spectra of input-output Jacobians of deep random networks.
//!
//! The exact finite-depth spectrum comes from solving an implicit equation
//! for its Stieltjes transform ([`master_solver`]); infinite-depth limits
//! have closed forms ([`limit_dist`]); [`rmt_sim`] samples the same networks
//! directly.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod density;
pub mod error;
pub mod free_prob;
pub mod io;
pub mod limit_dist;
pub mod master_solver;
pub mod parallel;
pub mod rmt_sim;
pub mod signal_prop;
pub mod special;

pub use activations::ActivationSpec;
pub use density::{Atom, Domain, SpectralDensity};
pub use error::{Result, SpectraError};
pub use free_prob::{EnsembleKind, MomentSummary, WeightEnsemble};
pub use limit_dist::{LimitClass, LimitSpec};
pub use master_solver::SolverSettings;
pub use parallel::Execution;
pub use rmt_sim::EmpiricalSpectrum;
pub use signal_prop::{FixedPoint, FixedPointSettings, NetworkConfig};

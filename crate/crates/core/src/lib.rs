//! Wavelet-based estimation of conditional optimal transport (COT) values.
//!
//! The COT value between two joint laws `P(dy, dz)` and `Q(dy, dz)` that share a
//! covariate marginal is the `Z`-average of the optimal transport cost between
//! the conditional laws of `Y` given `Z = z`. In the potential-outcome setting it
//! is the sharp lower endpoint of the partial-identification set of
//! `E[h(Y(0), Y(1))]`.
//!
//! The crate is organised bottom-up:
//!
//! * [`wavelet`]: periodized Daubechies bases with pointwise evaluation.
//! * [`density`]: projection density estimates, clipping, renormalisation and
//!   the aligned conditional model used for sampling.
//! * [`ot`]: exact discrete assignment solvers and the Gaussian closed form.
//! * [`cot`]: the two-stage Monte Carlo COT estimator.
//! * [`infer`]: bootstrap confidence intervals.
//! * [`simbench`]: Gaussian simulation models, the closed-form oracle and
//!   experiment drivers.

pub mod cot;
pub mod data;
pub mod density;
pub mod error;
pub mod infer;
pub mod ot;
pub mod rng;
pub mod simbench;
pub mod wavelet;

pub use cot::{estimate_cot, CotConfig, CotEstimate, SampleSize};
pub use data::{JointSample, Points};
pub use density::{fit_density, ConditionalModel, DensityEstimate, EstimatorConfig, Group};
pub use error::{Error, Result};
pub use infer::{bootstrap_ci, BootstrapConfig, ConfidenceInterval};
pub use ot::{empirical_w2sq, gelbrich_w2sq, solve_assignment, CostMatrix, CostSpec};
pub use simbench::{builtin_scenario, GaussianCondModel};
pub use wavelet::{build_filter, FilterBank, WaveletBasis};

//! Two-stage multiple hypothesis testing with a black-box covariate prior.
//!
//! Stage 1 fits a two-groups mixture in which each experiment's prior
//! probability of being non-null is drawn from a beta distribution whose
//! parameters are predicted from the experiment's covariates by a small
//! feed-forward network. Posterior alternative probabilities drive a
//! step-down selection that controls the false discovery rate.
//!
//! Stage 2 tests every covariate for conditional association with the
//! outcomes using conditional randomization tests on the posterior entropy,
//! followed by Benjamini-Hochberg correction across covariates.
//!
//! Module map:
//!
//! - [`densities`]: null and alternative densities, predictive recursion.
//! - [`prior_net`]: the covariate-to-beta network, its loss and training.
//! - [`stage1`]: posteriors, step-down selection, Benjamini-Hochberg.
//! - [`stage2`]: conditional models and randomization tests.
//! - [`benchmark`]: synthetic scenarios and Monte Carlo benchmarks.

pub mod benchmark;
pub mod data;
pub mod densities;
pub mod error;
pub mod prior_net;
pub mod stage1;
pub mod stage2;

pub use data::{CovariateMatrix, FoldAssignment, ZScores};
pub use densities::{Alternative, DensityGrid, LikelihoodTable, TwoGroupsDensities};
pub use error::{Error, Result};
pub use prior_net::{BetaParams, BetaQuadrature, PriorNetwork, TrainConfig, TrainedNetwork};
pub use stage1::{Posteriors, Stage1Report};
pub use stage2::{BoostingConfig, ConditionalKind, Stage2Report};

/// Version tag written into every serialized artifact.
pub const SCHEMA_VERSION: u32 = 1;

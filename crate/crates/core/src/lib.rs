//! Two-stage sequential estimation of the relative risk, odds ratio and
//! their logarithms from two Bernoulli streams, with a guaranteed bound on
//! the (relative) mean-square error.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix it to `f64`.

pub mod config;
pub mod design;
pub mod error;
pub mod estimators;
pub mod group;
pub mod sampling;
pub mod scalar;
pub mod sim;
pub mod special;
pub mod theory;

#[cfg(test)]
mod testutil;

pub use design::{EstimatorKind, SecondStageParams};
pub use error::{Error, Result};
pub use group::{GroupConfig, GroupUsage};
pub use sampling::{Population, SampleLedger, SampleSource, Stage};
pub use scalar::Real;

pub type Design = design::DesignParams<f64>;
pub type SecondStage = design::SecondStageReal<f64>;
pub type Estimate = estimators::EstimateResult<f64>;
pub type GroupedEstimate = group::GroupedEstimate<f64>;
pub type Theory = theory::TheoryPoint<f64>;
pub type Mode = theory::SizeMode<f64>;

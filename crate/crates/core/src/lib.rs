//! Structured nonlinear Bayesian MMSE estimation for sparse signals drawn
//! uniformly from generalized `lp`-balls.
//!
//! The crate is organised bottom-up:
//!
//! * [`special`] and [`moments`] evaluate ball volumes, monomial moments and
//!   inner-product statistics in closed form.
//! * [`estimators`] builds the linear MMSE operator and the structured
//!   (linear map + shared polynomial) estimator together with their exact
//!   Bayesian MSE.
//! * [`optimizer`] trains the structured estimator by alternating a
//!   closed-form coefficient update with Armijo steepest descent on the
//!   linear map.
//! * [`sampling`], [`matrices`] and [`baselines`] supply exact ball samplers,
//!   the sensing-matrix families and a basis-pursuit decoder.
//! * [`harness`] runs configurable NMSE sweeps and persists every artifact.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! All reductions are performed in a fixed order, so both builds produce
//! bit-identical results.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod matrices;
pub mod moments;
pub mod optimizer;
pub mod par;
pub mod sampling;
pub mod special;

pub use error::{Error, Result};
pub use estimators::{PriorCovariance, SensingMatrix, SmmseEstimator};
pub use moments::{CharacteristicVector, MomentTable, MultiIndex};
pub use optimizer::{IterationTrace, OptimizerConfig};

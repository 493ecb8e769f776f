//! Evolution of Taylor-polynomial GAN loss functions.
//!
//! The pieces:
//!
//! * [`taylor`]: Taylor-polynomial loss parameterizations.
//! * [`formulation`]: tripartite GAN losses (classical presets and
//!   genome-driven cubic losses) and the gradient penalty.
//! * [`nn`]: small MLPs with exact backpropagation.
//! * [`data`]: 2-D Gaussian mixtures with known densities.
//! * [`metrics`]: divergence, coverage, SSIM, composite fitness, Welch's test.
//! * [`search`]: CMA-ES and a real-valued GA behind one ask/tell interface.
//! * [`evolution`]: candidate evaluation, the generational loop and the journal.
//! * [`config`]: experiment configuration.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod evolution;
pub mod formulation;
pub mod metrics;
pub mod nn;
pub mod search;
pub mod taylor;

pub use error::{Error, Result};

//! Period-aware asymptotic gains (PAG) of stable linear systems and of
//! Lurie-type nonlinear systems driven by periodic inputs.
//!
//! A `T`-periodic signal is measured by its DC magnitude and the sup-norm of
//! its zero-mean part. The PAG maps those two numbers for the input to bounds
//! on the same two numbers for the asymptotic output. For linear systems the
//! gain is exact ([`gains::linear_pag`]); for systems with a quadratically
//! bounded nonlinearity it is conservative ([`gains::PagEvaluator`]).
//! [`sim`] checks the bounds against simulated periodic steady states.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gains;
pub mod linops;
pub mod median;
pub mod model;
pub mod pll;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    acdc_decompose, rho_of, Channel, Composition, GainCurve, GainRow, InputMap, NonlinearSystem, Nonlinearity,
    OutputMap, RhoVector, SampledSignal, StateSpace, Structure,
};

/// Samples per period used when none is configured.
pub const DEFAULT_GRID_N: usize = 4096;

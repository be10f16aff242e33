//! Differentiable building blocks.
//!
//! [`Graph`] records a forward pass over 2-D arrays and replays it backwards.
//! Layers in [`layers`] pair a parameter declaration with a forward function
//! so the two can never drift apart. [`gradcheck`] compares the tape against
//! central finite differences.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{init_params, read_checkpoint, write_checkpoint, Init, ParamSpec, ParamStore};

/// Scalar types the tape runs on. Training uses `f32`; gradient checks use
/// `f64`.
pub trait Real: NdFloat + FromPrimitive + Sum + Default {}

impl Real for f32 {}
impl Real for f64 {}

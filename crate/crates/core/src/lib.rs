// SPDX-License-Identifier: Apache-2.0

//! Guided diffusion sampling on an analytically solvable toy world.

// `!(x > 0.0)` is the NaN-rejecting form used by every validator.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};

//! Multi-label image classification built on a small tape-based autodiff
//! engine, with one-cycle training, test-time augmentation and
//! rater-agreement evaluation with bootstrap intervals.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{LabelVector, Tensor};

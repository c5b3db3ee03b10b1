//! Two-stage facial wrinkle removal.
//!
//! A segmentation network with nested skip pathways finds wrinkles, and a
//! generator built from fast Fourier convolutions fills them in. This crate is
//! the computational core: a small reverse-mode autodiff engine, the networks,
//! every training objective, the mask policies, the training loops and the
//! evaluation metrics. It performs no IO and builds without `std`
//! (`default-features = false`); the `wrinkle-cli` crate carries file formats
//! and the command line.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod fft;
pub mod inpaint;
pub mod kernels;
pub mod losses;
pub mod maskgen;
pub mod math;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod segnet;
pub mod tensor;
pub mod toy;
pub mod trainer;

pub use crate::autograd::{Gradients, Tape, Var};
pub use crate::data::{AugmentConfig, Image, Mask, ProbMap, Sample};
pub use crate::error::{Error, Result};
pub use crate::tensor::Tensor;

//! Low-bit systolic-array accelerator model for ViT multi-head self-attention.
//!
//! * [`quantarith`]: bit-exact fixed-point kernels (quantizers, exponential,
//!   running statistics, division-free layer-norm quantizer).
//! * [`msa`]: integerized golden model of the attention forward pass and a
//!   full-precision reference.
//! * [`sim`]: cycle-accurate simulator of the array template and the
//!   head-pipelined accelerator.
//! * [`analytics`]: closed-form timing and roofline model.
//! * [`cli`]: configuration, tensor files, reports and command drivers.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod msa;
pub mod quantarith;
pub mod sim;

pub use error::{Error, Result};

//! Separable batch normalization for coordinate-regression landmark
//! localization, built on a small explicit-backward tensor kernel.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors, differentiable primitives and layers,
//!   and a central-difference gradient checker.
//! * [`norm`]: standard BN, brute-force SepBN, simple (SE-style) SepBN,
//!   grouped-attention SepBN and the learned-parameter similarity analysis.
//! * [`model`]: the Vanilla CNN and the multi-head cross-protocol network.
//! * [`data`]: PPM/CSV/JSON dataset formats, the synthetic sub-domain
//!   generator, geometric augmentation and the proportional sampler.
//! * [`train`]: SGD, learning-rate and temperature schedules, training loops,
//!   two-stage cross-protocol training and checkpoints.
//! * [`eval`]: NME, failure rate, per-domain breakdowns and reports.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod norm;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, MultiHeadConfig, MultiHeadNet, Network, NormKind, Regressor, VanillaCnn, VanillaConfig};
pub use norm::{Aggregation, ForwardCtx, Mode, NormLayer};
pub use tensor::{Param, ParamGroup, ParamKind, Tensor};

//! Normalization layers: standard BN and the three separable variants.
//!
//! All variants split BN into *tracking* (batch/running statistics that
//! produce the normalized activation `x̂`) and *mapping* (`γ·x̂ + β`). The
//! separable layers keep `K` mapping sets and choose between them per
//! sample: brute-force SepBN by a known domain label with fully separate
//! branches, simple SepBN by an SE-style attention over whole sets, and
//! grouped SepBN by a pooled attention that picks a mixture per channel
//! group.

mod batch_norm;
mod brute_force;
mod grouped;
mod mapping;
mod simple;
pub mod similarity;
mod stats;

pub use batch_norm::BatchNorm;
pub use brute_force::BruteForceSepBn;
pub use grouped::SepBn;
pub use mapping::{apply_mapping, mapping_backward, MappingGrads};
pub use simple::SimpleSepBn;
pub use similarity::{cosine_similarity, param_similarity, ModuleSimilarity, SimilarityReport};
pub use stats::{channel_stats, RunningStats, SharedNorm};

use crate::error::Result;
use crate::tensor::{Param, Tensor};
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Attention-weighted sum of the mapping sets.
    #[default]
    Soft,
    /// Argmax selection; passes no gradient to the attention path.
    Hard,
}

/// Per-call settings shared by every normalization layer in a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCtx {
    pub mode: Mode,
    /// Softmax temperature used by attention-based layers.
    pub tau: f64,
    /// Per-sample domain labels for brute-force routing.
    pub domains: Option<Vec<usize>>,
    /// Routes every sample of a brute-force layer through this branch.
    pub forced_branch: Option<usize>,
}

impl ForwardCtx {
    pub fn train(tau: f64) -> Self {
        ForwardCtx { mode: Mode::Train, tau, domains: None, forced_branch: None }
    }

    pub fn eval(tau: f64) -> Self {
        ForwardCtx { mode: Mode::Eval, tau, domains: None, forced_branch: None }
    }

    pub fn with_domains(mut self, domains: Option<Vec<usize>>) -> Self {
        self.domains = domains;
        self
    }

    pub fn with_forced_branch(mut self, branch: Option<usize>) -> Self {
        self.forced_branch = branch;
        self
    }
}

/// Hyper-parameters of the separable variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SepBnParams {
    /// Number of mapping sets (brute-force branches).
    pub k: usize,
    /// Channel groups of grouped SepBN.
    pub g: usize,
    /// Adaptive pooling size of grouped SepBN.
    pub t: usize,
    /// Reduction rate of simple SepBN's squeeze.
    pub reduction: usize,
    pub aggregation: Aggregation,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for SepBnParams {
    fn default() -> Self {
        SepBnParams {
            k: 3,
            g: 2,
            t: 3,
            reduction: 16,
            aggregation: Aggregation::Soft,
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

#[derive(Clone, Debug)]
pub enum NormLayer {
    Bn(BatchNorm),
    BruteForce(BruteForceSepBn),
    Simple(SimpleSepBn),
    SepBn(SepBn),
}

impl NormLayer {
    pub fn forward(&mut self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        match self {
            NormLayer::Bn(l) => l.forward(x, ctx.mode),
            NormLayer::BruteForce(l) => l.forward(x, ctx),
            NormLayer::Simple(l) => l.forward(x, ctx),
            NormLayer::SepBn(l) => l.forward(x, ctx),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            NormLayer::Bn(l) => l.backward(grad),
            NormLayer::BruteForce(l) => l.backward(grad),
            NormLayer::Simple(l) => l.backward(grad),
            NormLayer::SepBn(l) => l.backward(grad),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            NormLayer::Bn(l) => l.params(),
            NormLayer::BruteForce(l) => l.params(),
            NormLayer::Simple(l) => l.params(),
            NormLayer::SepBn(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            NormLayer::Bn(l) => l.params_mut(),
            NormLayer::BruteForce(l) => l.params_mut(),
            NormLayer::Simple(l) => l.params_mut(),
            NormLayer::SepBn(l) => l.params_mut(),
        }
    }

    /// Running statistics in declaration order, with their names.
    pub fn buffers(&self) -> Vec<(String, &[f64])> {
        match self {
            NormLayer::Bn(l) => l.stats().named(l.name()),
            NormLayer::BruteForce(l) => l.branches.iter().flat_map(|b| b.stats().named(b.name())).collect(),
            NormLayer::Simple(l) => l.norm.stats.named(&l.name),
            NormLayer::SepBn(l) => l.norm.stats.named(&l.name),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            NormLayer::Bn(l) => l.norm.stats.slices_mut(),
            NormLayer::BruteForce(l) => l.branches.iter_mut().flat_map(|b| b.norm.stats.slices_mut()).collect(),
            NormLayer::Simple(l) => l.norm.stats.slices_mut(),
            NormLayer::SepBn(l) => l.norm.stats.slices_mut(),
        }
    }

    pub fn brute_force_branches(&self) -> Option<usize> {
        match self {
            NormLayer::BruteForce(l) => Some(l.branches.len()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            NormLayer::Bn(l) => l.name(),
            NormLayer::BruteForce(l) => &l.name,
            NormLayer::Simple(l) => &l.name,
            NormLayer::SepBn(l) => &l.name,
        }
    }
}

//! Network builders: the Vanilla CNN (conv → norm → leaky ReLU → max-pool
//! stages followed by a two-layer regressor) and the multi-head network that
//! shares those stages across annotation protocols.

mod backbone;
mod config;
mod head;
mod multihead;
mod network;
mod probe;
mod vanilla;

pub use backbone::{Backbone, ConvStage};
pub use config::{BackboneConfig, HeadSpec, ModelConfig, MultiHeadConfig, NormKind, VanillaConfig};
pub use head::RegressionHead;
pub use multihead::{ActiveHead, MultiHeadNet};
pub use network::Network;
pub use probe::{network_grad_check, perturb_zero_weights, projection_for};
pub use vanilla::VanillaCnn;

use crate::error::Result;
use crate::norm::{ForwardCtx, NormLayer};
use crate::tensor::{Param, Tensor};

/// A network mapping `N×3×S×S` images to `N×2L` coordinates.
///
/// Outputs are offsets in crop units: pixel coordinate `= (o + 0.5)·S`, so
/// a zero output is the crop centre. See [`to_pixels`].
pub trait Regressor {
    fn input_size(&self) -> usize;
    fn output_len(&self) -> usize;
    fn forward(&mut self, images: &Tensor, ctx: &ForwardCtx) -> Result<Tensor>;
    /// Backward for the most recent forward, accumulating parameter grads.
    fn backward(&mut self, grad: &Tensor) -> Result<()>;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn norm_layers(&self) -> Vec<&NormLayer>;
    fn norm_layers_mut(&mut self) -> Vec<&mut NormLayer>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Branch count when the network contains brute-force SepBN layers.
    fn brute_force_branches(&self) -> Option<usize> {
        self.norm_layers().iter().filter_map(|l| l.brute_force_branches()).max()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

/// Raw network output to pixel coordinates of an `size`-pixel crop.
pub fn to_pixels(raw: f64, size: usize) -> f64 {
    (raw + 0.5) * size as f64
}

/// Pixel coordinates of an `size`-pixel crop to training targets.
pub fn to_raw(pixel: f64, size: usize) -> f64 {
    pixel / size as f64 - 0.5
}

use super::backbone::Backbone;
use super::config::VanillaConfig;
use super::head::RegressionHead;
use super::Regressor;
use crate::error::Result;
use crate::norm::{ForwardCtx, NormLayer};
use crate::rng::{self, label};
use crate::tensor::{Param, Tensor};
use rand::Rng;

/// Convolution stages followed by a two-layer coordinate regressor.
#[derive(Clone, Debug)]
pub struct VanillaCnn {
    pub config: VanillaConfig,
    pub backbone: Backbone,
    pub head: RegressionHead,
}

impl VanillaCnn {
    /// Builds with the initialization stream derived from `seed`.
    pub fn new(config: VanillaConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, &mut rng::stream(seed, &[label::INIT]))
    }

    pub fn with_rng(config: VanillaConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.backbone.clone(), rng)?;
        let b = &config.backbone;
        let head =
            RegressionHead::new("head", b.out_channels(), b.output_extent(), config.hidden, 2 * config.landmarks, false, rng);
        Ok(VanillaCnn { config, backbone, head })
    }
}

impl Regressor for VanillaCnn {
    fn input_size(&self) -> usize {
        self.config.backbone.input_size
    }

    fn output_len(&self) -> usize {
        2 * self.config.landmarks
    }

    fn forward(&mut self, images: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let f = self.backbone.forward(images, ctx)?;
        self.head.forward(&f)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let g = self.head.backward(grad)?;
        self.backbone.backward(&g)?;
        Ok(())
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    fn norm_layers(&self) -> Vec<&NormLayer> {
        self.backbone.norm_layers()
    }

    fn norm_layers_mut(&mut self) -> Vec<&mut NormLayer> {
        self.backbone.norm_layers_mut()
    }
}

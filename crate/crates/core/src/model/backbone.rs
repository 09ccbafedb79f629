use super::config::{BackboneConfig, NormKind};
use crate::error::{Error, Result};
use crate::norm::{BatchNorm, BruteForceSepBn, ForwardCtx, NormLayer, SepBn, SimpleSepBn};
use crate::tensor::{Act, Conv2d, MaxPool2d, Param, Tensor};
use rand::Rng;

/// Conv(3×3, pad 1) → norm → leaky ReLU → max-pool(2, 2).
#[derive(Clone, Debug)]
pub struct ConvStage {
    pub conv: Conv2d,
    pub norm: NormLayer,
    act: Act,
    pool: MaxPool2d,
}

impl ConvStage {
    pub fn forward(&mut self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let y = self.norm.forward(&y, ctx)?;
        let y = self.act.forward(&y)?;
        self.pool.forward(&y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.pool.backward(grad)?;
        let g = self.act.backward(&g)?;
        let g = self.norm.backward(&g)?;
        self.conv.backward(&g)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.conv.params();
        p.extend(self.norm.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv.params_mut();
        p.extend(self.norm.params_mut());
        p
    }
}

fn build_norm(cfg: &BackboneConfig, stage: usize, name: &str, rng: &mut impl Rng) -> Result<NormLayer> {
    let c = cfg.base_channels[stage];
    let p = &cfg.sepbn;
    Ok(match cfg.norm_mask[stage] {
        NormKind::Bn => NormLayer::Bn(BatchNorm::new(name, c, p.eps, p.momentum)?),
        NormKind::BruteForce => NormLayer::BruteForce(BruteForceSepBn::new(name, c, p.k, p.eps, p.momentum)?),
        NormKind::Simple => NormLayer::Simple(SimpleSepBn::new(
            name,
            c,
            p.k,
            p.reduction,
            p.eps,
            p.momentum,
            cfg.gamma_noise,
            rng,
        )?),
        NormKind::SepBn => NormLayer::SepBn(SepBn::new(
            name,
            c,
            p.k,
            p.g,
            p.t,
            p.aggregation,
            p.eps,
            p.momentum,
            cfg.gamma_noise,
            rng,
        )?),
    })
}

/// The stack of convolution stages.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stages: Vec<ConvStage>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(config.stages());
        let mut in_ch = 3;
        for (i, &c) in config.base_channels.iter().enumerate() {
            let name = format!("stage{}", i + 1);
            let conv = Conv2d::new(&format!("{name}.conv"), in_ch, c, 3, 1, 1, rng);
            let norm = build_norm(&config, i, &format!("{name}.norm"), rng)?;
            stages.push(ConvStage { conv, norm, act: Act::leaky_relu(), pool: MaxPool2d::new(2, 2) });
            in_ch = c;
        }
        Ok(Backbone { config, stages })
    }

    pub fn forward(&mut self, images: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        let s = self.config.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::dim(format!("expected N×3×{s}×{s} images, got {:?}", images.shape())));
        }
        let mut x = self.stages[0].forward(images, ctx)?;
        for stage in &mut self.stages[1..] {
            x = stage.forward(&x, ctx)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for stage in self.stages.iter_mut().rev() {
            g = stage.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.stages.iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stages.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    pub fn norm_layers(&self) -> Vec<&NormLayer> {
        self.stages.iter().map(|s| &s.norm).collect()
    }

    pub fn norm_layers_mut(&mut self) -> Vec<&mut NormLayer> {
        self.stages.iter_mut().map(|s| &mut s.norm).collect()
    }
}

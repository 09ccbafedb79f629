use super::backbone::Backbone;
use super::config::MultiHeadConfig;
use super::head::RegressionHead;
use super::Regressor;
use crate::error::{Error, Result};
use crate::norm::{ForwardCtx, NormLayer};
use crate::rng::{self, label};
use crate::tensor::{Param, Tensor};
use rand::Rng;

/// One shared backbone with a regression head per annotation protocol.
#[derive(Clone, Debug)]
pub struct MultiHeadNet {
    pub config: MultiHeadConfig,
    pub backbone: Backbone,
    heads: Vec<(String, RegressionHead)>,
    active: Option<usize>,
}

impl MultiHeadNet {
    pub fn new(config: MultiHeadConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, &mut rng::stream(seed, &[label::INIT]))
    }

    pub fn with_rng(config: MultiHeadConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.heads.len() < 2 {
            return Err(Error::config(format!(
                "a multi-head network needs at least 2 heads, got {}",
                config.heads.len()
            )));
        }
        Self::assemble(config, rng)
    }

    /// Like [`MultiHeadNet::new`] but also accepts the single head left by
    /// [`MultiHeadNet::retain_head`]; used when restoring checkpoints.
    pub fn restore(config: MultiHeadConfig, seed: u64) -> Result<Self> {
        if config.heads.is_empty() {
            return Err(Error::config("a multi-head network needs at least one head"));
        }
        Self::assemble(config, &mut rng::stream(seed, &[label::INIT]))
    }

    fn assemble(config: MultiHeadConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.backbone.clone(), rng)?;
        let b = &config.backbone;
        let heads = config
            .heads
            .iter()
            .map(|h| {
                let name = format!("head.{}", h.id);
                let head =
                    RegressionHead::new(&name, b.out_channels(), b.output_extent(), config.hidden, 2 * h.landmarks, true, rng);
                (h.id.clone(), head)
            })
            .collect();
        Ok(MultiHeadNet { config, backbone, heads, active: None })
    }

    pub fn head_ids(&self) -> impl Iterator<Item = &str> {
        self.heads.iter().map(|(id, _)| id.as_str())
    }

    pub fn head_index(&self, id: &str) -> Result<usize> {
        self.heads
            .iter()
            .position(|(h, _)| h == id)
            .ok_or_else(|| Error::Routing(format!("no head registered for protocol {id:?}")))
    }

    pub fn head(&self, id: &str) -> Result<&RegressionHead> {
        Ok(&self.heads[self.head_index(id)?].1)
    }

    /// Backbone plus exactly the head `id`.
    pub fn forward_head(&mut self, images: &Tensor, id: &str, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.head_index(id)?;
        self.forward_index(images, h, ctx)
    }

    fn forward_index(&mut self, images: &Tensor, h: usize, ctx: &ForwardCtx) -> Result<Tensor> {
        self.active = None;
        let f = self.backbone.forward(images, ctx)?;
        let y = self.heads[h].1.forward(&f)?;
        self.active = Some(h);
        Ok(y)
    }

    /// Backward through the head used by the last forward and the backbone.
    pub fn backward_head(&mut self, grad: &Tensor) -> Result<()> {
        let h = self
            .active
            .take()
            .ok_or_else(|| Error::State("multi-head backward called without a preceding forward".into()))?;
        let g = self.heads[h].1.backward(grad)?;
        self.backbone.backward(&g)?;
        Ok(())
    }

    /// Every parameter: backbone first, then heads in registration order.
    pub fn all_params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        for (_, head) in &self.heads {
            p.extend(head.params());
        }
        p
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        for (_, head) in &mut self.heads {
            p.extend(head.params_mut());
        }
        p
    }

    /// A single-protocol view: backbone plus head `id`.
    pub fn select(&mut self, id: &str) -> Result<ActiveHead<'_>> {
        let head = self.head_index(id)?;
        Ok(ActiveHead { net: self, head })
    }

    /// Drops every head except `id`.
    pub fn retain_head(&mut self, id: &str) -> Result<()> {
        let h = self.head_index(id)?;
        let kept = self.heads.swap_remove(h);
        self.heads = vec![kept];
        self.config.heads.retain(|s| s.id == id);
        self.active = None;
        Ok(())
    }
}

/// A [`Regressor`] over one head of a [`MultiHeadNet`]. Its parameter list
/// holds only the backbone and that head, so optimizers never touch the
/// other heads.
pub struct ActiveHead<'a> {
    net: &'a mut MultiHeadNet,
    head: usize,
}

impl ActiveHead<'_> {
    pub fn id(&self) -> &str {
        &self.net.heads[self.head].0
    }
}

impl Regressor for ActiveHead<'_> {
    fn input_size(&self) -> usize {
        self.net.config.backbone.input_size
    }

    fn output_len(&self) -> usize {
        self.net.heads[self.head].1.outputs()
    }

    fn forward(&mut self, images: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        self.net.forward_index(images, self.head, ctx)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        self.net.backward_head(grad)
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = self.net.backbone.params();
        p.extend(self.net.heads[self.head].1.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.net.backbone.params_mut();
        p.extend(self.net.heads[self.head].1.params_mut());
        p
    }

    fn norm_layers(&self) -> Vec<&NormLayer> {
        self.net.backbone.norm_layers()
    }

    fn norm_layers_mut(&mut self) -> Vec<&mut NormLayer> {
        self.net.backbone.norm_layers_mut()
    }
}

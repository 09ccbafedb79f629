use super::mapping::{apply_mapping, hard_selection, mapping_backward};
use super::stats::{RunningStats, SharedNorm};
use super::{Aggregation, ForwardCtx};
use crate::error::{Error, Result};
use crate::tensor::layers::Act;
use crate::tensor::ops::{adaptive_max_pool2d, max_pool_backward, temp_softmax, temp_softmax_backward};
use crate::tensor::{Conv2d, Linear, Param, ParamKind, Tensor};
use rand::Rng;

/// Ones plus uniform noise in `±noise`.
pub(crate) fn noisy_ones(shape: &[usize], noise: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if noise > 0.0 { 1.0 + rng.random_range(-noise..=noise) } else { 1.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

#[derive(Clone, Debug)]
struct Saved {
    pool_argmax: Vec<usize>,
    input_shape: Vec<usize>,
    pi: Tensor,
    mix: Tensor,
    gamma_hat: Vec<f64>,
    tau: f64,
    aggregation: Aggregation,
}

/// Grouped-attention separable BN.
///
/// One shared normalization produces `x̂`; `K` mapping sets are mixed per
/// sample and per channel group by attention weights `π ∈ R^{N×G×K}`:
/// adaptive max pool to `T×T`, a 1×1 convolution to `G` channels, an MLP
/// with one hidden layer of width `G·T·T`, and a temperature softmax over
/// `K`. The MLP output layer starts at zero, so `π` starts uniform.
#[derive(Clone, Debug)]
pub struct SepBn {
    pub name: String,
    pub norm: SharedNorm,
    pub gamma: Param,
    pub beta: Param,
    pub groups: usize,
    pub pool: usize,
    pub aggregation: Aggregation,
    pub att_conv: Conv2d,
    pub att_fc1: Linear,
    att_act: Act,
    pub att_fc2: Linear,
    saved: Option<Saved>,
}

impl SepBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        channels: usize,
        k: usize,
        groups: usize,
        pool: usize,
        aggregation: Aggregation,
        eps: f64,
        momentum: f64,
        gamma_noise: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if k == 0 || pool == 0 {
            return Err(Error::param("SepBN needs K >= 1 and T >= 1"));
        }
        if groups == 0 || channels % groups != 0 {
            return Err(Error::param(format!("channel count {channels} is not divisible by G = {groups}")));
        }
        let flat = groups * pool * pool;
        Ok(SepBn {
            name: name.to_string(),
            norm: SharedNorm::new(RunningStats::new(channels, eps, momentum)?),
            gamma: Param::new(format!("{name}.gamma"), noisy_ones(&[k, channels], gamma_noise, rng), ParamKind::NormScale),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[k, channels]), ParamKind::NormShift),
            groups,
            pool,
            aggregation,
            att_conv: Conv2d::new(&format!("{name}.att_conv"), channels, groups, 1, 1, 0, rng),
            att_fc1: Linear::new(&format!("{name}.att_fc1"), flat, flat, rng),
            att_act: Act::leaky_relu(),
            att_fc2: Linear::zeros(&format!("{name}.att_fc2"), flat, groups * k),
            saved: None,
        })
    }

    pub fn k(&self) -> usize {
        self.gamma.value.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.shape()[1]
    }

    fn attention_inner(&mut self, x: &Tensor, tau: f64) -> Result<(Tensor, Vec<usize>)> {
        let (n, c, _, _) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::dim(format!("{} has {} channels, input has {c}", self.name, self.channels())));
        }
        let pooled = adaptive_max_pool2d(x, self.pool)?;
        let reduced = self.att_conv.forward(&pooled.output)?;
        let flat = reduced.into_reshaped(&[n, self.groups * self.pool * self.pool])?;
        let h = self.att_fc1.forward(&flat)?;
        let a = self.att_act.forward(&h)?;
        let logits = self.att_fc2.forward(&a)?.into_reshaped(&[n, self.groups, self.k()])?;
        Ok((temp_softmax(&logits, tau)?, pooled.argmax))
    }

    /// Attention weights `π` (`N×G×K`) for input `x` at temperature `tau`.
    pub fn attention(&mut self, x: &Tensor, tau: f64) -> Result<Tensor> {
        self.attention_inner(x, tau).map(|(pi, _)| pi)
    }

    pub fn forward(&mut self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let (pi, pool_argmax) = self.attention_inner(x, ctx.tau)?;
        let xhat = self.norm.forward(x, ctx.mode)?;
        let mix = match self.aggregation {
            Aggregation::Soft => pi.clone(),
            Aggregation::Hard => hard_selection(&pi),
        };
        let (y, (gamma_hat, _)) = apply_mapping(&xhat, &self.gamma.value, &self.beta.value, &mix)?;
        self.saved = Some(Saved {
            pool_argmax,
            input_shape: x.shape().to_vec(),
            pi,
            mix,
            gamma_hat,
            tau: ctx.tau,
            aggregation: self.aggregation,
        });
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let saved = self
            .saved
            .take()
            .ok_or_else(|| Error::State(format!("{}: backward called without a preceding forward", self.name)))?;
        let g = mapping_backward(
            grad,
            self.norm.xhat()?,
            &self.gamma.value,
            &self.beta.value,
            &saved.mix,
            &saved.gamma_hat,
        )?;
        self.gamma.value.accumulate_grad(&g.dgamma);
        self.beta.value.accumulate_grad(&g.dbeta);
        let mut dx = self.norm.backward(&g.dxhat)?;
        if saved.aggregation == Aggregation::Hard {
            return Ok(dx);
        }

        let n = saved.input_shape[0];
        let t = self.pool;
        let dlogits = temp_softmax_backward(&saved.pi, &g.dmix, saved.tau)?
            .into_reshaped(&[n, self.groups * self.k()])?;
        let da = self.att_fc2.backward(&dlogits)?;
        let dh = self.att_act.backward(&da)?;
        let dflat = self.att_fc1.backward(&dh)?.into_reshaped(&[n, self.groups, t, t])?;
        let dpooled = self.att_conv.backward(&dflat)?;
        let d_att = max_pool_backward(&dpooled, &saved.pool_argmax, &saved.input_shape)?;
        for (a, b) in dx.data_mut().iter_mut().zip(d_att.data()) {
            *a += b;
        }
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = vec![&self.gamma, &self.beta];
        p.extend(self.att_conv.params());
        p.extend(self.att_fc1.params());
        p.extend(self.att_fc2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = vec![&mut self.gamma, &mut self.beta];
        p.extend(self.att_conv.params_mut());
        p.extend(self.att_fc1.params_mut());
        p.extend(self.att_fc2.params_mut());
        p
    }
}

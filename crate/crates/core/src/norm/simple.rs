use super::mapping::{apply_mapping, mapping_backward};
use super::stats::{RunningStats, SharedNorm};
use super::ForwardCtx;
use crate::error::{Error, Result};
use crate::tensor::layers::{fan_in_uniform, Act};
use crate::tensor::ops::{global_avg_pool, global_avg_pool_backward, temp_softmax, temp_softmax_backward};
use crate::tensor::{Linear, Param, ParamKind, Tensor};
use rand::Rng;

#[derive(Clone, Debug)]
struct Saved {
    lambda: Tensor,
    gamma_hat: Vec<f64>,
    tau: f64,
    input_shape: Vec<usize>,
}

/// SE-style separable BN: one attention vector `λ ∈ R^K` per sample weighs
/// whole mapping sets,
/// `λ = softmax(sigmoid(W_ex·lrelu(W_sq·GAP(x))) / τ)`.
#[derive(Clone, Debug)]
pub struct SimpleSepBn {
    pub name: String,
    pub norm: SharedNorm,
    pub gamma: Param,
    pub beta: Param,
    pub squeeze: Linear,
    squeeze_act: Act,
    pub excite: Linear,
    excite_act: Act,
    saved: Option<Saved>,
}

impl SimpleSepBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        channels: usize,
        k: usize,
        reduction: usize,
        eps: f64,
        momentum: f64,
        gamma_noise: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("simple SepBN needs K >= 1"));
        }
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::param(format!(
                "channel count {channels} is not divisible by reduction rate {reduction}"
            )));
        }
        let hidden = channels / reduction;
        let gamma = super::grouped::noisy_ones(&[k, channels], gamma_noise, rng);
        Ok(SimpleSepBn {
            name: name.to_string(),
            norm: SharedNorm::new(RunningStats::new(channels, eps, momentum)?),
            gamma: Param::new(format!("{name}.gamma"), gamma, ParamKind::NormScale),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[k, channels]), ParamKind::NormShift),
            squeeze: Linear::new(&format!("{name}.squeeze"), channels, hidden, rng),
            squeeze_act: Act::leaky_relu(),
            excite: Linear::from_tensors(
                &format!("{name}.excite"),
                fan_in_uniform(&[k, hidden], hidden, rng),
                Tensor::zeros(&[k]),
            ),
            excite_act: Act::sigmoid(),
            saved: None,
        })
    }

    pub fn k(&self) -> usize {
        self.gamma.value.shape()[0]
    }

    /// Attention weights `λ` (`N×K`) for input `x`.
    pub fn attention(&mut self, x: &Tensor, tau: f64) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let s = global_avg_pool(x)?.into_reshaped(&[n, c])?;
        let h = self.squeeze.forward(&s)?;
        let a = self.squeeze_act.forward(&h)?;
        let e = self.excite.forward(&a)?;
        let z = self.excite_act.forward(&e)?;
        temp_softmax(&z, tau)
    }

    pub fn forward(&mut self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let (n, ..) = x.dims4()?;
        let xhat = self.norm.forward(x, ctx.mode)?;
        let lambda = self.attention(x, ctx.tau)?;
        let mix = lambda.reshape(&[n, 1, self.k()])?;
        let (y, (gamma_hat, _)) = apply_mapping(&xhat, &self.gamma.value, &self.beta.value, &mix)?;
        self.saved = Some(Saved { lambda, gamma_hat, tau: ctx.tau, input_shape: x.shape().to_vec() });
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let saved = self
            .saved
            .take()
            .ok_or_else(|| Error::State(format!("{}: backward called without a preceding forward", self.name)))?;
        let n = saved.input_shape[0];
        let c = saved.input_shape[1];
        let mix = saved.lambda.reshape(&[n, 1, self.k()])?;
        let g = mapping_backward(
            grad,
            self.norm.xhat()?,
            &self.gamma.value,
            &self.beta.value,
            &mix,
            &saved.gamma_hat,
        )?;
        self.gamma.value.accumulate_grad(&g.dgamma);
        self.beta.value.accumulate_grad(&g.dbeta);

        let dlambda = g.dmix.into_reshaped(saved.lambda.shape())?;
        let dz = temp_softmax_backward(&saved.lambda, &dlambda, saved.tau)?;
        let de = self.excite_act.backward(&dz)?;
        let da = self.excite.backward(&de)?;
        let dh = self.squeeze_act.backward(&da)?;
        let ds = self.squeeze.backward(&dh)?.into_reshaped(&[n, c, 1, 1])?;
        let d_att = global_avg_pool_backward(&ds, &saved.input_shape)?;

        let mut dx = self.norm.backward(&g.dxhat)?;
        for (a, b) in dx.data_mut().iter_mut().zip(d_att.data()) {
            *a += b;
        }
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = vec![&self.gamma, &self.beta];
        p.extend(self.squeeze.params());
        p.extend(self.excite.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = vec![&mut self.gamma, &mut self.beta];
        p.extend(self.squeeze.params_mut());
        p.extend(self.excite.params_mut());
        p
    }
}

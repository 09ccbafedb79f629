use super::stats::{RunningStats, SharedNorm};
use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Param, ParamKind, Tensor};

/// Standard batch normalization: `y_c = γ_c·x̂_c + β_c`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    name: String,
    pub norm: SharedNorm,
    pub gamma: Param,
    pub beta: Param,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        Self::with_affine(name, vec![1.0; channels], vec![0.0; channels], eps, momentum)
    }

    pub fn with_affine(name: &str, gamma: Vec<f64>, beta: Vec<f64>, eps: f64, momentum: f64) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c {
            return Err(Error::dim("gamma and beta lengths differ"));
        }
        Ok(BatchNorm {
            name: name.to_string(),
            norm: SharedNorm::new(RunningStats::new(c, eps, momentum)?),
            gamma: Param::new(format!("{name}.gamma"), Tensor::new(vec![c], gamma)?, ParamKind::NormScale),
            beta: Param::new(format!("{name}.beta"), Tensor::new(vec![c], beta)?, ParamKind::NormShift),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stats(&self) -> &super::RunningStats {
        &self.norm.stats
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let xhat = self.norm.forward(x, mode)?;
        let (_, c, h, w) = xhat.dims4()?;
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        let mut y = xhat.into_data();
        for (i, chunk) in y.chunks_mut(h * w).enumerate() {
            let (a, s) = (g[i % c], b[i % c]);
            chunk.iter_mut().for_each(|v| *v = a * *v + s);
        }
        Tensor::new(x.shape().to_vec(), y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let xhat = self.norm.xhat()?;
        if grad.shape() != xhat.shape() {
            return Err(Error::dim("batch norm grad shape mismatch"));
        }
        let (_, c, h, w) = xhat.dims4()?;
        let plane = h * w;
        let gamma = self.gamma.value.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dxhat = grad.data().to_vec();
        for (i, (chunk, xh)) in dxhat.chunks_mut(plane).zip(xhat.data().chunks(plane)).enumerate() {
            let ch = i % c;
            for (d, &xv) in chunk.iter_mut().zip(xh) {
                dgamma[ch] += *d * xv;
                dbeta[ch] += *d;
                *d *= gamma[ch];
            }
        }
        let dxhat = Tensor::new(grad.shape().to_vec(), dxhat)?;
        self.gamma.value.accumulate_grad(&dgamma);
        self.beta.value.accumulate_grad(&dbeta);
        self.norm.backward(&dxhat)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

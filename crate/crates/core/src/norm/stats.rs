use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel mean and biased (population) variance over `(N, H, W)`.
pub fn channel_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let m = (n * plane) as f64;
    let data = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            let base = (s * c + ch) * plane;
            sum += data[base..base + plane].iter().sum::<f64>();
        }
        let mu = sum / m;
        let mut sq = 0.0;
        for s in 0..n {
            let base = (s * c + ch) * plane;
            sq += data[base..base + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    Ok((mean, var))
}

/// Tracking parameters of a BN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::param(format!("BN eps must be positive, got {eps}")));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::param(format!("BN momentum must lie in [0, 1], got {momentum}")));
        }
        Ok(RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels], eps, momentum })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `new = (1 − m)·old + m·batch`.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    pub(crate) fn named(&self, layer: &str) -> Vec<(String, &[f64])> {
        vec![
            (format!("{layer}.running_mean"), self.mean.as_slice()),
            (format!("{layer}.running_var"), self.var.as_slice()),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.mean.as_mut_slice(), self.var.as_mut_slice()]
    }
}

#[derive(Clone, Debug)]
struct NormSaved {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// The normalization half of BN: batch statistics in train mode, running
/// statistics in eval mode.
#[derive(Clone, Debug)]
pub struct SharedNorm {
    pub stats: RunningStats,
    saved: Option<NormSaved>,
}

impl SharedNorm {
    pub fn new(stats: RunningStats) -> Self {
        SharedNorm { stats, saved: None }
    }

    /// Returns `x̂` and updates the running statistics in train mode.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.stats.channels() {
            return Err(Error::dim(format!("norm layer has {} channels, input has {c}", self.stats.channels())));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if n * h * w < 2 {
                    return Err(Error::DegenerateStatistics(format!(
                        "train-mode batch statistics need at least 2 values per channel, got N·H·W = {}",
                        n * h * w
                    )));
                }
                let (mean, var) = channel_stats(x)?;
                self.stats.update(&mean, &var);
                (mean, var)
            }
            Mode::Eval => (self.stats.mean.clone(), self.stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.stats.eps).sqrt()).collect();
        let plane = h * w;
        let mut xhat = x.data().to_vec();
        for (i, chunk) in xhat.chunks_mut(plane).enumerate() {
            let ch = i % c;
            let (mu, is) = (mean[ch], inv_std[ch]);
            chunk.iter_mut().for_each(|v| *v = (*v - mu) * is);
        }
        let xhat = Tensor::new(x.shape().to_vec(), xhat)?;
        self.saved = Some(NormSaved { xhat: xhat.clone(), inv_std, mode });
        Ok(xhat)
    }

    /// `x̂` of the most recent forward.
    pub fn xhat(&self) -> Result<&Tensor> {
        self.saved
            .as_ref()
            .map(|s| &s.xhat)
            .ok_or_else(|| Error::State("norm: backward called without a preceding forward".into()))
    }

    /// Maps `dL/dx̂` to `dL/dx`, including the batch-statistics dependence in
    /// train mode.
    pub fn backward(&mut self, dxhat: &Tensor) -> Result<Tensor> {
        let saved = self
            .saved
            .take()
            .ok_or_else(|| Error::State("norm: backward called without a preceding forward".into()))?;
        let (n, c, h, w) = saved.xhat.dims4()?;
        if dxhat.shape() != saved.xhat.shape() {
            return Err(Error::dim("norm grad shape mismatch"));
        }
        let plane = h * w;
        let xh = saved.xhat.data();
        let g = dxhat.data();
        let mut dx = vec![0.0; g.len()];
        match saved.mode {
            Mode::Eval => {
                for (i, (d, gv)) in dx.chunks_mut(plane).zip(g.chunks(plane)).enumerate() {
                    let is = saved.inv_std[i % c];
                    d.iter_mut().zip(gv).for_each(|(a, b)| *a = b * is);
                }
            }
            Mode::Train => {
                let m = (n * plane) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for i in 0..n * c {
                    let ch = i % c;
                    let r = i * plane..(i + 1) * plane;
                    for (gv, xv) in g[r.clone()].iter().zip(&xh[r]) {
                        sum_g[ch] += gv;
                        sum_gx[ch] += gv * xv;
                    }
                }
                for i in 0..n * c {
                    let ch = i % c;
                    let (is, sg, sgx) = (saved.inv_std[ch], sum_g[ch] / m, sum_gx[ch] / m);
                    let r = i * plane..(i + 1) * plane;
                    for ((d, gv), xv) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xh[r]) {
                        *d = is * (gv - sg - xv * sgx);
                    }
                }
            }
        }
        Tensor::new(saved.xhat.shape().to_vec(), dx)
    }
}

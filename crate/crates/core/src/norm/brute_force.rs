use super::{BatchNorm, ForwardCtx, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Param, Tensor};

/// `K` independent BN branches; each sample is normalized and mapped only
/// by the branch of its domain label.
#[derive(Clone, Debug)]
pub struct BruteForceSepBn {
    pub name: String,
    pub branches: Vec<BatchNorm>,
    saved: Option<Vec<Vec<usize>>>,
}

impl BruteForceSepBn {
    pub fn new(name: &str, channels: usize, k: usize, eps: f64, momentum: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::param(format!("brute-force SepBN needs K >= 2 branches, got {k}")));
        }
        let branches = (0..k)
            .map(|b| BatchNorm::new(&format!("{name}.branch{b}"), channels, eps, momentum))
            .collect::<Result<_>>()?;
        Ok(BruteForceSepBn { name: name.to_string(), branches, saved: None })
    }

    pub fn k(&self) -> usize {
        self.branches.len()
    }

    fn routes(&self, n: usize, ctx: &ForwardCtx) -> Result<Vec<Vec<usize>>> {
        let k = self.k();
        let mut groups = vec![Vec::new(); k];
        if let Some(b) = ctx.forced_branch {
            if b >= k {
                return Err(Error::Routing(format!("{}: forced branch {b} out of range [0, {k})", self.name)));
            }
            groups[b] = (0..n).collect();
            return Ok(groups);
        }
        let labels = ctx
            .domains
            .as_ref()
            .ok_or_else(|| Error::Routing(format!("{}: brute-force SepBN needs a domain label per sample", self.name)))?;
        if labels.len() != n {
            return Err(Error::Routing(format!("{}: {} labels for {n} samples", self.name, labels.len())));
        }
        for (i, &d) in labels.iter().enumerate() {
            if d >= k {
                return Err(Error::Routing(format!("{}: domain label {d} out of range [0, {k})", self.name)));
            }
            groups[d].push(i);
        }
        Ok(groups)
    }

    pub fn forward(&mut self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let (n, ..) = x.dims4()?;
        let groups = self.routes(n, ctx)?;
        if ctx.mode == Mode::Train {
            // fail before any branch has touched its running statistics
            let (_, _, h, w) = x.dims4()?;
            if let Some((b, g)) = groups.iter().enumerate().find(|(_, g)| !g.is_empty() && g.len() * h * w < 2) {
                return Err(Error::DegenerateStatistics(format!(
                    "{}: branch {b} received {} value(s) per channel",
                    self.name,
                    g.len() * h * w
                )));
            }
        }
        let mut out = Tensor::zeros(x.shape());
        for (branch, idx) in self.branches.iter_mut().zip(&groups) {
            if idx.is_empty() {
                continue;
            }
            let y = branch.forward(&x.gather_rows(idx), ctx.mode)?;
            out.scatter_rows(idx, &y);
        }
        self.saved = Some(groups);
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let groups = self
            .saved
            .take()
            .ok_or_else(|| Error::State(format!("{}: backward called without a preceding forward", self.name)))?;
        let mut dx = Tensor::zeros(grad.shape());
        for (branch, idx) in self.branches.iter_mut().zip(&groups) {
            if idx.is_empty() {
                continue;
            }
            let d = branch.backward(&grad.gather_rows(idx))?;
            dx.scatter_rows(idx, &d);
        }
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.branches.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

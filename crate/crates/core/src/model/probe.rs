use super::Regressor;
use crate::error::Result;
use crate::norm::ForwardCtx;
use crate::rng;
use crate::tensor::{grad_check, Differentiable, GradCheckOptions, GradCheckReport, Param, ParamKind, Tensor};
use rand::Rng;

/// A fixed random projection matching the network's output shape. The
/// scalar `Σ proj⊙output` used as the checked loss is smooth everywhere.
pub fn projection_for(batch: usize, outputs: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[0x9e37]);
    let data = (0..batch * outputs).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![batch, outputs], data).expect("positive extents")
}

struct Probe<'a, R: ?Sized> {
    net: &'a mut R,
    images: &'a Tensor,
    proj: Tensor,
    ctx: &'a ForwardCtx,
}

impl<R: Regressor + ?Sized> Differentiable for Probe<'_, R> {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let y = self.net.forward(self.images, self.ctx)?;
        Ok(y.data().iter().zip(self.proj.data()).map(|(a, b)| a * b).sum())
    }

    fn backward(&mut self) -> Result<()> {
        self.net.backward(&self.proj)
    }
}

/// Gradient check of every parameter of `net` on `images`.
///
/// Zero-initialized layers make upstream gradients vanish; perturb them
/// first for a meaningful check.
pub fn network_grad_check<R: Regressor + ?Sized>(
    net: &mut R,
    images: &Tensor,
    ctx: &ForwardCtx,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let batch = images.shape()[0];
    let proj = projection_for(batch, net.output_len(), opts.seed);
    let mut probe = Probe { net, images, proj, ctx };
    grad_check(&mut probe, opts)
}

/// Fills every all-zero weight with `U(±scale)` so gradients reach the layers
/// behind it. Returns the names of the perturbed parameters.
pub fn perturb_zero_weights(params: Vec<&mut Param>, scale: f64, seed: u64) -> Vec<String> {
    let mut r = rng::stream(seed, &[0x7a11]);
    let mut touched = Vec::new();
    for p in params {
        if p.kind == ParamKind::Weight && p.value.data().iter().all(|&v| v == 0.0) {
            for v in p.value.data_mut() {
                *v = r.random_range(-scale..scale);
            }
            touched.push(p.name.clone());
        }
    }
    touched
}

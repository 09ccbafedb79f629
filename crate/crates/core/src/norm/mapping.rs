//! The mapping half shared by the separable layers. Channel group `g` is the
//! contiguous block `[g·M, (g+1)·M)` with `M = C/G`; each sample and group
//! mixes the `K` sets `(γ_k, β_k)` with weights `mix[n, g, ·]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-sample, per-channel mapping parameters `(γ̂, β̂)`, each `N×C` flat.
pub type MixedParams = (Vec<f64>, Vec<f64>);

fn check(xhat: &Tensor, gamma: &Tensor, beta: &Tensor, mix: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = xhat.dims4()?;
    let [k, gc] = gamma.shape()[..] else {
        return Err(Error::dim("mapping gamma must be K×C"));
    };
    if gc != c || beta.shape() != gamma.shape() {
        return Err(Error::dim(format!("mapping sets are {k}×{gc}, input has {c} channels")));
    }
    let [mn, g, mk] = mix.shape()[..] else {
        return Err(Error::dim("mixing weights must be N×G×K"));
    };
    if mn != n || mk != k || g == 0 || c % g != 0 {
        return Err(Error::dim(format!("mixing weights {:?} do not fit N={n}, C={c}, K={k}", mix.shape())));
    }
    Ok((n, c, h * w, k, g))
}

/// `y[n, c] = γ̂[n, c]·x̂[n, c] + β̂[n, c]` with
/// `γ̂[n, c] = Σ_k mix[n, g(c), k]·γ[k, c]` (`β̂` likewise).
pub fn apply_mapping(xhat: &Tensor, gamma: &Tensor, beta: &Tensor, mix: &Tensor) -> Result<(Tensor, MixedParams)> {
    let (n, c, plane, k, g) = check(xhat, gamma, beta, mix)?;
    let m = c / g;
    let (gd, bd, wd) = (gamma.data(), beta.data(), mix.data());
    let mut gh = vec![0.0; n * c];
    let mut bh = vec![0.0; n * c];
    for s in 0..n {
        for ch in 0..c {
            let wrow = &wd[(s * g + ch / m) * k..(s * g + ch / m + 1) * k];
            let (mut ga, mut ba) = (0.0, 0.0);
            for (kk, &wk) in wrow.iter().enumerate() {
                ga += wk * gd[kk * c + ch];
                ba += wk * bd[kk * c + ch];
            }
            gh[s * c + ch] = ga;
            bh[s * c + ch] = ba;
        }
    }
    let mut y = xhat.data().to_vec();
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let (a, b) = (gh[i], bh[i]);
        chunk.iter_mut().for_each(|v| *v = a * *v + b);
    }
    Ok((Tensor::new(xhat.shape().to_vec(), y)?, (gh, bh)))
}

#[derive(Clone, Debug)]
pub struct MappingGrads {
    pub dxhat: Tensor,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
    pub dmix: Tensor,
}

pub fn mapping_backward(
    grad: &Tensor,
    xhat: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mix: &Tensor,
    gamma_hat: &[f64],
) -> Result<MappingGrads> {
    let (n, c, plane, k, g) = check(xhat, gamma, beta, mix)?;
    if grad.shape() != xhat.shape() {
        return Err(Error::dim("mapping grad shape mismatch"));
    }
    let m = c / g;
    let (dy, xh) = (grad.data(), xhat.data());
    let mut dxhat = vec![0.0; dy.len()];
    let mut dgh = vec![0.0; n * c];
    let mut dbh = vec![0.0; n * c];
    for i in 0..n * c {
        let r = i * plane..(i + 1) * plane;
        let a = gamma_hat[i];
        let (mut sg, mut sb) = (0.0, 0.0);
        for ((d, &gv), &xv) in dxhat[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
            *d = gv * a;
            sg += gv * xv;
            sb += gv;
        }
        dgh[i] = sg;
        dbh[i] = sb;
    }
    let (gd, bd, wd) = (gamma.data(), beta.data(), mix.data());
    let mut dgamma = vec![0.0; k * c];
    let mut dbeta = vec![0.0; k * c];
    let mut dmix = vec![0.0; n * g * k];
    for s in 0..n {
        for ch in 0..c {
            let row = (s * g + ch / m) * k;
            let (a, b) = (dgh[s * c + ch], dbh[s * c + ch]);
            for kk in 0..k {
                let wk = wd[row + kk];
                dgamma[kk * c + ch] += wk * a;
                dbeta[kk * c + ch] += wk * b;
                dmix[row + kk] += gd[kk * c + ch] * a + bd[kk * c + ch] * b;
            }
        }
    }
    Ok(MappingGrads {
        dxhat: Tensor::new(xhat.shape().to_vec(), dxhat)?,
        dgamma,
        dbeta,
        dmix: Tensor::new(mix.shape().to_vec(), dmix)?,
    })
}

/// One-hot of the argmax over the last axis, first index on ties.
pub(crate) fn hard_selection(weights: &Tensor) -> Tensor {
    let k = *weights.shape().last().expect("rank >= 1");
    let mut out = vec![0.0; weights.numel()];
    for (row, dst) in weights.data().chunks(k).zip(out.chunks_mut(k)) {
        let best = row
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
        dst[best] = 1.0;
    }
    Tensor::new(weights.shape().to_vec(), out).expect("same shape")
}

//! Central-difference gradient checking.

use super::Param;
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;

/// Something with parameters and a scalar loss that can be differentiated.
pub trait Differentiable {
    fn params_mut(&mut self) -> Vec<&mut Param>;
    /// Forward pass only.
    fn loss(&mut self) -> Result<f64>;
    /// Backward pass for the loss of the most recent [`Differentiable::loss`]
    /// call, accumulating into parameter gradients.
    fn backward(&mut self) -> Result<()>;
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Layers with more elements are checked on a random subsample of this
    /// size.
    pub max_elements_per_layer: usize,
    /// Denominator floor, per unit of loss magnitude: an element whose
    /// analytic and numeric gradients are both below `floor·max(1, |loss|)`
    /// is compared in absolute terms. Gradients that vanish analytically
    /// leave only central-difference roundoff, which this absorbs.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, tolerance: 1e-4, max_elements_per_layer: 200, floor: 1e-5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradError {
    pub layer: String,
    pub checked: usize,
    /// Sampled elements whose difference stencil straddled a kink
    /// (max-pool switch, leaky-ReLU origin) and were replaced by another
    /// draw.
    pub kinks: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: (String, usize),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerGradError>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.max_rel_err <= self.tolerance)
    }

    pub fn into_result(self) -> Result<Self> {
        match self.layers.iter().find(|l| l.max_rel_err > self.tolerance) {
            None => Ok(self),
            Some(l) => Err(Error::GradCheck(format!(
                "layer {} element {}[{}]: relative error {:.3e} > {:.1e}",
                l.layer, l.worst.0, l.worst.1, l.max_rel_err, self.tolerance
            ))),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Layer name of a parameter: its name without the trailing `.field`.
fn layer_name(param: &str) -> &str {
    param.rsplit_once('.').map_or(param, |(layer, _)| layer)
}

fn central<D: Differentiable + ?Sized>(net: &mut D, pi: usize, idx: usize, h: f64) -> Result<f64> {
    let orig = net.params_mut()[pi].value.data()[idx];
    net.params_mut()[pi].value.data_mut()[idx] = orig + h;
    let plus = net.loss();
    net.params_mut()[pi].value.data_mut()[idx] = orig - h;
    let minus = net.loss();
    net.params_mut()[pi].value.data_mut()[idx] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Compares analytic gradients with central differences, sampling up to
/// `max_elements_per_layer` elements from each layer.
///
/// An element that fails the tolerance is re-measured at half the step.
/// If the two differences disagree the loss is not smooth inside the
/// stencil; the element is counted as a kink and another one is drawn.
pub fn grad_check<D: Differentiable + ?Sized>(net: &mut D, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    for p in net.params_mut() {
        p.value.grad_mut();
        p.zero_grad();
    }
    let base = net.loss()?;
    net.backward()?;
    let floor = opts.floor * base.abs().max(1.0);
    let (names, analytic): (Vec<String>, Vec<Vec<f64>>) =
        net.params_mut().iter().map(|p| (p.name.clone(), p.grad().to_vec())).unzip();

    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (pi, name) in names.iter().enumerate() {
        let layer = layer_name(name);
        match groups.iter_mut().find(|(l, _)| l == layer) {
            Some((_, members)) => members.push(pi),
            None => groups.push((layer.to_string(), vec![pi])),
        }
    }

    let mut sampler = rng::stream(opts.seed, &[]);
    let mut layers = Vec::with_capacity(groups.len());
    for (layer, members) in groups {
        let positions: Vec<(usize, usize)> =
            members.iter().flat_map(|&pi| (0..analytic[pi].len()).map(move |i| (pi, i))).collect();
        let mut order: Vec<usize> = (0..positions.len()).collect();
        if positions.len() > opts.max_elements_per_layer {
            order.shuffle(&mut sampler);
        }
        let mut entry =
            LayerGradError { layer, checked: 0, kinks: 0, max_rel_err: 0.0, worst: (names[members[0]].clone(), 0) };
        for &o in &order {
            if entry.checked == opts.max_elements_per_layer {
                break;
            }
            let (pi, idx) = positions[o];
            let a = analytic[pi][idx];
            let numeric = central(net, pi, idx, opts.step)?;
            let mut err = relative_error(a, numeric, floor);
            if err > opts.tolerance && err.is_finite() {
                let half = central(net, pi, idx, opts.step / 2.0)?;
                if relative_error(numeric, half, floor) > 0.1 * opts.tolerance {
                    entry.kinks += 1;
                    continue;
                }
                err = err.max(relative_error(a, half, floor));
            }
            entry.checked += 1;
            if err > entry.max_rel_err || !err.is_finite() {
                entry.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
                entry.worst = (names[pi].clone(), idx);
            }
        }
        layers.push(entry);
    }
    Ok(GradCheckReport { tolerance: opts.tolerance, layers })
}

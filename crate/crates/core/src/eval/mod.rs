//! Normalized mean error, failure rate, per-domain breakdowns, the
//! best-of-K brute-force protocol and report files.

mod report;

pub use report::{emit_report, read_report, ReportFormat};

use crate::data::{crop_resize, BBox, Crop, Dataset, NormRule, ProtocolSpec};
use crate::error::{Error, Result};
use crate::model::{to_pixels, Regressor};
use crate::norm::ForwardCtx;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const DEFAULT_FAILURE_THRESHOLD: f64 = 10.0;

/// NME normalizer `d` of one sample.
pub fn normalizer(gt: &[[f64; 2]], protocol: &ProtocolSpec, bbox: &BBox) -> Result<f64> {
    let d = match protocol.norm_rule {
        NormRule::BboxSize => (bbox.w * bbox.h).sqrt(),
        NormRule::InterOcular { left, right } => {
            let (l, r) = (gt.get(left), gt.get(right));
            let (l, r) = l.zip(r).ok_or_else(|| Error::dim("inter-ocular index beyond landmark count"))?;
            (l[0] - r[0]).hypot(l[1] - r[1])
        }
    };
    if !(d > 0.0) {
        return Err(Error::ZeroNormalizer(format!("protocol {} gives normalizer {d}", protocol.id)));
    }
    Ok(d)
}

/// `100 · mean_j ‖p_j − g_j‖ / d`.
pub fn nme_with(pred: &[[f64; 2]], gt: &[[f64; 2]], d: f64) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::dim(format!("{} predicted vs {} ground-truth landmarks", pred.len(), gt.len())));
    }
    if !(d > 0.0) {
        return Err(Error::ZeroNormalizer(format!("normalizer {d}")));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1])).sum();
    Ok(100.0 * sum / (gt.len() as f64 * d))
}

pub fn nme(pred: &[[f64; 2]], gt: &[[f64; 2]], protocol: &ProtocolSpec, bbox: &BBox) -> Result<f64> {
    nme_with(pred, gt, normalizer(gt, protocol, bbox)?)
}

/// Percentage of samples whose NME exceeds `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64> {
    if nmes.is_empty() {
        return Err(Error::UndefinedRate("failure rate of an empty set".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::param(format!("failure threshold must be positive, got {threshold}")));
    }
    Ok(100.0 * nmes.iter().filter(|&&e| e > threshold).count() as f64 / nmes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainNme {
    pub domain: usize,
    pub samples: usize,
    pub nme: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub samples: usize,
    /// Mean NME, percent.
    pub nme: f64,
    pub failure_rate: f64,
    pub failure_threshold: f64,
    pub per_domain: Vec<DomainNme>,
    pub per_sample: Vec<f64>,
    /// Set when every sample was scored with its best brute-force branch,
    /// which uses the ground truth to choose.
    pub oracle_assisted: bool,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Aggregates per-sample NMEs with their optional domain labels.
    pub fn from_samples(
        protocol: &str,
        per_sample: Vec<f64>,
        domains: &[Option<usize>],
        threshold: f64,
        oracle_assisted: bool,
    ) -> Result<Self> {
        let failure = failure_rate(&per_sample, threshold)?;
        let n = per_sample.len();
        let nme = per_sample.iter().sum::<f64>() / n as f64;
        let count = domains.iter().flatten().max().map_or(0, |d| d + 1);
        let mut sums = vec![(0usize, 0.0); count];
        for (e, d) in per_sample.iter().zip(domains) {
            if let Some(d) = d {
                sums[*d].0 += 1;
                sums[*d].1 += e;
            }
        }
        let per_domain = sums
            .into_iter()
            .enumerate()
            .filter(|(_, (c, _))| *c > 0)
            .map(|(domain, (samples, sum))| DomainNme { domain, samples, nme: sum / samples as f64 })
            .collect();
        Ok(EvalReport {
            protocol: protocol.to_string(),
            samples: n,
            nme,
            failure_rate: failure,
            failure_threshold: threshold,
            per_domain,
            per_sample,
            oracle_assisted,
            config: serde_json::Value::Null,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Temperature used by separable layers.
    pub tau: f64,
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { tau: 1.0, threshold: DEFAULT_FAILURE_THRESHOLD, batch_size: 16 }
    }
}

/// Eval-mode predictions in source-image pixels, one landmark list per
/// sample.
pub fn predict(
    net: &mut dyn Regressor,
    dataset: &Dataset,
    opts: &EvalOptions,
    forced_branch: Option<usize>,
) -> Result<Vec<Vec<[f64; 2]>>> {
    let l = dataset.protocol.landmarks;
    if net.output_len() != 2 * l {
        return Err(Error::config(format!(
            "network predicts {} values, protocol {} has {l} landmarks",
            net.output_len(),
            dataset.protocol.id
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(format!("evaluation set for {}", dataset.protocol.id)));
    }
    let size = net.input_size();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.samples.chunks(opts.batch_size.max(1)) {
        let crops = chunk.iter().map(|s| crop_resize(s, size)).collect::<Result<Vec<Crop>>>()?;
        let images = stack_images(&crops)?;
        let domains = chunk.iter().map(|s| s.domain).collect::<Option<Vec<_>>>();
        let ctx = ForwardCtx::eval(opts.tau).with_domains(domains).with_forced_branch(forced_branch);
        let y = net.forward(&images, &ctx)?;
        for (row, crop) in y.data().chunks(2 * l).zip(&crops) {
            let inv = crop.transform.inverse()?;
            out.push(row.chunks(2).map(|p| inv.apply([to_pixels(p[0], size), to_pixels(p[1], size)])).collect());
        }
    }
    Ok(out)
}

/// Stacks crops into an `N×3×S×S` tensor.
pub fn stack_images(crops: &[Crop]) -> Result<Tensor> {
    let s = crops.first().map(|c| c.size).ok_or_else(|| Error::EmptyDataset("empty batch".into()))?;
    let mut data = Vec::with_capacity(crops.len() * 3 * s * s);
    for c in crops {
        data.extend_from_slice(&c.image);
    }
    Tensor::new(vec![crops.len(), 3, s, s], data)
}

fn per_sample_nme(dataset: &Dataset, preds: &[Vec<[f64; 2]>]) -> Result<Vec<f64>> {
    dataset.samples.iter().zip(preds).map(|(s, p)| nme(p, &s.landmarks, &dataset.protocol, &s.bbox)).collect()
}

/// Scores `net` on `dataset` without augmentation.
pub fn evaluate(net: &mut dyn Regressor, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let preds = predict(net, dataset, opts, None)?;
    let domains: Vec<_> = dataset.samples.iter().map(|s| s.domain).collect();
    EvalReport::from_samples(&dataset.protocol.id, per_sample_nme(dataset, &preds)?, &domains, opts.threshold, false)
}

/// Per-sample NMEs with every brute-force layer forced to branch `k`.
pub fn evaluate_branch(net: &mut dyn Regressor, dataset: &Dataset, opts: &EvalOptions, k: usize) -> Result<EvalReport> {
    let preds = predict(net, dataset, opts, Some(k))?;
    let domains: Vec<_> = dataset.samples.iter().map(|s| s.domain).collect();
    EvalReport::from_samples(&dataset.protocol.id, per_sample_nme(dataset, &preds)?, &domains, opts.threshold, false)
}

/// Runs each sample through every brute-force branch and keeps its lowest
/// NME. Without brute-force layers (K = 1) this is [`evaluate`].
pub fn bruteforce_best_of_k(net: &mut dyn Regressor, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let k = match net.brute_force_branches() {
        None | Some(1) => return evaluate(net, dataset, opts),
        Some(k) => k,
    };
    let mut best = vec![f64::INFINITY; dataset.len()];
    for branch in 0..k {
        let report = evaluate_branch(net, dataset, opts, branch)?;
        for (b, e) in best.iter_mut().zip(report.per_sample) {
            *b = b.min(e);
        }
    }
    let domains: Vec<_> = dataset.samples.iter().map(|s| s.domain).collect();
    EvalReport::from_samples(&dataset.protocol.id, best, &domains, opts.threshold, true)
}

use super::schedule::{cosine_lr, tau_schedule, ScheduleConfig};
use super::sgd::{GroupLr, OptimizerConfig, Sgd};
use crate::data::{augment, crop_resize, AugmentConfig, BBox, Crop, Dataset, ProportionalSampler};
use crate::error::{Error, Result};
use crate::eval::{nme, stack_images};
use crate::model::{to_raw, MultiHeadNet, Regressor};
use crate::norm::ForwardCtx;
use crate::rng::{self, label};
use crate::tensor::{ops, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    /// Backbone learning rate as a fraction of the head's during
    /// fine-tuning.
    pub backbone_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            schedule: ScheduleConfig::desk(),
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            backbone_lr_scale: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2 for batch statistics"));
        }
        if !(self.backbone_lr_scale >= 0.0 && self.backbone_lr_scale.is_finite()) {
            return Err(Error::config("backbone_lr_scale must be finite and nonnegative"));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.momentum) || !(o.weight_decay >= 0.0) {
            return Err(Error::config("momentum must lie in [0, 1) and weight_decay be nonnegative"));
        }
        self.schedule.validate()?;
        self.augment.validate()
    }
}

/// A thread pool for batch preparation. Each sample's augmentation stream
/// is derived from its position, so results do not depend on the thread
/// count.
pub struct Workers {
    pool: rayon::ThreadPool,
}

impl Workers {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        Ok(Workers { pool })
    }

    /// Thread count from `SEPBN_THREADS`, default 1.
    pub fn from_env() -> Result<Self> {
        let threads = match std::env::var("SEPBN_THREADS") {
            Ok(v) => v.trim().parse().map_err(|_| Error::config(format!("SEPBN_THREADS={v:?} is not a count")))?,
            Err(_) => 1,
        };
        Self::new(threads)
    }
}

/// Network inputs and regression targets for one batch.
pub struct Batch {
    pub images: Tensor,
    /// Targets in network output units.
    pub targets: Tensor,
    pub domains: Option<Vec<usize>>,
    pub crops: Vec<Crop>,
}

/// Crops (augmented when `augment` is set) and stacks `indices` of
/// `data`. `stream` identifies the batch for augmentation seeding.
pub fn prepare_batch(
    data: &Dataset,
    indices: &[usize],
    size: usize,
    augment_with: Option<(&AugmentConfig, u64, [u64; 3])>,
    workers: &Workers,
) -> Result<Batch> {
    let crops: Vec<Crop> = workers.pool.install(|| {
        indices
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                let s = &data.samples[i];
                match augment_with {
                    Some((cfg, seed, [stage, epoch, step])) => {
                        let path = [label::AUGMENT, cfg.seed, stage, epoch, step, pos as u64];
                        augment(s, cfg, &data.protocol.flip_perm, size, &mut rng::stream(seed, &path))
                    }
                    None => crop_resize(s, size),
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let images = stack_images(&crops)?;
    let targets: Vec<f64> =
        crops.iter().flat_map(|c| c.landmarks.iter().flat_map(|p| [to_raw(p[0], size), to_raw(p[1], size)])).collect();
    let targets = Tensor::new(vec![crops.len(), 2 * data.protocol.landmarks], targets)?;
    let domains = crops.iter().map(|c| c.domain).collect::<Option<Vec<_>>>();
    Ok(Batch { images, targets, domains, crops })
}

/// Mean training loss and NME of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub tau: f64,
    pub loss: f64,
    /// NME (percent) of the training predictions in crop coordinates.
    pub nme: f64,
    /// Optimizer steps taken per dataset (one entry for single-dataset
    /// training).
    pub steps: Vec<usize>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{:.16e},{:.16e},{:.16e},{:.16e}", self.epoch, self.lr, self.tau, self.loss, self.nme)
    }
}

/// Forward, L1 loss, backward and SGD step on one batch. Returns the loss
/// and the per-sample crop-space NMEs.
fn step(
    net: &mut dyn Regressor,
    data: &Dataset,
    batch: &Batch,
    ctx: &ForwardCtx,
    opt: &mut Sgd,
    lr: GroupLr,
) -> Result<(f64, Vec<f64>)> {
    net.zero_grad();
    let y = net.forward(&batch.images, ctx)?;
    let (loss, grad) = ops::l1_loss(&y, &batch.targets)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss became {loss}")));
    }
    net.backward(&grad)?;
    opt.step(net.params_mut(), lr)?;

    let size = net.input_size();
    let crop_box = BBox { x: 0.0, y: 0.0, w: size as f64, h: size as f64 };
    let mut nmes = Vec::with_capacity(batch.crops.len());
    for (row, crop) in y.data().chunks(2 * data.protocol.landmarks).zip(&batch.crops) {
        let pred: Vec<[f64; 2]> =
            row.chunks(2).map(|p| [crate::model::to_pixels(p[0], size), crate::model::to_pixels(p[1], size)]).collect();
        nmes.push(nme(&pred, &crop.landmarks, &data.protocol, &crop_box)?);
    }
    Ok((loss, nmes))
}

fn check_protocol(net: &dyn Regressor, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("training set for {}", data.protocol.id)));
    }
    if net.output_len() != 2 * data.protocol.landmarks {
        return Err(Error::config(format!(
            "network predicts {} values, protocol {} has {} landmarks",
            net.output_len(),
            data.protocol.id,
            data.protocol.landmarks
        )));
    }
    Ok(())
}

/// One shuffled pass over `data`.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    net: &mut dyn Regressor,
    data: &Dataset,
    opt: &mut Sgd,
    cfg: &TrainConfig,
    epoch: usize,
    seed: u64,
    backbone_scale: f64,
    workers: &Workers,
) -> Result<EpochMetrics> {
    check_protocol(net, data)?;
    let lr = cosine_lr(epoch, &cfg.schedule);
    let tau = tau_schedule(epoch, &cfg.schedule);
    let group_lr = GroupLr { backbone: lr * backbone_scale, head: lr };
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[label::EPOCH, 0, epoch as u64]));

    let (mut loss_sum, mut nmes, mut steps) = (0.0, Vec::with_capacity(data.len()), 0);
    for (s, idx) in order.chunks(cfg.batch_size).enumerate() {
        let batch = prepare_batch(data, idx, net.input_size(), Some((&cfg.augment, seed, [0, epoch as u64, s as u64])), workers)?;
        let ctx = ForwardCtx::train(tau).with_domains(batch.domains.clone());
        let (loss, e) = step(net, data, &batch, &ctx, opt, group_lr)
            .map_err(|err| annotate(err, epoch, s))?;
        loss_sum += loss * idx.len() as f64;
        nmes.extend(e);
        steps += 1;
    }
    Ok(EpochMetrics {
        epoch,
        lr,
        tau,
        loss: loss_sum / data.len() as f64,
        nme: nmes.iter().sum::<f64>() / nmes.len() as f64,
        steps: vec![steps],
    })
}

fn annotate(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}

/// Trains epochs `start..schedule.total_epochs`, calling `on_epoch` after
/// each one (for logging and checkpoints).
#[allow(clippy::too_many_arguments)]
pub fn fit(
    net: &mut dyn Regressor,
    data: &Dataset,
    opt: &mut Sgd,
    cfg: &TrainConfig,
    seed: u64,
    start: usize,
    workers: &Workers,
    mut on_epoch: impl FnMut(&dyn Regressor, &Sgd, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let mut all = Vec::new();
    for epoch in start..cfg.schedule.total_epochs {
        let m = train_epoch(net, data, opt, cfg, epoch, seed, 1.0, workers)?;
        on_epoch(net, opt, &m)?;
        all.push(m);
    }
    Ok(all)
}

/// One stage-1 epoch: `ceil(Σ sizes / batch)` steps, each on a batch from a
/// single dataset chosen with probability proportional to its size and
/// routed through that dataset's head.
pub fn cnt_epoch(
    net: &mut MultiHeadNet,
    datasets: &[&Dataset],
    opt: &mut Sgd,
    cfg: &TrainConfig,
    epoch: usize,
    seed: u64,
    workers: &Workers,
) -> Result<EpochMetrics> {
    for d in datasets {
        let head = net.select(&d.protocol.id).map_err(|_| {
            Error::config(format!("dataset with protocol {} has no registered head", d.protocol.id))
        })?;
        check_protocol(&head, d)?;
    }
    let lr = cosine_lr(epoch, &cfg.schedule);
    let tau = tau_schedule(epoch, &cfg.schedule);
    let sizes: Vec<usize> = datasets.iter().map(|d| d.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut sampler = ProportionalSampler::new(&sizes)?;
    let mut r = rng::stream(seed, &[label::SAMPLER, epoch as u64]);

    let (mut loss_sum, mut seen, mut nmes) = (0.0, 0usize, Vec::new());
    let mut steps = vec![0; datasets.len()];
    for s in 0..total.div_ceil(cfg.batch_size) {
        let (ds, idx) = sampler.next_batch(cfg.batch_size, &mut r);
        let data = datasets[ds];
        let mut head = net.select(&data.protocol.id)?;
        let batch = prepare_batch(data, &idx, head.input_size(), Some((&cfg.augment, seed, [1, epoch as u64, s as u64])), workers)?;
        let ctx = ForwardCtx::train(tau).with_domains(batch.domains.clone());
        let (loss, e) = step(&mut head, data, &batch, &ctx, opt, GroupLr::uniform(lr)).map_err(|err| annotate(err, epoch, s))?;
        loss_sum += loss * idx.len() as f64;
        seen += idx.len();
        nmes.extend(e);
        steps[ds] += 1;
    }
    Ok(EpochMetrics {
        epoch,
        lr,
        tau,
        loss: loss_sum / seen as f64,
        nme: nmes.iter().sum::<f64>() / nmes.len() as f64,
        steps,
    })
}

/// Stage 1: joint training of all heads, epochs `start..total`.
#[allow(clippy::too_many_arguments)]
pub fn cnt_stage1(
    net: &mut MultiHeadNet,
    datasets: &[&Dataset],
    opt: &mut Sgd,
    cfg: &TrainConfig,
    seed: u64,
    start: usize,
    workers: &Workers,
    mut on_epoch: impl FnMut(&MultiHeadNet, &Sgd, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let mut all = Vec::new();
    for epoch in start..cfg.schedule.total_epochs {
        let m = cnt_epoch(net, datasets, opt, cfg, epoch, seed, workers)?;
        on_epoch(net, opt, &m)?;
        all.push(m);
    }
    Ok(all)
}

/// Stage 2: drops every head but `target`'s and fine-tunes with the
/// backbone learning rate scaled by `cfg.backbone_lr_scale`.
#[allow(clippy::too_many_arguments)]
pub fn cnt_stage2_finetune(
    net: &mut MultiHeadNet,
    target: &Dataset,
    opt: &mut Sgd,
    cfg: &TrainConfig,
    seed: u64,
    start: usize,
    workers: &Workers,
    mut on_epoch: impl FnMut(&MultiHeadNet, &Sgd, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let id = target.protocol.id.clone();
    net.retain_head(&id).map_err(|_| Error::config(format!("no head registered for fine-tuning target {id}")))?;
    let mut all = Vec::new();
    for epoch in start..cfg.schedule.total_epochs {
        let m = {
            let mut head = net.select(&id)?;
            train_epoch(&mut head, target, opt, cfg, epoch, seed, cfg.backbone_lr_scale, workers)?
        };
        on_epoch(net, opt, &m)?;
        all.push(m);
    }
    Ok(all)
}

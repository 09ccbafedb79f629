use crate::config::RunConfig;
use sepbn_core::data::{load_dataset, synth_generate, Dataset, MANIFEST_FILE};
use sepbn_core::eval::{bruteforce_best_of_k, emit_report, evaluate, EvalReport, ReportFormat};
use sepbn_core::model::{
    network_grad_check, perturb_zero_weights, HeadSpec, ModelConfig, MultiHeadConfig, NormKind, VanillaConfig,
};
use sepbn_core::norm::SimilarityReport;
use sepbn_core::tensor::GradCheckReport;
use sepbn_core::train::{
    cnt_stage1, cnt_stage2_finetune, fit, load_checkpoint, save_checkpoint, tau_schedule, Checkpoint, EpochMetrics,
    Sgd, Workers, METRICS_HEADER,
};
use sepbn_core::{rng, Error, ForwardCtx, MultiHeadNet, Network, Regressor, Result, Tensor, VanillaCnn};
use rand::Rng;
use serde::Serialize;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const DIVERGED_FILE: &str = "diverged.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_FILE: &str = "run.json";

/// Accepts a dataset directory or its manifest.
pub fn open_dataset(path: &Path) -> Result<Dataset> {
    if path.is_dir() {
        load_dataset(&path.join(MANIFEST_FILE))
    } else {
        load_dataset(path)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct RunEcho<'a> {
    command: &'a str,
    version: &'a str,
    threads: usize,
    inputs: serde_json::Value,
    outputs: serde_json::Value,
    seed: u64,
    config: &'a RunConfig,
}

fn write_run(path: &Path, command: &str, cfg: &RunConfig, inputs: serde_json::Value, outputs: serde_json::Value) -> Result<()> {
    let echo = RunEcho {
        command,
        version: env!("CARGO_PKG_VERSION"),
        threads: threads(),
        inputs,
        outputs,
        seed: cfg.seed,
        config: cfg,
    };
    std::fs::write(path, serde_json::to_string_pretty(&echo)? + "\n")?;
    Ok(())
}

fn threads() -> usize {
    std::env::var("SEPBN_THREADS").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(1)
}

/// Sidecar run echo for commands whose only output is a report file.
pub fn report_run_path(report: &Path) -> PathBuf {
    report.with_extension("run.json")
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    create_dir(out)?;
    write_run(&out.join(RUN_FILE), "gen-data", cfg, json!({}), json!({ "dataset": out }))?;
    synth_generate(&cfg.synth, out)
}

struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{METRICS_HEADER}")?;
        Ok(MetricsLog { file })
    }

    fn push(&mut self, m: &EpochMetrics) -> Result<()> {
        writeln!(self.file, "{}", m.csv_row())?;
        self.file.flush()?;
        println!("epoch {:>4}  lr {:.3e}  tau {:>6.3}  loss {:.6}  nme {:.4}", m.epoch, m.lr, m.tau, m.loss, m.nme);
        Ok(())
    }
}

fn checkpoint_of(network: Network, opt: &Sgd, epoch: usize, cfg: &RunConfig, stage: &str) -> Checkpoint {
    Checkpoint {
        network,
        optimizer: opt.clone(),
        epoch,
        seed: cfg.seed,
        train: cfg.train.clone(),
        stage: stage.into(),
    }
}

/// Saves the last consistent state next to the run before reporting a
/// divergence.
fn dump_on_divergence(err: Error, out: &Path, ck: impl FnOnce() -> Checkpoint) -> Error {
    if let Error::Divergence(_) = err {
        if let Err(e) = save_checkpoint(&ck(), &out.join(DIVERGED_FILE)) {
            eprintln!("could not write divergence dump: {e}");
        }
    }
    err
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(VanillaCnn, Vec<EpochMetrics>)> {
    let ModelConfig::Vanilla(model) = &cfg.model else {
        return Err(Error::Config("train needs a vanilla model; use cnt-train for multi_head".into()));
    };
    let dataset = open_dataset(data)?;
    check_landmarks(model, &dataset)?;
    create_dir(out)?;
    write_run(&out.join(RUN_FILE), "train", cfg, json!({ "data": data }), json!({ "checkpoint": out.join(CHECKPOINT_FILE), "metrics": out.join(METRICS_FILE) }))?;

    let workers = Workers::from_env()?;
    let mut net = VanillaCnn::new(model.clone(), cfg.seed)?;
    let mut opt = Sgd::new(cfg.train.optimizer.clone());
    let mut log = MetricsLog::create(&out.join(METRICS_FILE))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let result = fit(&mut net, &dataset, &mut opt, &cfg.train, cfg.seed, 0, &workers, |_, _, m| log.push(m));
    let metrics = result.map_err(|e| {
        dump_on_divergence(e, out, || checkpoint_of(Network::Vanilla(net.clone()), &opt, 0, cfg, "train"))
    })?;
    let epochs = metrics.len();
    let ck = checkpoint_of(Network::Vanilla(net), &opt, epochs, cfg, "train");
    save_checkpoint(&ck, &ckpt_path)?;
    let Network::Vanilla(net) = ck.network else { unreachable!() };
    Ok((net, metrics))
}

fn check_landmarks(model: &VanillaConfig, dataset: &Dataset) -> Result<()> {
    if model.landmarks != dataset.protocol.landmarks {
        return Err(Error::Config(format!(
            "model regresses {} landmarks, dataset protocol {} has {}",
            model.landmarks, dataset.protocol.id, dataset.protocol.landmarks
        )));
    }
    Ok(())
}

/// The multi-head layout for `datasets`: the configured heads, or one head
/// per dataset protocol when none are listed.
pub fn multihead_config(cfg: &RunConfig, datasets: &[Dataset]) -> Result<MultiHeadConfig> {
    let ModelConfig::MultiHead(m) = &cfg.model else {
        return Err(Error::Config("cnt-train needs a multi_head model".into()));
    };
    let mut m = m.clone();
    if m.heads.is_empty() {
        m.heads = datasets
            .iter()
            .map(|d| HeadSpec { id: d.protocol.id.clone(), landmarks: d.protocol.landmarks })
            .collect();
    }
    Ok(m)
}

pub fn cmd_cnt_train(cfg: &RunConfig, data: &[PathBuf], out: &Path) -> Result<(MultiHeadNet, Vec<EpochMetrics>)> {
    let datasets = data.iter().map(|p| open_dataset(p)).collect::<Result<Vec<_>>>()?;
    let model = multihead_config(cfg, &datasets)?;
    create_dir(out)?;
    let mut resolved = cfg.clone();
    resolved.model = ModelConfig::MultiHead(model.clone());
    write_run(&out.join(RUN_FILE), "cnt-train", &resolved, json!({ "data": data }), json!({ "checkpoint": out.join(CHECKPOINT_FILE), "metrics": out.join(METRICS_FILE) }))?;

    let workers = Workers::from_env()?;
    let mut net = MultiHeadNet::new(model, cfg.seed)?;
    let mut opt = Sgd::new(cfg.train.optimizer.clone());
    let mut log = MetricsLog::create(&out.join(METRICS_FILE))?;
    let refs: Vec<&Dataset> = datasets.iter().collect();
    let result = cnt_stage1(&mut net, &refs, &mut opt, &cfg.train, cfg.seed, 0, &workers, |_, _, m| log.push(m));
    let metrics = result.map_err(|e| {
        dump_on_divergence(e, out, || checkpoint_of(Network::MultiHead(net.clone()), &opt, 0, &resolved, "stage1"))
    })?;
    let ck = checkpoint_of(Network::MultiHead(net), &opt, metrics.len(), &resolved, "stage1");
    save_checkpoint(&ck, &out.join(CHECKPOINT_FILE))?;
    let Network::MultiHead(net) = ck.network else { unreachable!() };
    Ok((net, metrics))
}

pub fn cmd_finetune(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<(MultiHeadNet, Vec<EpochMetrics>)> {
    let ck = load_checkpoint(checkpoint)?;
    let Network::MultiHead(mut net) = ck.network else {
        return Err(Error::Config("finetune needs a multi-head (cnt-train) checkpoint".into()));
    };
    let dataset = open_dataset(data)?;
    create_dir(out)?;
    let mut resolved = cfg.clone();
    resolved.model = ModelConfig::MultiHead(net.config.clone());
    write_run(&out.join(RUN_FILE), "finetune", &resolved, json!({ "checkpoint": checkpoint, "data": data }), json!({ "checkpoint": out.join(CHECKPOINT_FILE), "metrics": out.join(METRICS_FILE) }))?;

    let workers = Workers::from_env()?;
    let mut opt = Sgd::new(cfg.train.optimizer.clone());
    let mut log = MetricsLog::create(&out.join(METRICS_FILE))?;
    let result = cnt_stage2_finetune(&mut net, &dataset, &mut opt, &cfg.train, cfg.seed, 0, &workers, |_, _, m| log.push(m));
    let metrics = result.map_err(|e| {
        dump_on_divergence(e, out, || checkpoint_of(Network::MultiHead(net.clone()), &opt, 0, &resolved, "finetune"))
    })?;
    let ck = checkpoint_of(Network::MultiHead(net), &opt, metrics.len(), &resolved, "finetune");
    save_checkpoint(&ck, &out.join(CHECKPOINT_FILE))?;
    let Network::MultiHead(net) = ck.network else { unreachable!() };
    Ok((net, metrics))
}

/// Temperature the checkpoint was last trained with.
pub fn final_tau(ck: &Checkpoint) -> f64 {
    tau_schedule(ck.epoch.saturating_sub(1), &ck.train.schedule)
}

pub fn evaluate_checkpoint(ck: &mut Checkpoint, dataset: &Dataset, cfg: &RunConfig, best_of_k: bool) -> Result<EvalReport> {
    let opts = cfg.eval.options(final_tau(ck));
    let run = |net: &mut dyn Regressor| {
        if best_of_k {
            bruteforce_best_of_k(net, dataset, &opts)
        } else {
            evaluate(net, dataset, &opts)
        }
    };
    match &mut ck.network {
        Network::Vanilla(net) => run(net),
        Network::MultiHead(net) => {
            let mut head = net.select(&dataset.protocol.id).map_err(|_| {
                Error::Config(format!("checkpoint has no head for protocol {}", dataset.protocol.id))
            })?;
            run(&mut head)
        }
    }
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, report: &Path, best_of_k: bool, threshold: Option<f64>) -> Result<EvalReport> {
    let mut ck = load_checkpoint(checkpoint)?;
    let dataset = open_dataset(data)?;
    let mut cfg = RunConfig { seed: ck.seed, model: ck.network.config(), train: ck.train.clone(), ..RunConfig::default() };
    if let Some(t) = threshold {
        cfg.eval.failure_threshold = t;
    }
    cfg.validate()?;
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let inputs = json!({ "checkpoint": checkpoint, "data": data, "best_of_k": best_of_k });
    write_run(&report_run_path(report), "eval", &cfg, inputs.clone(), json!({ "report": report }))?;
    let mut r = evaluate_checkpoint(&mut ck, &dataset, &cfg, best_of_k)?;
    r.config = json!({ "inputs": inputs, "tau": final_tau(&ck), "eval": cfg.eval, "model": cfg.model });
    emit_report(&r, report, ReportFormat::from_path(report))?;
    Ok(r)
}

#[derive(Debug, Serialize)]
pub struct SimilaritySummary {
    pub modules: SimilarityReport,
    pub mean_tracking: Option<f64>,
    pub mean_mapping: Option<f64>,
}

pub fn cmd_analyze_params(checkpoint: &Path, report: &Path) -> Result<SimilaritySummary> {
    let ck = load_checkpoint(checkpoint)?;
    let table = SimilarityReport::from_layers(ck.network.norm_layers())?;
    if table.modules.is_empty() {
        return Err(Error::Config("checkpoint has no separable normalization layers to analyze".into()));
    }
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let cfg = RunConfig { seed: ck.seed, model: ck.network.config(), train: ck.train.clone(), ..RunConfig::default() };
    write_run(&report_run_path(report), "analyze-params", &cfg, json!({ "checkpoint": checkpoint }), json!({ "report": report }))?;
    let summary = SimilaritySummary { mean_tracking: table.mean_tracking(), mean_mapping: table.mean_mapping(), modules: table };
    match ReportFormat::from_path(report) {
        ReportFormat::Csv => std::fs::write(report, summary.modules.to_csv())?,
        ReportFormat::Json => std::fs::write(report, serde_json::to_string_pretty(&summary)? + "\n")?,
    }
    Ok(summary)
}

#[derive(Debug)]
pub struct VariantCheck {
    pub variant: Option<NormKind>,
    pub report: GradCheckReport,
    pub seconds: f64,
}

/// Whole-network gradient check of the configured Vanilla model under each
/// configured normalization variant. Prints one line per layer.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Vec<VariantCheck>> {
    let ModelConfig::Vanilla(base) = &cfg.model else {
        return Err(Error::Config("gradcheck runs on a vanilla model".into()));
    };
    let g = &cfg.gradcheck;
    let variants: Vec<Option<NormKind>> =
        if g.variants.is_empty() { vec![None] } else { g.variants.iter().copied().map(Some).collect() };
    let mut out = Vec::new();
    for (i, variant) in variants.into_iter().enumerate() {
        let start = std::time::Instant::now();
        let mut model = base.clone();
        if let Some(kind) = variant {
            model.backbone.norm_mask = vec![kind; model.backbone.stages()];
        }
        model.validate()?;
        let mut net = VanillaCnn::new(model.clone(), cfg.seed.wrapping_add(i as u64))?;
        perturb_zero_weights(net.params_mut(), g.perturb, cfg.seed);
        let s = model.backbone.input_size;
        let mut r = rng::stream(cfg.seed, &[0x6c, i as u64]);
        let images: Vec<f64> = (0..g.batch_size * 3 * s * s).map(|_| r.random_range(0.0..1.0)).collect();
        let images = Tensor::new(vec![g.batch_size, 3, s, s], images)?;
        let k = model.backbone.sepbn.k;
        let domains = (0..g.batch_size).map(|_| r.random_range(0..k)).collect();
        let ctx = ForwardCtx::train(g.tau).with_domains(Some(domains));
        let report = network_grad_check(&mut net, &images, &ctx, &g.options(cfg.seed))?;
        let name = variant.map_or("configured".to_string(), |v| format!("{v:?}"));
        for l in &report.layers {
            println!(
                "{name:<10} {:<24} checked {:>4}  kinks {:>3}  max_rel_err {:.3e}",
                l.layer, l.checked, l.kinks, l.max_rel_err
            );
        }
        let seconds = start.elapsed().as_secs_f64();
        println!("{name:<10} max_rel_err {:.3e}  {}  ({seconds:.1} s)", report.max_rel_err(), if report.passed() { "ok" } else { "FAIL" });
        out.push(VariantCheck { variant, report, seconds });
    }
    if let Some(bad) = out.iter().find(|v| !v.report.passed()) {
        bad.report.clone().into_result()?;
    }
    Ok(out)
}

use sepbn_core::data::SynthConfig;
use sepbn_core::eval::{EvalOptions, DEFAULT_FAILURE_THRESHOLD};
use sepbn_core::model::{ModelConfig, NormKind, VanillaConfig};
use sepbn_core::tensor::GradCheckOptions;
use sepbn_core::train::TrainConfig;
use sepbn_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Everything a command needs besides its file arguments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalSettings,
    pub gradcheck: GradCheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::Vanilla(VanillaConfig::desk(5, NormKind::Bn)),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalSettings::default(),
            gradcheck: GradCheckSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Failure threshold, percent NME.
    pub failure_threshold: f64,
    pub batch_size: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { failure_threshold: DEFAULT_FAILURE_THRESHOLD, batch_size: 16 }
    }
}

impl EvalSettings {
    pub fn options(&self, tau: f64) -> EvalOptions {
        EvalOptions { tau, threshold: self.failure_threshold, batch_size: self.batch_size }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSettings {
    /// Each variant replaces every stage's normalization of the configured
    /// model; empty checks the model as configured.
    pub variants: Vec<NormKind>,
    pub batch_size: usize,
    pub tau: f64,
    pub step: f64,
    pub tolerance: f64,
    pub max_elements_per_layer: usize,
    pub floor: f64,
    /// Zero-initialized weights are redrawn from `U(±perturb)` first.
    pub perturb: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        let o = GradCheckOptions::default();
        GradCheckSettings {
            variants: vec![NormKind::Bn, NormKind::Simple, NormKind::SepBn],
            batch_size: 2,
            tau: 1.0,
            step: o.step,
            tolerance: o.tolerance,
            max_elements_per_layer: o.max_elements_per_layer,
            floor: o.floor,
            perturb: 0.3,
        }
    }
}

impl GradCheckSettings {
    pub fn options(&self, seed: u64) -> GradCheckOptions {
        GradCheckOptions {
            step: self.step,
            tolerance: self.tolerance,
            max_elements_per_layer: self.max_elements_per_layer,
            floor: self.floor,
            seed,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelConfig::Vanilla(c) => c.validate()?,
            ModelConfig::MultiHead(c) => c.validate()?,
        }
        self.train.validate()?;
        self.synth.validate()?;
        let e = &self.eval;
        if !(e.failure_threshold > 0.0) || e.batch_size == 0 {
            return Err(Error::Config("eval needs a positive failure threshold and batch size".into()));
        }
        let g = &self.gradcheck;
        if g.batch_size < 2 || !(g.step > 0.0) || !(g.tolerance > 0.0) || g.max_elements_per_layer == 0 {
            return Err(Error::Config("gradcheck needs batch_size >= 2 and positive step, tolerance, sample size".into()));
        }
        Ok(())
    }

    /// Parses a config file, or the `config` member of a `run.json` echo,
    /// and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => {
                m.remove("config").expect("checked")
            }
            v => v,
        };
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

use crate::error::{Error, Result};
use crate::norm::SepBnParams;
use serde::{Deserialize, Serialize};

/// Normalization used by one convolution stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Bn,
    SepBn,
    BruteForce,
    Simple,
}

/// The convolution stages shared by both network kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Side of the square input crop.
    pub input_size: usize,
    /// Output channels per stage.
    pub base_channels: Vec<usize>,
    /// Normalization per stage; same length as `base_channels`.
    pub norm_mask: Vec<NormKind>,
    #[serde(default)]
    pub sepbn: SepBnParams,
    /// Uniform noise magnitude added to separable layers' initial `γ`.
    #[serde(default = "default_gamma_noise")]
    pub gamma_noise: f64,
}

fn default_gamma_noise() -> f64 {
    0.1
}

impl BackboneConfig {
    fn uniform(input_size: usize, base_channels: Vec<usize>, norm: NormKind) -> Self {
        let stages = base_channels.len();
        BackboneConfig {
            input_size,
            base_channels,
            norm_mask: vec![norm; stages],
            sepbn: SepBnParams::default(),
            gamma_noise: default_gamma_noise(),
        }
    }

    /// The six-stage, 128-pixel configuration.
    pub fn full(norm: NormKind) -> Self {
        Self::uniform(128, vec![64, 128, 256, 512, 1024, 2048], norm)
    }

    /// Four stages at 64 pixels for CPU-scale experiments.
    pub fn desk(norm: NormKind) -> Self {
        let mut cfg = Self::uniform(64, vec![8, 16, 32, 64], norm);
        cfg.sepbn.reduction = 4;
        cfg
    }

    pub fn stages(&self) -> usize {
        self.base_channels.len()
    }

    /// Spatial side of the feature map entering stage `i` (after its conv).
    pub fn stage_extent(&self, i: usize) -> usize {
        self.input_size >> i
    }

    pub fn output_extent(&self) -> usize {
        self.input_size >> self.stages()
    }

    pub fn out_channels(&self) -> usize {
        *self.base_channels.last().expect("validated non-empty")
    }

    /// Flattened feature length after the last stage.
    pub fn flat_features(&self) -> usize {
        self.out_channels() * self.output_extent() * self.output_extent()
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.stages();
        if stages == 0 {
            return Err(Error::config("backbone needs at least one stage"));
        }
        if self.norm_mask.len() != stages {
            return Err(Error::config(format!(
                "norm mask has {} entries for {stages} stages",
                self.norm_mask.len()
            )));
        }
        if self.input_size == 0 || self.input_size % (1 << stages) != 0 {
            return Err(Error::config(format!(
                "input size {} must be divisible by 2^{stages}",
                self.input_size
            )));
        }
        if self.base_channels.contains(&0) {
            return Err(Error::config("zero channel count"));
        }
        let p = &self.sepbn;
        if p.k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if !(self.gamma_noise >= 0.0) {
            return Err(Error::config("gamma_noise must be nonnegative"));
        }
        for (i, (&c, &kind)) in self.base_channels.iter().zip(&self.norm_mask).enumerate() {
            match kind {
                NormKind::Bn => {}
                NormKind::BruteForce if p.k < 2 => {
                    return Err(Error::config("brute-force SepBN needs K >= 2"));
                }
                NormKind::BruteForce => {}
                NormKind::SepBn => {
                    if p.g == 0 || c % p.g != 0 {
                        return Err(Error::config(format!("stage {i}: {c} channels not divisible by G = {}", p.g)));
                    }
                    if p.t == 0 || p.t > self.stage_extent(i) {
                        return Err(Error::config(format!(
                            "stage {i}: pooling size T = {} exceeds feature size {}",
                            p.t,
                            self.stage_extent(i)
                        )));
                    }
                }
                NormKind::Simple => {
                    if p.reduction == 0 || c % p.reduction != 0 {
                        return Err(Error::config(format!(
                            "stage {i}: {c} channels not divisible by reduction {}",
                            p.reduction
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanillaConfig {
    pub backbone: BackboneConfig,
    /// Width of the hidden regression layer.
    pub hidden: usize,
    /// Number of landmarks `L`; the output has `2L` values.
    pub landmarks: usize,
}

impl VanillaConfig {
    pub fn full(landmarks: usize, norm: NormKind) -> Self {
        VanillaConfig { backbone: BackboneConfig::full(norm), hidden: 1024, landmarks }
    }

    pub fn desk(landmarks: usize, norm: NormKind) -> Self {
        VanillaConfig { backbone: BackboneConfig::desk(norm), hidden: 128, landmarks }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.hidden == 0 || self.landmarks == 0 {
            return Err(Error::config("hidden width and landmark count must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    /// Protocol id this head regresses.
    pub id: String,
    pub landmarks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiHeadConfig {
    pub backbone: BackboneConfig,
    pub hidden: usize,
    pub heads: Vec<HeadSpec>,
}

impl MultiHeadConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if h.landmarks == 0 {
                return Err(Error::config(format!("head {} has no landmarks", h.id)));
            }
            if self.heads[..i].iter().any(|o| o.id == h.id) {
                return Err(Error::config(format!("duplicate head id {}", h.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelConfig {
    Vanilla(VanillaConfig),
    MultiHead(MultiHeadConfig),
}

//! Dataset formats, the synthetic sub-domain generator, cropping and
//! augmentation, and the proportional multi-dataset sampler.
//!
//! On disk a dataset is a directory holding binary PPM images, a CSV
//! manifest (`file,protocol,domain,bx,by,bw,bh,x1,y1,...`) and a
//! `protocols.json` listing the annotation protocols.

mod geometry;
mod manifest;
mod ppm;
mod sampler;
mod synth;

pub use geometry::{augment, crop_resize, flip_landmarks, plan_augment, render, Affine, AugmentConfig, AugmentPlan, Crop};
pub use manifest::{load_dataset, read_protocols, save_dataset, MANIFEST_FILE, PROTOCOLS_FILE};
pub use ppm::{read_ppm, write_ppm};
pub use sampler::ProportionalSampler;
pub use synth::{synth_generate, synth_samples, synth_protocol, SynthConfig, TEMPLATE_5, TEMPLATE_9};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// 8-bit interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::dim(format!("{width}x{height} RGB image cannot hold {} bytes", data.len())));
        }
        Ok(Image { width, height, data })
    }

    /// Channel `c` at integer pixel `(x, y)`, scaled to `[0, 1]`, or 0
    /// outside the raster.
    pub fn sample(&self, x: isize, y: isize, c: usize) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return 0.0;
        }
        self.data[(y as usize * self.width + x as usize) * 3 + c] as f64 / 255.0
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) || ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }
}

/// How the error of a sample is normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum NormRule {
    /// `√(w·h)` of the ground-truth box.
    BboxSize,
    /// Distance between two landmarks.
    InterOcular { left: usize, right: usize },
}

/// An annotation protocol: landmark count, mirror pairing and normalizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub id: String,
    pub landmarks: usize,
    /// `flip_perm[i]` is the landmark that index `i` becomes after a
    /// horizontal flip.
    pub flip_perm: Vec<usize>,
    pub norm_rule: NormRule,
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        let l = self.landmarks;
        if l == 0 {
            return Err(Error::config(format!("protocol {}: no landmarks", self.id)));
        }
        if self.flip_perm.len() != l {
            return Err(Error::config(format!("protocol {}: flip permutation has {} entries for L = {l}", self.id, self.flip_perm.len())));
        }
        if self.flip_perm.iter().enumerate().any(|(i, &j)| j >= l || self.flip_perm[j] != i) {
            return Err(Error::config(format!("protocol {}: flip permutation is not an involution", self.id)));
        }
        if let NormRule::InterOcular { left, right } = self.norm_rule {
            if left >= l || right >= l || left == right {
                return Err(Error::config(format!("protocol {}: bad inter-ocular indices ({left}, {right})", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSample {
    pub image: Image,
    /// Pixel coordinates, one `[x, y]` per landmark.
    pub landmarks: Vec<[f64; 2]>,
    pub bbox: BBox,
    pub domain: Option<usize>,
    pub protocol: String,
    /// Image file name relative to the dataset directory.
    pub file: String,
}

/// Samples sharing one protocol.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub protocol: ProtocolSpec,
    pub samples: Vec<LandmarkSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest domain label plus one (0 when unlabelled).
    pub fn domain_count(&self) -> usize {
        self.samples.iter().filter_map(|s| s.domain).max().map_or(0, |d| d + 1)
    }
}

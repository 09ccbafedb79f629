use super::manifest::save_dataset;
use super::{BBox, Dataset, Image, LandmarkSample, NormRule, ProtocolSpec};
use crate::error::{Error, Result};
use crate::rng::{self, label};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Face template in unit face coordinates: `(u, v, depth)`. Eyes, nose and
/// mouth corners.
pub const TEMPLATE_5: [[f64; 3]; 5] =
    [[0.30, 0.35, 0.0], [0.70, 0.35, 0.0], [0.50, 0.55, 0.18], [0.35, 0.75, 0.04], [0.65, 0.75, 0.04]];

/// [`TEMPLATE_5`] plus brows, chin and mouth centre.
pub const TEMPLATE_9: [[f64; 3]; 9] = [
    [0.30, 0.35, 0.0],
    [0.70, 0.35, 0.0],
    [0.50, 0.55, 0.18],
    [0.35, 0.75, 0.04],
    [0.65, 0.75, 0.04],
    [0.28, 0.25, 0.02],
    [0.72, 0.25, 0.02],
    [0.50, 0.92, 0.06],
    [0.50, 0.75, 0.07],
];

const FLIP_9: [usize; 9] = [1, 0, 2, 4, 3, 6, 5, 7, 8];

/// Marker colour of each template point; mirror pairs share a colour so a
/// flipped face is still a valid face.
const MARKER_RGB: [[f64; 3]; 9] = [
    [0.05, 0.15, 0.95],
    [0.05, 0.15, 0.95],
    [0.95, 0.10, 0.10],
    [0.10, 0.85, 0.15],
    [0.10, 0.85, 0.15],
    [0.80, 0.80, 0.05],
    [0.80, 0.80, 0.05],
    [0.75, 0.10, 0.80],
    [0.05, 0.85, 0.85],
];

/// The built-in protocol for `landmarks` ∈ {5, 9} template points.
pub fn synth_protocol(id: &str, landmarks: usize) -> Result<ProtocolSpec> {
    if landmarks != 5 && landmarks != 9 {
        return Err(Error::config(format!("synthetic faces carry 5 or 9 landmarks, not {landmarks}")));
    }
    let norm_rule = if landmarks == 5 { NormRule::InterOcular { left: 0, right: 1 } } else { NormRule::BboxSize };
    Ok(ProtocolSpec { id: id.to_string(), landmarks, flip_perm: FLIP_9[..landmarks].to_vec(), norm_rule })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Side of the square output images.
    pub image_size: usize,
    /// 5 or 9.
    pub landmarks: usize,
    pub protocol: String,
    /// Sub-domain probabilities.
    pub domain_weights: Vec<f64>,
    /// Mean head yaw of each sub-domain, degrees.
    pub yaw_centers: Vec<f64>,
    /// Yaw is drawn uniformly in `centre ± yaw_jitter`.
    pub yaw_jitter: f64,
    /// Additive brightness per sub-domain.
    pub brightness: Vec<f64>,
    /// Contrast multiplier per sub-domain.
    pub contrast: Vec<f64>,
    /// Per-landmark Gaussian noise, pixels.
    pub landmark_sigma: f64,
    /// In-plane rotation drawn in `±roll_deg`.
    pub roll_deg: f64,
    /// Face side as a fraction of the image side, before the random scale.
    pub face_frac: f64,
    /// Relative face scale drawn in `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Face centre offset drawn in `±shift_frac` of the image side.
    pub shift_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 300,
            image_size: 80,
            landmarks: 5,
            protocol: "synth5".into(),
            domain_weights: vec![1.0 / 3.0; 3],
            yaw_centers: vec![-40.0, 0.0, 40.0],
            yaw_jitter: 10.0,
            brightness: vec![-0.12, 0.0, 0.12],
            contrast: vec![0.8, 1.0, 1.2],
            landmark_sigma: 0.5,
            roll_deg: 10.0,
            face_frac: 0.6,
            scale_jitter: 0.1,
            shift_frac: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn domains(&self) -> usize {
        self.domain_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domains();
        if d == 0 {
            return Err(Error::config("at least one sub-domain is required"));
        }
        if self.domain_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("domain weights must be finite and nonnegative"));
        }
        let sum: f64 = self.domain_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("domain weights sum to {sum}, not 1")));
        }
        for (name, len) in [("yaw_centers", self.yaw_centers.len()), ("brightness", self.brightness.len()), ("contrast", self.contrast.len())] {
            if len != d {
                return Err(Error::config(format!("{name} has {len} entries for {d} domains")));
            }
        }
        if self.image_size < 8 {
            return Err(Error::config("image_size must be at least 8"));
        }
        let nonneg = [self.yaw_jitter, self.landmark_sigma, self.roll_deg, self.scale_jitter, self.shift_frac];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("jitter and noise magnitudes must be finite and nonnegative"));
        }
        if !(self.face_frac > 0.0 && self.face_frac <= 1.0) || self.scale_jitter >= 1.0 {
            return Err(Error::config("face_frac must lie in (0, 1] and scale_jitter below 1"));
        }
        synth_protocol(&self.protocol, self.landmarks).map(|_| ())
    }
}

fn draw_domain(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (d, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return d;
        }
    }
    // u landed in the rounding gap above the last partial sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn symmetric(rng: &mut impl Rng, m: f64) -> f64 {
    if m > 0.0 {
        rng.random_range(-m..=m)
    } else {
        0.0
    }
}

/// Generates sample `index` of the dataset.
fn generate_one(cfg: &SynthConfig, index: usize) -> LandmarkSample {
    let mut r = rng::stream(cfg.seed, &[label::SYNTH, index as u64]);
    let s = cfg.image_size as f64;
    let domain = draw_domain(&cfg.domain_weights, &mut r);
    let yaw = (cfg.yaw_centers[domain] + symmetric(&mut r, cfg.yaw_jitter)).to_radians();
    let roll = symmetric(&mut r, cfg.roll_deg).to_radians();
    let side = cfg.face_frac * s * (1.0 + symmetric(&mut r, cfg.scale_jitter));
    let cx = s / 2.0 + symmetric(&mut r, cfg.shift_frac * s);
    let cy = s / 2.0 + symmetric(&mut r, cfg.shift_frac * s);
    let noise = Normal::new(0.0, cfg.landmark_sigma).expect("validated sigma");

    let (sin_r, cos_r) = roll.sin_cos();
    let (sin_y, cos_y) = yaw.sin_cos();
    // unit face coordinates, centred → image pixels
    let place = |u: f64, v: f64| -> [f64; 2] {
        let (du, dv) = (u * side, v * side);
        [cx + cos_r * du - sin_r * dv, cy + sin_r * du + cos_r * dv]
    };
    let project = |p: &[f64; 3]| ((p[0] - 0.5) * cos_y + p[2] * sin_y, p[1] - 0.5);

    let points: Vec<[f64; 2]> = TEMPLATE_9.iter().map(|p| {
        let (u, v) = project(p);
        place(u, v)
    }).collect();
    let mut landmarks: Vec<[f64; 2]> = points[..cfg.landmarks].to_vec();
    for p in &mut landmarks {
        p[0] += noise.sample(&mut r);
        p[1] += noise.sample(&mut r);
    }

    let (bright, contrast) = (cfg.brightness[domain], cfg.contrast[domain]);
    let bg = [0.35 + 0.1 * r.random::<f64>(), 0.35 + 0.1 * r.random::<f64>(), 0.4 + 0.1 * r.random::<f64>()];
    let skin = [0.85, 0.65, 0.5];
    let (ax, ay) = (0.45 * side * cos_y.max(0.3), 0.52 * side);
    let face_c = place(0.06 * sin_y, 0.05);
    let marker_r = (side / 28.0).max(1.0);
    let ppx = cfg.image_size;
    let mut data = vec![0u8; 3 * ppx * ppx];
    for y in 0..ppx {
        for x in 0..ppx {
            let (fx, fy) = (x as f64 + 0.5 - face_c[0], y as f64 + 0.5 - face_c[1]);
            // ellipse in face-aligned axes
            let (ex, ey) = (cos_r * fx + sin_r * fy, -sin_r * fx + cos_r * fy);
            let inside = (ex / ax).powi(2) + (ey / ay).powi(2);
            let face_w = (1.5 - inside * 1.5 + 0.5).clamp(0.0, 1.0);
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = bg[c] * (1.0 - face_w) + skin[c] * face_w;
            }
            for (p, col) in points.iter().zip(&MARKER_RGB) {
                let d2 = (x as f64 + 0.5 - p[0]).powi(2) + (y as f64 + 0.5 - p[1]).powi(2);
                let w = (-d2 / (2.0 * marker_r * marker_r)).exp();
                if w > 1e-3 {
                    for c in 0..3 {
                        rgb[c] = rgb[c] * (1.0 - w) + col[c] * w;
                    }
                }
            }
            for c in 0..3 {
                let v = contrast * (rgb[c] - 0.5) + 0.5 + bright;
                data[(y * ppx + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let bbox = BBox { x: cx - side / 2.0, y: cy - side / 2.0, w: side, h: side };
    LandmarkSample {
        image: Image::new(ppx, ppx, data).expect("sized above"),
        landmarks,
        bbox,
        domain: Some(domain),
        protocol: cfg.protocol.clone(),
        file: format!("img_{index:06}.ppm"),
    }
}

/// The dataset described by `cfg`, in memory.
pub fn synth_samples(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.n_samples == 0 {
        return Err(Error::EmptyDataset("synthetic config with n_samples = 0".into()));
    }
    let protocol = synth_protocol(&cfg.protocol, cfg.landmarks)?;
    let samples = (0..cfg.n_samples).map(|i| generate_one(cfg, i)).collect();
    Ok(Dataset { protocol, samples })
}

/// Generates the dataset and writes it to `out_dir`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Dataset> {
    let dataset = synth_samples(cfg)?;
    save_dataset(out_dir, &dataset)?;
    Ok(dataset)
}

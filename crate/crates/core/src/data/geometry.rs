use super::{BBox, Image, LandmarkSample};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `x' = m0·x + m1·y + m2`, `y' = m3·x + m4·y + m5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn scale_translate(sx: f64, sy: f64, tx: f64, ty: f64) -> Self {
        Affine([sx, 0.0, tx, 0.0, sy, ty])
    }

    /// Counter-clockwise rotation by `deg` in image coordinates (y down)
    /// about `(cx, cy)`.
    pub fn rotation(deg: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Affine([c, s, cx - c * cx - s * cy, -s, c, cy + s * cx - c * cy])
    }

    /// Horizontal shear `x' = x + k·(y − cy)`.
    pub fn shear(k: f64, cy: f64) -> Self {
        Affine([1.0, k, -k * cy, 0.0, 1.0, 0.0])
    }

    /// Mirror about the vertical line `x = width / 2`.
    pub fn hflip(width: f64) -> Self {
        Affine([-1.0, 0.0, width, 0.0, 1.0, 0.0])
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Affine) -> Affine {
        let [a, b, c, d, e, f] = self.0;
        let [p, q, r, s, t, u] = next.0;
        Affine([p * a + q * d, p * b + q * e, p * c + q * f + r, s * a + t * d, s * b + t * e, s * c + t * f + u])
    }

    pub fn inverse(&self) -> Result<Affine> {
        let [a, b, c, d, e, f] = self.0;
        let det = a * e - b * d;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Geometry("singular affine map".into()));
        }
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Affine([ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)]))
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let [a, b, c, d, e, f] = self.0;
        [a * p[0] + b * p[1] + c, d * p[0] + e * p[1] + f]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Rotation drawn uniformly in `±rot_deg` degrees.
    pub rot_deg: f64,
    /// Each bbox corner moves by up to this fraction of the bbox size.
    pub bbox_jitter_frac: f64,
    pub hflip_prob: f64,
    /// Horizontal shear factor drawn uniformly in `±shear_max`.
    pub shear_max: f64,
    /// Mixed into every augmentation stream.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { rot_deg: 25.0, bbox_jitter_frac: 0.15, hflip_prob: 0.5, shear_max: 0.1, seed: 0 }
    }
}

impl AugmentConfig {
    /// No geometric change at all.
    pub fn none() -> Self {
        AugmentConfig { rot_deg: 0.0, bbox_jitter_frac: 0.0, hflip_prob: 0.0, shear_max: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [self.rot_deg, self.bbox_jitter_frac, self.shear_max];
        if mags.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("augmentation magnitudes must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::config("hflip_prob must lie in [0, 1]"));
        }
        if self.bbox_jitter_frac >= 0.5 {
            return Err(Error::config("bbox_jitter_frac must stay below 0.5 so the box cannot collapse"));
        }
        Ok(())
    }
}

/// A drawn augmentation: source-to-crop map and whether it mirrors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPlan {
    pub transform: Affine,
    pub flipped: bool,
}

/// A network-ready sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub size: usize,
    /// Channel-major `3×size×size`, values in `[0, 1]`.
    pub image: Vec<f64>,
    /// Crop pixel coordinates.
    pub landmarks: Vec<[f64; 2]>,
    pub domain: Option<usize>,
    /// Source-to-crop map.
    pub transform: Affine,
}

fn crop_map(bbox: &BBox, target: usize) -> Affine {
    let t = target as f64;
    Affine::scale_translate(t / bbox.w, t / bbox.h, -bbox.x * t / bbox.w, -bbox.y * t / bbox.h)
}

fn check_box(bbox: &BBox, image: &Image) -> Result<()> {
    bbox.validate()?;
    let overlaps =
        bbox.x < image.width as f64 && bbox.y < image.height as f64 && bbox.x + bbox.w > 0.0 && bbox.y + bbox.h > 0.0;
    if !overlaps {
        return Err(Error::Geometry(format!("bounding box {bbox:?} misses the {}x{} image", image.width, image.height)));
    }
    Ok(())
}

/// Draws jitter (corners independently), rotation, shear and flip, in that
/// order, and composes them into one map.
pub fn plan_augment(bbox: &BBox, cfg: &AugmentConfig, target: usize, rng: &mut impl Rng) -> Result<AugmentPlan> {
    let mut draw = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let (jx, jy) = (cfg.bbox_jitter_frac * bbox.w, cfg.bbox_jitter_frac * bbox.h);
    let (x0, y0) = (bbox.x + draw(jx), bbox.y + draw(jy));
    let (x1, y1) = (bbox.x + bbox.w + draw(jx), bbox.y + bbox.h + draw(jy));
    let jittered = BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
    jittered.validate()?;
    let angle = draw(cfg.rot_deg);
    let shear = draw(cfg.shear_max);
    let flipped = cfg.hflip_prob > 0.0 && rng.random::<f64>() < cfg.hflip_prob;

    let c = target as f64 / 2.0;
    let mut m = crop_map(&jittered, target).then(&Affine::rotation(angle, c, c)).then(&Affine::shear(shear, c));
    if flipped {
        m = m.then(&Affine::hflip(target as f64));
    }
    Ok(AugmentPlan { transform: m, flipped })
}

/// Mirrors landmark positions through `mirror` and relabels them with
/// `perm`.
pub fn flip_landmarks(landmarks: &[[f64; 2]], perm: &[usize], mirror: &Affine) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; landmarks.len()];
    for (i, p) in landmarks.iter().enumerate() {
        out[perm[i]] = mirror.apply(*p);
    }
    out
}

/// Resamples `sample` through `plan` bilinearly with zero padding.
pub fn render(sample: &LandmarkSample, plan: &AugmentPlan, target: usize, flip_perm: &[usize]) -> Result<Crop> {
    if target == 0 {
        return Err(Error::Geometry("crop size must be positive".into()));
    }
    let inv = plan.transform.inverse()?;
    let img = &sample.image;
    let plane = target * target;
    let mut image = vec![0.0; 3 * plane];
    for v in 0..target {
        for u in 0..target {
            let [sx, sy] = inv.apply([u as f64 + 0.5, v as f64 + 0.5]);
            let (px, py) = (sx - 0.5, sy - 0.5);
            let (fx0, fy0) = (px.floor(), py.floor());
            let (fx, fy) = (px - fx0, py - fy0);
            let (x0, y0) = (fx0 as isize, fy0 as isize);
            for c in 0..3 {
                let top = img.sample(x0, y0, c) * (1.0 - fx) + img.sample(x0 + 1, y0, c) * fx;
                let bottom = img.sample(x0, y0 + 1, c) * (1.0 - fx) + img.sample(x0 + 1, y0 + 1, c) * fx;
                image[c * plane + v * target + u] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    let moved: Vec<[f64; 2]> = sample.landmarks.iter().map(|p| plan.transform.apply(*p)).collect();
    let landmarks = if plan.flipped {
        let mut relabelled = vec![[0.0; 2]; moved.len()];
        for (i, p) in moved.iter().enumerate() {
            relabelled[flip_perm[i]] = *p;
        }
        relabelled
    } else {
        moved
    };
    Ok(Crop { size: target, image, landmarks, domain: sample.domain, transform: plan.transform })
}

/// Crop to the bounding box and resize to `target×target`.
pub fn crop_resize(sample: &LandmarkSample, target: usize) -> Result<Crop> {
    check_box(&sample.bbox, &sample.image)?;
    let plan = AugmentPlan { transform: crop_map(&sample.bbox, target), flipped: false };
    render(sample, &plan, target, &[])
}

/// Random geometric augmentation followed by resampling to `target`.
pub fn augment(
    sample: &LandmarkSample,
    cfg: &AugmentConfig,
    flip_perm: &[usize],
    target: usize,
    rng: &mut impl Rng,
) -> Result<Crop> {
    check_box(&sample.bbox, &sample.image)?;
    if flip_perm.len() != sample.landmarks.len() {
        return Err(Error::dim("flip permutation does not match the landmark count"));
    }
    let plan = plan_augment(&sample.bbox, cfg, target, rng)?;
    render(sample, &plan, target, flip_perm)
}

//! Pairwise cosine similarity of the parameter sets learned by separable
//! layers: how far the `K` branches' tracking and mapping parameters drifted
//! apart during training.

use super::NormLayer;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine similarity of vectors with different lengths"));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity("zero-norm parameter vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity over all `K·(K−1)/2` unordered pairs.
pub fn param_similarity(vectors: &[&[f64]]) -> Result<f64> {
    let k = vectors.len();
    if k < 2 {
        return Err(Error::param(format!("similarity needs at least 2 vectors, got {k}")));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += cosine_similarity(vectors[i], vectors[j])?;
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// Similarities for one normalization module. Merged variants share their
/// tracking statistics, so only brute-force modules report them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSimilarity {
    pub module: String,
    pub running_mean: Option<f64>,
    pub running_var: Option<f64>,
    pub scale: f64,
    pub shift: f64,
}

impl ModuleSimilarity {
    pub fn tracking(&self) -> Option<f64> {
        Some((self.running_mean? + self.running_var?) / 2.0)
    }

    pub fn mapping(&self) -> f64 {
        (self.scale + self.shift) / 2.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub modules: Vec<ModuleSimilarity>,
}

impl SimilarityReport {
    /// Collects similarities from every separable module; standard BN
    /// modules have a single set and are skipped.
    pub fn from_layers<'a>(layers: impl IntoIterator<Item = &'a NormLayer>) -> Result<Self> {
        let mut modules = Vec::new();
        for layer in layers {
            let entry = match layer {
                NormLayer::Bn(_) => continue,
                NormLayer::BruteForce(l) => {
                    let means: Vec<&[f64]> = l.branches.iter().map(|b| b.stats().mean.as_slice()).collect();
                    let vars: Vec<&[f64]> = l.branches.iter().map(|b| b.stats().var.as_slice()).collect();
                    let scales: Vec<&[f64]> = l.branches.iter().map(|b| b.gamma.value.data()).collect();
                    let shifts: Vec<&[f64]> = l.branches.iter().map(|b| b.beta.value.data()).collect();
                    ModuleSimilarity {
                        module: l.name.clone(),
                        running_mean: Some(param_similarity(&means)?),
                        running_var: Some(param_similarity(&vars)?),
                        scale: param_similarity(&scales)?,
                        shift: param_similarity(&shifts)?,
                    }
                }
                NormLayer::Simple(l) => merged(&l.name, l.gamma.value.data(), l.beta.value.data(), l.k())?,
                NormLayer::SepBn(l) => merged(&l.name, l.gamma.value.data(), l.beta.value.data(), l.k())?,
            };
            modules.push(entry);
        }
        Ok(SimilarityReport { modules })
    }

    pub fn mean_tracking(&self) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.modules.iter().map(|m| m.tracking()).collect();
        vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_mapping(&self) -> Option<f64> {
        if self.modules.is_empty() {
            return None;
        }
        Some(self.modules.iter().map(|m| m.mapping()).sum::<f64>() / self.modules.len() as f64)
    }

    /// `module,running_mean,running_var,scale,shift`; missing values empty.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        let mut out = String::from("module,running_mean,running_var,scale,shift\n");
        for m in &self.modules {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.module,
                fmt(m.running_mean),
                fmt(m.running_var),
                fmt(Some(m.scale)),
                fmt(Some(m.shift))
            ));
        }
        out
    }
}

fn merged(name: &str, gamma: &[f64], beta: &[f64], k: usize) -> Result<ModuleSimilarity> {
    let c = gamma.len() / k;
    let scales: Vec<&[f64]> = gamma.chunks(c).collect();
    let shifts: Vec<&[f64]> = beta.chunks(c).collect();
    Ok(ModuleSimilarity {
        module: name.to_string(),
        running_mean: None,
        running_var: None,
        scale: param_similarity(&scales)?,
        shift: param_similarity(&shifts)?,
    })
}

use crate::error::{Error, Result};
use crate::tensor::{Param, ParamGroup};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { momentum: 0.9, weight_decay: 5e-4 }
    }
}

/// Learning rate per parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupLr {
    pub backbone: f64,
    pub head: f64,
}

impl GroupLr {
    pub fn uniform(lr: f64) -> Self {
        GroupLr { backbone: lr, head: lr }
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.backbone,
            ParamGroup::Head => self.head,
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay on weights only.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub config: OptimizerConfig,
    /// Velocity per parameter name, created on first update.
    pub velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(config: OptimizerConfig) -> Self {
        Sgd { config, velocity: BTreeMap::new() }
    }

    /// `v ← μv + g + wd·w`, `w ← w − lr·v`. All gradients are checked
    /// before any parameter moves.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: GroupLr) -> Result<()> {
        for p in &params {
            if let Some(i) = p.grad().iter().position(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient in {}[{i}]", p.name)));
            }
        }
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        for p in params {
            let n = p.numel();
            let v = self.velocity.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            if v.len() != n {
                return Err(Error::dim(format!("velocity of {} has {} entries, parameter has {n}", p.name, v.len())));
            }
            let decay = if p.kind.decays() { wd } else { 0.0 };
            let rate = lr.get(p.group);
            let grad = p.value.grad().map(|g| g.to_vec());
            let w = p.value.data_mut();
            for i in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                v[i] = mu * v[i] + g + decay * w[i];
                w[i] -= rate * v[i];
            }
        }
        Ok(())
    }
}

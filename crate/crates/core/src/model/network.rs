use super::config::ModelConfig;
use super::multihead::MultiHeadNet;
use super::vanilla::VanillaCnn;
use crate::error::Result;
use crate::norm::NormLayer;
use crate::tensor::Param;

/// Either network kind, as stored in checkpoints.
#[derive(Clone, Debug)]
pub enum Network {
    Vanilla(VanillaCnn),
    MultiHead(MultiHeadNet),
}

impl Network {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::Vanilla(c) => Network::Vanilla(VanillaCnn::new(c.clone(), seed)?),
            ModelConfig::MultiHead(c) => Network::MultiHead(MultiHeadNet::restore(c.clone(), seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Network::Vanilla(n) => ModelConfig::Vanilla(n.config.clone()),
            Network::MultiHead(n) => ModelConfig::MultiHead(n.config.clone()),
        }
    }

    pub fn all_params(&self) -> Vec<&Param> {
        match self {
            Network::Vanilla(n) => {
                let mut p = n.backbone.params();
                p.extend(n.head.params());
                p
            }
            Network::MultiHead(n) => n.all_params(),
        }
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Network::Vanilla(n) => {
                let mut p = n.backbone.params_mut();
                p.extend(n.head.params_mut());
                p
            }
            Network::MultiHead(n) => n.all_params_mut(),
        }
    }

    pub fn norm_layers(&self) -> Vec<&NormLayer> {
        match self {
            Network::Vanilla(n) => n.backbone.norm_layers(),
            Network::MultiHead(n) => n.backbone.norm_layers(),
        }
    }

    pub fn norm_layers_mut(&mut self) -> Vec<&mut NormLayer> {
        match self {
            Network::Vanilla(n) => n.backbone.norm_layers_mut(),
            Network::MultiHead(n) => n.backbone.norm_layers_mut(),
        }
    }
}

use super::sgd::{OptimizerConfig, Sgd};
use super::fit::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SBNCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training bit-identically: weights, running
/// statistics, optimizer velocity and the position in the schedule.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Sgd,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub train: TrainConfig,
    /// Free-form stage tag, e.g. `"stage1"` or `"finetune"`.
    pub stage: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelConfig,
    epoch: usize,
    seed: u64,
    stage: String,
    train: TrainConfig,
    optimizer: OptimizerConfig,
    params: Vec<(String, Vec<usize>)>,
    buffers: Vec<(String, usize)>,
    velocity: Vec<(String, usize)>,
}

fn buffers(net: &Network) -> Vec<(String, Vec<f64>)> {
    net.norm_layers().iter().flat_map(|l| l.buffers()).map(|(n, b)| (n, b.to_vec())).collect()
}

fn put(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `ckpt` into the binary checkpoint format.
pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let net = &ckpt.network;
    let params = net.all_params();
    let bufs = buffers(net);
    let header = Header {
        version: CHECKPOINT_VERSION,
        model: net.config(),
        epoch: ckpt.epoch,
        seed: ckpt.seed,
        stage: ckpt.stage.clone(),
        train: ckpt.train.clone(),
        optimizer: ckpt.optimizer.config.clone(),
        params: params.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect(),
        buffers: bufs.iter().map(|(n, b)| (n.clone(), b.len())).collect(),
        velocity: ckpt.optimizer.velocity.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &params {
        put(&mut out, p.value.data());
    }
    for (_, b) in &bufs {
        put(&mut out, b);
    }
    for v in ckpt.optimizer.velocity.values() {
        put(&mut out, v);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} ({} bytes left, {n} needed)", self.bytes.len() - self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("{what}: size overflow")))?;
        Ok(self.take(len, what)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses a checkpoint produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("header length overflow".into()))?;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }

    let mut network = Network::build(&header.model, 0)?;
    {
        let mut params = network.all_params_mut();
        if params.len() != header.params.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} parameters, checkpoint lists {}",
                params.len(),
                header.params.len()
            )));
        }
        for (p, (name, shape)) in params.iter_mut().zip(&header.params) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: model has {} {:?}, checkpoint {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            let v = r.floats(p.numel(), name)?;
            p.value.data_mut().copy_from_slice(&v);
        }
    }
    {
        let names: Vec<(String, usize)> = buffers(&network).into_iter().map(|(n, b)| (n, b.len())).collect();
        if names != header.buffers {
            return Err(Error::Checkpoint("running-statistics layout does not match the model".into()));
        }
        let mut layers = network.norm_layers_mut();
        for dst in layers.iter_mut().flat_map(|l| l.buffers_mut()) {
            let v = r.floats(dst.len(), "buffers")?;
            dst.copy_from_slice(&v);
        }
    }
    let mut velocity = BTreeMap::new();
    for (name, n) in &header.velocity {
        velocity.insert(name.clone(), r.floats(*n, name)?);
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(Checkpoint {
        network,
        optimizer: Sgd { config: header.optimizer, velocity },
        epoch: header.epoch,
        seed: header.seed,
        train: header.train,
        stage: header.stage,
    })
}

/// Writes atomically: a temporary sibling is renamed over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode(&bytes)
}

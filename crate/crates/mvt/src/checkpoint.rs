//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic, u64 little-endian header length, JSON header, then
//! the raw little-endian f64 payload. The payload holds every parameter in
//! header order, followed by the optimizer's first and second moments in the
//! same order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use mvt_core::language::Vocabulary;
use mvt_core::model::MvtModel;
use mvt_core::optim::{AdamConfig, AdamState};
use mvt_core::params::ParamGroup;
use mvt_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{io_err, json_err, HarnessError, Result};
use crate::metrics::Metrics;
use crate::train::Snapshot;

pub const MAGIC: &[u8; 8] = b"MVTCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: TrainConfig,
    pub vocabulary: Vocabulary,
    pub epoch: usize,
    pub metrics: Metrics,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub metrics: Metrics,
    pub model: MvtModel,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn from_snapshot(config: &TrainConfig, snapshot: &Snapshot) -> Self {
        Self {
            config: config.clone(),
            epoch: snapshot.epoch,
            metrics: snapshot.metrics,
            model: snapshot.model.clone(),
            optimizer: snapshot.optimizer.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let store = &self.model.store;
        let header = Header {
            config: self.config.clone(),
            vocabulary: self.model.vocab.clone(),
            epoch: self.epoch,
            metrics: self.metrics,
            adam: self.optimizer.config,
            adam_step: self.optimizer.step,
            tensors: store
                .ids()
                .map(|id| TensorEntry {
                    name: store.meta(id).name.clone(),
                    shape: store.get(id).shape().to_vec(),
                    group: store.meta(id).group,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(json_err(path))?;
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(io_err(path));
        write(MAGIC)?;
        write(&(json.len() as u64).to_le_bytes())?;
        write(&json)?;
        let blocks = [store.values(), &self.optimizer.first, &self.optimizer.second];
        for block in blocks {
            for t in block {
                for v in t.data() {
                    write(&v.to_le_bytes())?;
                }
            }
        }
        out.flush().map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| HarnessError::Format {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(io_err(path))?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io_err(path))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(io_err(path))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large".into()))?;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(io_err(path))?;
        let header: Header = serde_json::from_slice(&json).map_err(json_err(path))?;
        let mut payload = Vec::new();
        input.read_to_end(&mut payload).map_err(io_err(path))?;

        let scalars: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if payload.len() != 3 * scalars * 8 {
            return Err(bad(format!(
                "payload has {} bytes, header describes {}",
                payload.len(),
                3 * scalars * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let mut read_block = || -> Result<Vec<(String, Tensor)>> {
            header
                .tensors
                .iter()
                .map(|entry| {
                    let n = entry.shape.iter().product();
                    let data: Vec<f64> = values.by_ref().take(n).collect();
                    Ok((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?))
                })
                .collect()
        };
        let params = read_block()?;
        let first = read_block()?;
        let second = read_block()?;

        let mut model = MvtModel::new(header.config.model.clone(), header.vocabulary.clone(), 0)?;
        model.store.load(&params)?;
        let mut optimizer = AdamState::new(header.adam, model.store.values());
        optimizer.step = header.adam_step;
        for ((name, m), (_, v)) in first.into_iter().zip(second) {
            let id = model.store.find(&name).ok_or_else(|| bad(format!("unknown tensor {name}")))?;
            optimizer.first[id.index()] = m;
            optimizer.second[id.index()] = v;
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            metrics: header.metrics,
            model,
            optimizer,
        })
    }
}

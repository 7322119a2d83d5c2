//! Checkpoints: every float (parameters, batch-norm buffers, Adam moments)
//! packed into one rank-1 BEVT file, next to a JSON index naming each slice.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::TINY_CNN_ARCH;
use crate::bev_raster::{FrustumSpec, GridSpec};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::fusion_head::{Network, Variant};
use crate::nn::Module;
use crate::sensor_io::{read_tensor, write_tensor};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "lrcw-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Param,
    AdamM,
    AdamV,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub name: String,
    pub kind: EntryKind,
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub arch: String,
    pub feature_dim: usize,
    pub input_hw: (usize, usize),
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub lr: f64,
    pub norm: NormStats,
    pub frustum: FrustumSpec,
    pub grid: GridSpec,
    pub entries: Vec<IndexEntry>,
}

/// A trained network with the metadata needed to run it on new data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub norm: NormStats,
    /// Rasterization settings the network was trained with.
    pub frustum: FrustumSpec,
    pub grid: GridSpec,
    pub step: u64,
    pub lr: f64,
}

/// `(stem.bevt, stem.json)`; a `.bevt` or `.json` extension on `path` is
/// replaced.
pub fn checkpoint_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("bevt") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("bevt"), with("json"))
}

impl Checkpoint {
    pub fn variant(&self) -> Variant {
        self.network.variant
    }

    fn pack(&self) -> (Vec<f32>, Vec<IndexEntry>) {
        let mut data = Vec::new();
        let mut entries = Vec::new();
        let mut push = |name: &str, kind, t: &Tensor| {
            entries.push(IndexEntry {
                name: name.to_string(),
                kind,
                offset: data.len(),
                shape: t.shape().to_vec(),
            });
            data.extend_from_slice(t.data());
        };
        for p in self.network.params() {
            push(&p.name, EntryKind::Param, &p.value);
            push(&p.name, EntryKind::AdamM, &p.m);
            push(&p.name, EntryKind::AdamV, &p.v);
        }
        for (name, t) in self.network.buffers() {
            push(&name, EntryKind::Buffer, t);
        }
        (data, entries)
    }

    pub fn index(&self) -> CheckpointIndex {
        CheckpointIndex {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            variant: self.network.variant,
            arch: TINY_CNN_ARCH.to_string(),
            feature_dim: self.network.feature_dim(),
            input_hw: self.network.input_hw(),
            step: self.step,
            lr: self.lr,
            norm: self.norm.clone(),
            frustum: self.frustum,
            grid: self.grid,
            entries: self.pack().1,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (bevt, json) = checkpoint_paths(path);
        let index = self.index();
        let (data, _) = self.pack();
        let len = data.len();
        write_tensor(&bevt, &Tensor::new(vec![len.max(1)], if len == 0 { vec![0.0] } else { data })?)?;
        let text = serde_json::to_string_pretty(&index)?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (bevt, json) = checkpoint_paths(path);
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let index: CheckpointIndex = serde_json::from_str(&text)?;
        let bad = |reason: String| Error::Malformed {
            path: json.clone(),
            reason,
        };
        if index.format != CHECKPOINT_FORMAT || index.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint {} v{}",
                index.format, index.version
            )));
        }
        if index.arch != TINY_CNN_ARCH {
            return Err(bad(format!("unknown architecture {:?}", index.arch)));
        }
        let blob = read_tensor(&bevt)?;
        if blob.ndim() != 1 {
            return Err(Error::Malformed {
                path: bevt.clone(),
                reason: format!("expected a rank-1 tensor, got shape {:?}", blob.shape()),
            });
        }
        let mut network = Network::new(index.variant, index.feature_dim, index.input_hw, 0)?;
        let mut seen = std::collections::HashSet::new();
        for e in &index.entries {
            let n: usize = e.shape.iter().product();
            let slice = blob
                .data()
                .get(e.offset..e.offset + n)
                .ok_or_else(|| bad(format!("entry {} runs past the data file", e.name)))?;
            let target = match e.kind {
                EntryKind::Buffer => network
                    .buffers_mut()
                    .into_iter()
                    .find(|(name, _)| *name == e.name)
                    .map(|(_, t)| t),
                kind => network.params_mut().into_iter().find(|p| p.name == e.name).map(|p| match kind {
                    EntryKind::Param => &mut p.value,
                    EntryKind::AdamM => &mut p.m,
                    _ => &mut p.v,
                }),
            }
            .ok_or_else(|| bad(format!("unknown entry {}", e.name)))?;
            if target.shape() != e.shape.as_slice() {
                return Err(bad(format!(
                    "entry {} has shape {:?}, network expects {:?}",
                    e.name,
                    e.shape,
                    target.shape()
                )));
            }
            target.data_mut().copy_from_slice(slice);
            seen.insert((e.name.clone(), e.kind));
        }
        let expected = network.params().len() * 3 + network.buffers().len();
        if seen.len() != expected {
            return Err(bad(format!("{} of {expected} tensors present", seen.len())));
        }
        Ok(Self {
            network,
            norm: index.norm,
            frustum: index.frustum,
            grid: index.grid,
            step: index.step,
            lr: index.lr,
        })
    }
}

//! Flat parameter storage. Every trainable tensor of a model lives in one
//! contiguous `Vec<f64>` arena addressed through a named layout of
//! (offset, rows, cols) slots. Gradients, optimizer moments, and trainable
//! masks are parallel buffers over the same layout, which keeps the
//! optimizer and the autodiff tape free of per-tensor bookkeeping.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Shape and placement of one named tensor inside the arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered tensor layout: registration order is preserved so the arena is
/// laid out identically on every run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    names: Vec<String>,
    slots: BTreeMap<String, Slot>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor; panics on duplicate names (layouts are static).
    pub fn register(&mut self, name: &str, rows: usize, cols: usize) -> Slot {
        assert!(
            !self.slots.contains_key(name),
            "duplicate tensor name: {name}"
        );
        let slot = Slot { offset: self.total, rows, cols };
        self.names.push(name.to_string());
        self.slots.insert(name.to_string(), slot);
        self.total += rows * cols;
        slot
    }

    pub fn slot(&self, name: &str) -> Slot {
        *self
            .slots
            .get(name)
            .unwrap_or_else(|| panic!("unknown tensor name: {name}"))
    }

    pub fn get(&self, name: &str) -> Option<Slot> {
        self.slots.get(name).copied()
    }

    /// Tensor names in registration order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn total_len(&self) -> usize {
        self.total
    }
}

/// A parameter arena plus its layout and per-tensor trainable flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    pub layout: Layout,
    pub values: Vec<f64>,
    /// Per-scalar trainable mask; frozen entries receive no optimizer update
    /// and no weight decay.
    pub trainable: Vec<bool>,
}

impl ParamVec {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.total_len();
        Self { layout, values: vec![0.0; n], trainable: vec![true; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> &[f64] {
        let s = self.layout.slot(name);
        &self.values[s.offset..s.offset + s.len()]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut [f64] {
        let s = self.layout.slot(name);
        &mut self.values[s.offset..s.offset + s.len()]
    }

    /// Row `r` of a 2-d tensor.
    pub fn row(&self, name: &str, r: usize) -> &[f64] {
        let s = self.layout.slot(name);
        assert!(r < s.rows, "row {r} out of range for {name}");
        let start = s.offset + r * s.cols;
        &self.values[start..start + s.cols]
    }

    /// Mark every scalar of a tensor as frozen (or trainable again).
    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        let s = self.layout.slot(name);
        for m in &mut self.trainable[s.offset..s.offset + s.len()] {
            *m = trainable;
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable.iter().filter(|&&t| t).count()
    }
}

/// Serialized checkpoint: explicit shapes, a format version, and the hash of
/// the config that produced it, so a mismatched load is detectable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub config_hash: String,
    pub tensors: Vec<CheckpointTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Current checkpoint format version.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("checkpoint is for model kind {found:?}, expected {expected:?}")]
    ModelKind { found: String, expected: String },
    #[error(
        "checkpoint config hash {found} does not match current config {expected}; \
         pass --force to load anyway"
    )]
    ConfigHash { found: String, expected: String },
    #[error("checkpoint tensor {name}: shape {found_rows}x{found_cols} does not match layout {rows}x{cols}")]
    Shape {
        name: String,
        found_rows: usize,
        found_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("checkpoint tensor {name}: {found} values for shape {rows}x{cols}")]
    Length { name: String, found: usize, rows: usize, cols: usize },
    #[error("checkpoint missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unknown tensor {0}")]
    UnknownTensor(String),
}

impl ParamVec {
    /// Export the arena as a checkpoint.
    pub fn to_checkpoint(&self, model_kind: &str, config_hash: &str) -> Checkpoint {
        let tensors = self
            .layout
            .names()
            .iter()
            .map(|name| {
                let s = self.layout.slot(name);
                CheckpointTensor {
                    name: name.clone(),
                    rows: s.rows,
                    cols: s.cols,
                    values: self.values[s.offset..s.offset + s.len()].to_vec(),
                }
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_kind: model_kind.to_string(),
            config_hash: config_hash.to_string(),
            tensors,
        }
    }

    /// Load values from a checkpoint into an arena with this layout.
    ///
    /// `expected_config_hash = None` skips the hash check (forced load);
    /// shape checks always apply.
    pub fn load_checkpoint(
        &mut self,
        ckpt: &Checkpoint,
        model_kind: &str,
        expected_config_hash: Option<&str>,
    ) -> Result<(), CheckpointError> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::FormatVersion {
                found: ckpt.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        if ckpt.model_kind != model_kind {
            return Err(CheckpointError::ModelKind {
                found: ckpt.model_kind.clone(),
                expected: model_kind.to_string(),
            });
        }
        if let Some(expected) = expected_config_hash {
            if ckpt.config_hash != expected {
                return Err(CheckpointError::ConfigHash {
                    found: ckpt.config_hash.clone(),
                    expected: expected.to_string(),
                });
            }
        }
        let mut seen: Vec<&str> = Vec::new();
        for t in &ckpt.tensors {
            let slot = self
                .layout
                .get(&t.name)
                .ok_or_else(|| CheckpointError::UnknownTensor(t.name.clone()))?;
            if t.rows != slot.rows || t.cols != slot.cols {
                return Err(CheckpointError::Shape {
                    name: t.name.clone(),
                    found_rows: t.rows,
                    found_cols: t.cols,
                    rows: slot.rows,
                    cols: slot.cols,
                });
            }
            if t.values.len() != slot.len() {
                return Err(CheckpointError::Length {
                    name: t.name.clone(),
                    found: t.values.len(),
                    rows: t.rows,
                    cols: t.cols,
                });
            }
            seen.push(&t.name);
            self.values[slot.offset..slot.offset + slot.len()].copy_from_slice(&t.values);
        }
        for name in self.layout.names() {
            if !seen.contains(&name.as_str()) {
                return Err(CheckpointError::MissingTensor(name.clone()));
            }
        }
        Ok(())
    }
}

/// Write a checkpoint as compact JSON (deterministic bytes for a given model).
pub fn save_checkpoint_file(
    ckpt: &Checkpoint,
    path: impl AsRef<std::path::Path>,
) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint_file(
    path: impl AsRef<std::path::Path>,
) -> Result<Checkpoint, CheckpointError> {
    let content = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&content)?)
}

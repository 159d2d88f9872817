//! Checkpoint values and transfer initialization.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmt::{ModelConfig, OptimizerConfig};
use crate::transform::VocabMapping;

/// Name of the shared embedding matrix.
pub const SHARED_EMBEDDING: &str = "embed.shared";
/// Source-side embedding when embeddings are not shared.
pub const SOURCE_EMBEDDING: &str = "embed.source";
/// Target-side embedding (and output projection) when not shared.
pub const TARGET_EMBEDDING: &str = "embed.target";

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::data(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: alloc::vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.shape.last().copied().unwrap_or(0);
        &self.data[i * w..(i + 1) * w]
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// First and second Adam moments of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// Hex SHA-256 of the vocabulary file the embedding rows refer to.
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub model: ModelConfig,
    /// Optimizer that produced `optimizer_state`, if any.
    pub optimizer: Option<OptimizerConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub step: u64,
    pub optimizer_state: BTreeMap<String, Moments>,
    pub metadata: Metadata,
}

impl Checkpoint {
    pub fn embedding_names(&self) -> Vec<&str> {
        [SHARED_EMBEDDING, SOURCE_EMBEDDING, TARGET_EMBEDDING]
            .into_iter()
            .filter(|n| self.tensors.contains_key(*n))
            .collect()
    }

    /// Checks finiteness, the embedding row count and moment shapes.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(Error::data(format!("tensor {name} has inconsistent shape")));
            }
            if !t.is_finite() {
                return Err(Error::data(format!("tensor {name} contains NaN or Inf")));
            }
        }
        for (name, mo) in &self.optimizer_state {
            let Some(t) = self.tensors.get(name) else {
                return Err(Error::data(format!("moments for unknown tensor {name}")));
            };
            if mo.m.shape != t.shape || mo.v.shape != t.shape {
                return Err(Error::data(format!("moments of {name} have the wrong shape")));
            }
            if !mo.m.is_finite() || !mo.v.is_finite() {
                return Err(Error::data(format!("moments of {name} contain NaN or Inf")));
            }
        }
        let names = self.embedding_names();
        if names.is_empty() {
            return Err(Error::data("checkpoint has no embedding tensor"));
        }
        for name in names {
            let rows = self.tensors[name].shape.first().copied().unwrap_or(0);
            if rows != self.metadata.vocab_size {
                return Err(Error::data(format!(
                    "{name} has {rows} rows but the vocabulary has {} entries",
                    self.metadata.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Equality of every tensor and moment, bit for bit, plus the step.
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.step == other.step
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bitwise_eq(b))
            && self.optimizer_state.len() == other.optimizer_state.len()
            && self.optimizer_state.iter().zip(&other.optimizer_state).all(|((na, a), (nb, b))| {
                na == nb && a.m.bitwise_eq(&b.m) && a.v.bitwise_eq(&b.v)
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransferMode {
    /// Keep the parent vocabulary.
    Direct,
    /// Relabel embedding rows with a transformed vocabulary.
    Transformed(VocabMapping),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    pub mode: TransferMode,
    pub reset_step: bool,
    pub reset_moments: bool,
}

impl TransferPlan {
    pub fn direct() -> Self {
        TransferPlan { mode: TransferMode::Direct, reset_step: false, reset_moments: false }
    }

    pub fn transformed(mapping: VocabMapping) -> Self {
        TransferPlan { mode: TransferMode::Transformed(mapping), reset_step: false, reset_moments: false }
    }
}

/// Builds the child initialization from a parent checkpoint.
///
/// Tensor values and shapes never change. Under the transformed mode row `i`
/// of the embedding now stands for `transformed[i]`, so shared subwords keep
/// their trained vectors and child-only subwords start from whatever the
/// parent had in that slot.
pub fn transfer_init(parent: &Checkpoint, plan: &TransferPlan) -> Result<Checkpoint> {
    parent.validate()?;
    let mut child = parent.clone();
    if let TransferMode::Transformed(mapping) = &plan.mode {
        let size = mapping.transformed.len();
        for name in parent.embedding_names() {
            let rows = parent.tensors[name].shape[0];
            if rows != size {
                return Err(Error::transfer(format!(
                    "{name} has {rows} rows but the transformed vocabulary has {size} entries"
                )));
            }
        }
        child.metadata.vocab_hash = mapping.transformed.content_hash();
        child.metadata.vocab_size = size;
    }
    if plan.reset_step {
        child.step = 0;
    }
    if plan.reset_moments {
        child.optimizer_state.clear();
        child.metadata.optimizer = None;
    }
    Ok(child)
}

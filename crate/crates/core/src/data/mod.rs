//! Domain datasets, synthetic shift benchmarks, IDX files and batching.

mod batch;
mod idx;
mod synth;

pub use batch::BatchIterator;
pub use idx::{load_idx, load_idx_labels, parse_idx, IdxArray};
pub use synth::{gen_gaussian_blobs, gen_two_moons};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    features: Tensor,
    labels: Option<Vec<usize>>,
    domain: DomainTag,
    num_classes: usize,
}

impl DomainDataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, domain: DomainTag, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::dim("[N, D] features", format!("{:?}", features.shape())));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::dim(format!("{} labels", features.rows()), l.len()));
            }
            if let Some(&bad) = l.iter().find(|&&y| y >= num_classes) {
                return Err(Error::Validation(format!(
                    "label {bad} out of range for K = {num_classes}"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            domain,
            num_classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Labeled mini-batch for the given rows.
    pub fn labeled_batch(&self, idx: &[usize]) -> Result<LabeledBatch> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("dataset has no labels".into()))?;
        LabeledBatch::new(
            self.features.select_rows(idx)?,
            idx.iter().map(|&i| labels[i]).collect(),
        )
    }

    /// Drops the labels into a sealed evaluation-only channel.
    pub fn into_target(self) -> TargetDomain {
        let sealed = self.labels.map(SealedLabels);
        TargetDomain {
            data: DomainDataset {
                labels: None,
                domain: DomainTag::Target,
                ..self
            },
            sealed,
        }
    }
}

/// Inputs with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::dim(
                format!("{} labels for inputs {:?}", inputs.rows(), inputs.shape()),
                labels.len(),
            ));
        }
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// True target labels, usable only to score predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct SealedLabels(Vec<usize>);

impl SealedLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fraction of `predictions` (one per row) that match.
    pub fn accuracy(&self, predictions: &[usize]) -> Result<f64> {
        if predictions.len() != self.0.len() {
            return Err(Error::dim(self.0.len(), predictions.len()));
        }
        let hits = predictions.iter().zip(&self.0).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / self.0.len() as f64)
    }

    /// Fraction of `(row, predicted class)` pairs that match; `None` when empty.
    pub fn accuracy_at(&self, picks: &[(usize, usize)]) -> Option<f64> {
        if picks.is_empty() {
            return None;
        }
        let hits = picks.iter().filter(|&&(i, y)| self.0.get(i) == Some(&y)).count();
        Some(hits as f64 / picks.len() as f64)
    }
}

/// A target-domain dataset: the training-facing view carries no labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDomain {
    data: DomainDataset,
    sealed: Option<SealedLabels>,
}

impl TargetDomain {
    pub fn data(&self) -> &DomainDataset {
        &self.data
    }

    pub fn sealed(&self) -> Option<&SealedLabels> {
        self.sealed.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ShiftSpec {
    None,
    /// Rotation about the origin by an angle in radians (2-D data only).
    Rotation(f64),
    Translation(Vec<f64>),
}

pub fn apply_shift(ds: &DomainDataset, spec: &ShiftSpec) -> Result<TargetDomain> {
    let d = ds.dim();
    let x = ds.features.data();
    let shifted: Vec<f64> = match spec {
        ShiftSpec::None => x.to_vec(),
        ShiftSpec::Rotation(angle) => {
            if d != 2 {
                return Err(Error::Config(format!("rotation shift needs D = 2, got D = {d}")));
            }
            let (s, c) = angle.sin_cos();
            x.chunks(2)
                .flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
                .collect()
        }
        ShiftSpec::Translation(offset) => {
            if offset.len() != d {
                return Err(Error::Config(format!(
                    "translation offset has length {}, data has D = {d}",
                    offset.len()
                )));
            }
            x.chunks(d)
                .flat_map(|p| p.iter().zip(offset).map(|(a, b)| a + b))
                .collect()
        }
    };
    let features = Tensor::matrix(ds.len(), d, shifted)?;
    Ok(DomainDataset {
        features,
        ..ds.clone()
    }
    .into_target())
}

//! Dataset acquisition, parsing, normalization and splitting.
//!
//! The five supported datasets ship in two raw binary families: the IDX
//! format (MNIST, FashionMNIST, EMNIST letters) and the CIFAR fixed-record
//! format (CIFAR-10, CIFAR-100). Loaders normalize pixel bytes by 255 into
//! `[0, 1]` and flatten images row-major, so every dataset becomes a flat
//! feature matrix plus integer labels.

mod cifar;
mod fetch;
mod idx;

pub use cifar::{load_cifar, CifarVariant};
pub use fetch::{fetch_dataset, FetchManifest};
pub use idx::load_idx;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Identifier of one of the supported datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "MNIST")]
    Mnist,
    #[serde(rename = "FashionMNIST")]
    FashionMnist,
    #[serde(rename = "EMNIST")]
    Emnist,
    #[serde(rename = "CIFAR10")]
    Cifar10,
    #[serde(rename = "CIFAR100")]
    Cifar100,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Mnist,
        DatasetKind::FashionMnist,
        DatasetKind::Emnist,
        DatasetKind::Cifar10,
        DatasetKind::Cifar100,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "MNIST",
            DatasetKind::FashionMnist => "FashionMNIST",
            DatasetKind::Emnist => "EMNIST",
            DatasetKind::Cifar10 => "CIFAR10",
            DatasetKind::Cifar100 => "CIFAR100",
        }
    }

    /// (train size, test size, feature dim, classes) of the official distribution.
    pub fn table(&self) -> (usize, usize, usize, usize) {
        match self {
            DatasetKind::Mnist => (60_000, 10_000, 784, 10),
            DatasetKind::FashionMnist => (60_000, 10_000, 784, 10),
            DatasetKind::Emnist => (124_800, 20_800, 784, 27),
            DatasetKind::Cifar10 => (50_000, 10_000, 3_072, 10),
            DatasetKind::Cifar100 => (50_000, 10_000, 3_072, 100),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.table().2
    }

    pub fn num_classes(&self) -> usize {
        self.table().3
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashionmnist" => Ok(DatasetKind::FashionMnist),
            "emnist" => Ok(DatasetKind::Emnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            _ => Err(Error::UnknownDataset(s.to_string())),
        }
    }
}

/// One split of one dataset: a flat feature matrix in `[0, 1]` plus labels.
///
/// Immutable once constructed; partitions and device shards index into it.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    name: String,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Validates row/label agreement, the `[0, 1]` feature range and label bounds.
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::DimensionMismatch(format!(
                "feature value {bad} outside [0, 1]"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset holding copies of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::DimensionMismatch(format!(
                "subset index {bad} out of range for {} samples",
                self.len()
            )));
        }
        Ok(Self {
            name: self.name.clone(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }

    /// Normalized label histogram over the whole dataset.
    pub fn label_histogram(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        let n = self.labels.len().max(1) as f64;
        counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Disjoint training/validation views produced by [`train_validation_split`].
#[derive(Clone, Debug)]
pub struct SplitPair {
    pub training: LabeledDataset,
    pub validation: LabeledDataset,
}

/// Shuffled index permutation split at `floor(fraction * n)`.
///
/// Exposed separately so the assignment is testable without copying features.
pub fn split_indices(n: usize, fraction: f64, split_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadFraction(fraction));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(split_seed));
    let cut = (fraction * n as f64).floor() as usize;
    let validation = perm.split_off(cut);
    Ok((perm, validation))
}

/// Deterministic shuffled split of a dataset into training and validation parts.
pub fn train_validation_split(
    dataset: &LabeledDataset,
    fraction: f64,
    split_seed: u64,
) -> Result<SplitPair> {
    let (train_idx, val_idx) = split_indices(dataset.len(), fraction, split_seed)?;
    Ok(SplitPair {
        training: dataset.subset(&train_idx)?,
        validation: dataset.subset(&val_idx)?,
    })
}

/// Loads the official training and test splits of `kind` from
/// `{data_dir}/{name}/raw/`, checking feature dimension and class count.
pub fn load_dataset(kind: DatasetKind, data_dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let raw = data_dir.join(kind.name()).join("raw");
    let (train, test) = match kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => (
            load_idx(
                &raw.join("train-images-idx3-ubyte"),
                &raw.join("train-labels-idx1-ubyte"),
            )?,
            load_idx(
                &raw.join("t10k-images-idx3-ubyte"),
                &raw.join("t10k-labels-idx1-ubyte"),
            )?,
        ),
        DatasetKind::Emnist => (
            load_idx(
                &raw.join("emnist-letters-train-images-idx3-ubyte"),
                &raw.join("emnist-letters-train-labels-idx1-ubyte"),
            )?,
            load_idx(
                &raw.join("emnist-letters-test-images-idx3-ubyte"),
                &raw.join("emnist-letters-test-labels-idx1-ubyte"),
            )?,
        ),
        DatasetKind::Cifar10 => {
            let batches: Vec<_> = (1..=5)
                .map(|i| raw.join(format!("data_batch_{i}.bin")))
                .collect();
            (
                load_cifar(&batches, CifarVariant::C10)?,
                load_cifar(&[raw.join("test_batch.bin")], CifarVariant::C10)?,
            )
        }
        DatasetKind::Cifar100 => (
            load_cifar(&[raw.join("train.bin")], CifarVariant::C100)?,
            load_cifar(&[raw.join("test.bin")], CifarVariant::C100)?,
        ),
    };
    let rebrand = |d: LabeledDataset, split: &str| -> Result<LabeledDataset> {
        if d.feature_dim() != kind.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} {split} split has {} features, expected {}",
                kind,
                d.feature_dim(),
                kind.feature_dim()
            )));
        }
        // Class count comes from the dataset definition, not from the observed
        // labels: EMNIST letters uses 1..=26 and leaves class 0 unoccupied.
        LabeledDataset::new(kind.name(), d.features, d.labels, kind.num_classes())
    };
    Ok((rebrand(train, "training")?, rebrand(test, "test")?))
}

//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use profed::datasets::LabeledDataset;
use profed::seed;
use rand::Rng;

/// Linearly separable blobs: class `c` peaks at feature `c % dim`.
pub fn blob_dataset(per_class: usize, num_classes: usize, dim: usize, seed_value: u64) -> LabeledDataset {
    let n = per_class * num_classes;
    let mut rng = seed::rng(seed_value);
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let c = s % num_classes;
        for d in 0..dim {
            let center = if d == c % dim { 0.85 } else { 0.15 };
            let noise: f64 = rng.random_range(-0.1..0.1);
            features[[s, d]] = (center + noise).clamp(0.0, 1.0);
        }
        labels.push(c);
    }
    LabeledDataset::new("blobs", features, labels, num_classes).expect("valid fixture")
}

/// Featureless dataset whose label `c` occurs exactly `sizes[c]` times.
pub fn label_block_dataset(sizes: &[usize]) -> LabeledDataset {
    let n: usize = sizes.iter().sum();
    let features = Array2::zeros((n, 4));
    let mut labels = Vec::with_capacity(n);
    for (c, &count) in sizes.iter().enumerate() {
        labels.extend(std::iter::repeat_n(c, count));
    }
    LabeledDataset::new("blocks", features, labels, sizes.len()).expect("valid fixture")
}

/// Repository data directory, shared with the CLI default layout.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// `Some(dir)` when the real MNIST IDX files are staged locally.
pub fn mnist_raw_dir() -> Option<PathBuf> {
    let dir = data_dir().join("MNIST/raw");
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

//! Label-skew measurement for partitions.

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};

use super::{DeviceAssignment, RegionPartition};

/// Total variation distance between two distributions over the same support:
/// half the L1 distance. 0 for identical inputs, 1 for disjoint supports.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Normalized label histogram of the given sample indices.
pub fn label_histogram(dataset: &LabeledDataset, indices: &[usize]) -> Vec<f64> {
    let mut counts = vec![0usize; dataset.num_classes()];
    for &i in indices {
        counts[dataset.labels()[i]] += 1;
    }
    let n = indices.len().max(1) as f64;
    counts.iter().map(|&c| c as f64 / n).collect()
}

/// How skewed a partition is, at region and (optionally) device level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewnessReport {
    /// Symmetric k x k matrix of pairwise region TV distances, zero diagonal.
    pub pairwise: Vec<Vec<f64>>,
    /// Mean TV distance over unordered region pairs (0 when k = 1).
    pub mean_inter_region: f64,
    /// Largest TV distance between any device and its own region.
    pub max_intra_device: Option<f64>,
}

/// Measures label skew between regions and between devices and their region.
///
/// Low `max_intra_device` confirms the homogeneous within-region deal; high
/// `mean_inter_region` confirms cross-region heterogeneity.
pub fn skewness_report(
    dataset: &LabeledDataset,
    partition: &RegionPartition,
    devices: Option<&DeviceAssignment>,
) -> Result<SkewnessReport> {
    let k = partition.num_regions();
    let hists: Vec<Vec<f64>> = partition
        .regions
        .iter()
        .map(|r| label_histogram(dataset, r))
        .collect();

    let mut pairwise = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = tv_distance(&hists[i], &hists[j])?;
            pairwise[i][j] = d;
            pairwise[j][i] = d;
            total += d;
        }
    }
    let pairs = k * (k - 1) / 2;
    let mean_inter_region = if pairs == 0 { 0.0 } else { total / pairs as f64 };

    let max_intra_device = match devices {
        None => None,
        Some(assignment) => {
            let mut max = 0.0f64;
            for shard in &assignment.shards {
                let h = label_histogram(dataset, &shard.indices);
                max = max.max(tv_distance(&h, &hists[shard.region])?);
            }
            Some(max)
        }
    };

    Ok(SkewnessReport {
        pairwise,
        mean_inter_region,
        max_intra_device,
    })
}

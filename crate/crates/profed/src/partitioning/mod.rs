//! Region and device partitioning.
//!
//! A dataset is first split across `k` subregions by one of four strategies
//! (iid, dirichlet, hard, custom), then each region's samples are dealt
//! homogeneously to that region's devices. Regions model geographic areas
//! with heterogeneous label mixes; devices inside a region look alike.
//!
//! All strategies assign by index: the partition borrows nothing and owns
//! plain `Vec<usize>` rows into the source dataset. Every partitioner is
//! deterministic in `(dataset, params, seed)`.

mod skewness;

pub use skewness::{label_histogram, skewness_report, tv_distance, SkewnessReport};

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Deserializer, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Region allocation strategy plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "lowercase")]
pub enum PartitionMethod {
    Iid,
    Dirichlet {
        alpha: f64,
    },
    Hard {
        /// Region -> labels. `None` uses the default map `label c -> region c mod k`.
        labels_per_region: Option<Vec<Vec<usize>>>,
    },
    Custom {
        matrix: PartitionMatrix,
    },
}

impl PartitionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PartitionMethod::Iid => "iid",
            PartitionMethod::Dirichlet { .. } => "dirichlet",
            PartitionMethod::Hard { .. } => "hard",
            PartitionMethod::Custom { .. } => "custom",
        }
    }
}

impl fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-per-region, column-per-label proportion matrix.
///
/// Columns each sum to 1 within 1e-9: a column states how label `c` is
/// divided among regions.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PartitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl PartitionMatrix {
    pub const COLUMN_SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::MatrixShape {
                rows: 0,
                cols: 0,
                expected_rows: 1,
                expected_cols: 1,
            });
        }
        let cols = rows[0].len();
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::MatrixShape {
                rows: k,
                cols: rows.iter().map(|r| r.len()).max().unwrap_or(0),
                expected_rows: k,
                expected_cols: cols.max(1),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        for j in 0..cols {
            let sum: f64 = rows.iter().map(|r| r[j]).sum();
            if (sum - 1.0).abs() > Self::COLUMN_SUM_TOLERANCE {
                return Err(Error::ColumnSum { col: j, sum });
            }
        }
        Ok(Self { rows })
    }

    pub fn num_regions(&self) -> usize {
        self.rows.len()
    }

    pub fn num_labels(&self) -> usize {
        self.rows[0].len()
    }

    /// Proportions of label `c` across regions (column `c`).
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

impl<'de> Deserialize<'de> for PartitionMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        PartitionMatrix::new(rows).map_err(serde::de::Error::custom)
    }
}

/// Result of region partitioning: disjoint index sets covering the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub method: PartitionMethod,
    pub num_samples: usize,
    pub regions: Vec<Vec<usize>>,
}

impl RegionPartition {
    /// Checks disjointness, completeness, index bounds and non-emptiness.
    pub fn new(
        method: PartitionMethod,
        num_samples: usize,
        regions: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let mut seen = vec![false; num_samples];
        let mut covered = 0usize;
        for (r, indices) in regions.iter().enumerate() {
            if indices.is_empty() {
                return Err(Error::EmptyRegion { region: r });
            }
            for &i in indices {
                if i >= num_samples || seen[i] {
                    return Err(Error::DimensionMismatch(format!(
                        "region {r} holds index {i} which is out of range or duplicated"
                    )));
                }
                seen[i] = true;
                covered += 1;
            }
        }
        if covered != num_samples {
            return Err(Error::DimensionMismatch(format!(
                "partition covers {covered} of {num_samples} samples"
            )));
        }
        Ok(Self {
            method,
            num_samples,
            regions,
        })
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }
}

/// How many devices to create.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeviceCount {
    /// Split as evenly as possible across regions, earlier regions first.
    Total(usize),
    /// Explicit per-region device counts; length must equal the region count.
    PerRegion(Vec<usize>),
}

/// One device's shard: indices into the source dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceShard {
    pub id: usize,
    pub region: usize,
    pub indices: Vec<usize>,
}

/// All device shards, region-major by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceAssignment {
    pub shards: Vec<DeviceShard>,
}

impl DeviceAssignment {
    pub fn num_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn shards_in_region(&self, region: usize) -> impl Iterator<Item = &DeviceShard> {
        self.shards.iter().filter(move |s| s.region == region)
    }
}

/// Saved product of the `partition` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub dataset: String,
    #[serde(flatten)]
    pub method: PartitionMethod,
    pub seed: u64,
    pub split_fraction: f64,
    pub regions: Vec<Vec<usize>>,
    pub devices: Vec<DeviceShard>,
}

impl PartitionManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, body)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn check_region_count(k: usize, num_samples: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::BadRegionCount {
            k,
            reason: "at least one region is required".to_string(),
        });
    }
    if k > num_samples {
        return Err(Error::BadRegionCount {
            k,
            reason: format!("dataset only has {num_samples} samples"),
        });
    }
    Ok(())
}

fn label_groups(dataset: &LabeledDataset) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); dataset.num_classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// Apportions `total` items over weights by the largest remainder method.
///
/// Quotas are floored, then leftover units go to the largest fractional
/// parts, lower index winning ties. Exact: the result sums to `total`.
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let k = weights.len();
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 && sum.is_finite() {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / k as f64; k]
    };
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits each label group across regions by per-label proportions.
///
/// Groups are shuffled before slicing so composition, not identity, is what
/// the proportions control.
fn assign_by_proportions(
    mut groups: Vec<Vec<usize>>,
    proportions: impl Fn(usize) -> Vec<f64>,
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut regions = vec![Vec::new(); k];
    for (c, group) in groups.iter_mut().enumerate() {
        let props = proportions(c);
        group.shuffle(rng);
        let counts = largest_remainder(&props, group.len());
        let mut offset = 0;
        for (r, &cnt) in counts.iter().enumerate() {
            regions[r].extend_from_slice(&group[offset..offset + cnt]);
            offset += cnt;
        }
    }
    regions
}

/// Moves single samples of frequent labels from large regions into empty
/// ones until every region is populated.
///
/// Donors are the largest regions (ties to the lowest index) holding the
/// globally most frequent label that still have at least two samples, so a
/// repair never creates a new empty region.
fn repair_empty_regions(regions: &mut [Vec<usize>], labels: &[usize], num_classes: usize) -> Result<()> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut by_frequency: Vec<usize> = (0..num_classes).collect();
    by_frequency.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    while let Some(empty) = regions.iter().position(|r| r.is_empty()) {
        let mut moved = false;
        'labels: for &target_label in &by_frequency {
            if counts[target_label] == 0 {
                break;
            }
            let mut donor: Option<usize> = None;
            for (d, r) in regions.iter().enumerate() {
                if r.len() >= 2 && r.iter().any(|&i| labels[i] == target_label) {
                    // Strict comparison keeps the lowest index on size ties.
                    if donor.is_none_or(|best| r.len() > regions[best].len()) {
                        donor = Some(d);
                    }
                }
            }
            if let Some(d) = donor {
                let pos = regions[d]
                    .iter()
                    .rposition(|&i| labels[i] == target_label)
                    .expect("donor holds the label by construction");
                let sample = regions[d].remove(pos);
                regions[empty].push(sample);
                moved = true;
                break 'labels;
            }
        }
        if !moved {
            return Err(Error::EmptyRegion { region: empty });
        }
    }
    Ok(())
}

/// Homogeneous split: a shuffled permutation dealt round-robin to regions.
pub fn partition_iid(dataset: &LabeledDataset, k: usize, seed_value: u64) -> Result<RegionPartition> {
    check_region_count(k, dataset.len())?;
    let mut rng = seed::rng(seed_value);
    let mut perm: Vec<usize> = (0..dataset.len()).collect();
    perm.shuffle(&mut rng);
    let mut regions = vec![Vec::with_capacity(dataset.len() / k + 1); k];
    for (pos, &i) in perm.iter().enumerate() {
        regions[pos % k].push(i);
    }
    RegionPartition::new(PartitionMethod::Iid, dataset.len(), regions)
}

/// Label-skewed split: per label, region shares are drawn from a symmetric
/// Dirichlet(alpha) via k normalized Gamma(alpha, 1) draws.
///
/// Lower alpha concentrates each label in fewer regions. Draw order is fixed
/// (labels ascending, regions in order within a label) so results are
/// reproducible for a given seed.
pub fn partition_dirichlet(
    dataset: &LabeledDataset,
    k: usize,
    alpha: f64,
    seed_value: u64,
) -> Result<RegionPartition> {
    if k < 2 {
        return Err(Error::BadRegionCount {
            k,
            reason: "dirichlet partitioning needs at least 2 regions".to_string(),
        });
    }
    check_region_count(k, dataset.len())?;
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::BadAlpha(alpha));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| Error::BadAlpha(alpha))?;
    let mut rng = seed::rng(seed_value);
    let groups = label_groups(dataset);
    let mut shares: Vec<Vec<f64>> = Vec::with_capacity(groups.len());
    for _ in 0..groups.len() {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            shares.push(draws.iter().map(|d| d / sum).collect());
        } else {
            // All-zero draws can occur for very small alpha; fall back to even shares.
            shares.push(vec![1.0 / k as f64; k]);
        }
    }
    let mut regions = assign_by_proportions(groups, |c| shares[c].clone(), k, &mut rng);
    repair_empty_regions(&mut regions, dataset.labels(), dataset.num_classes())?;
    RegionPartition::new(
        PartitionMethod::Dirichlet { alpha },
        dataset.len(),
        regions,
    )
}

fn validate_label_map(map: &[Vec<usize>], k: usize, dataset: &LabeledDataset) -> Result<()> {
    if map.len() != k {
        return Err(Error::BadRegionCount {
            k,
            reason: format!("label map describes {} regions", map.len()),
        });
    }
    for (r, labels) in map.iter().enumerate() {
        if labels.is_empty() {
            return Err(Error::EmptyLabelSet(r));
        }
        for &l in labels {
            if l >= dataset.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    num_classes: dataset.num_classes(),
                });
            }
        }
    }
    let mut present = vec![false; dataset.num_classes()];
    for &l in dataset.labels() {
        present[l] = true;
    }
    for (c, &p) in present.iter().enumerate() {
        if p && !map.iter().any(|labels| labels.contains(&c)) {
            return Err(Error::UncoveredLabel(c));
        }
    }
    Ok(())
}

/// Pathological split: every label lives in an explicit set of regions.
///
/// The default map sends label `c` to region `c mod k`; an explicit map may
/// list a label in several regions, in which case its samples are balanced
/// across them.
pub fn partition_hard(
    dataset: &LabeledDataset,
    k: usize,
    labels_per_region: Option<&[Vec<usize>]>,
    seed_value: u64,
) -> Result<RegionPartition> {
    check_region_count(k, dataset.len())?;
    match labels_per_region {
        Some(map) => validate_label_map(map, k, dataset)?,
        None if k > dataset.num_classes() => {
            return Err(Error::BadRegionCount {
                k,
                reason: format!(
                    "balanced hard partitioning over {} labels would leave a region without any label",
                    dataset.num_classes()
                ),
            });
        }
        None => {}
    }
    let owners: Vec<Vec<usize>> = (0..dataset.num_classes())
        .map(|c| match labels_per_region {
            None => vec![c % k],
            Some(map) => (0..k).filter(|&r| map[r].contains(&c)).collect(),
        })
        .collect();
    let mut rng = seed::rng(seed_value);
    let groups = label_groups(dataset);
    let mut regions = assign_by_proportions(
        groups,
        |c| {
            let mut props = vec![0.0; k];
            for &r in &owners[c] {
                props[r] = 1.0 / owners[c].len() as f64;
            }
            props
        },
        k,
        &mut rng,
    );
    repair_empty_regions(&mut regions, dataset.labels(), dataset.num_classes())?;
    RegionPartition::new(
        PartitionMethod::Hard {
            labels_per_region: labels_per_region.map(<[Vec<usize>]>::to_vec),
        },
        dataset.len(),
        regions,
    )
}

/// Matrix-driven split: column `c` of the matrix gives label `c`'s region shares.
pub fn partition_custom(
    dataset: &LabeledDataset,
    matrix: &PartitionMatrix,
    seed_value: u64,
) -> Result<RegionPartition> {
    let k = matrix.num_regions();
    check_region_count(k, dataset.len())?;
    if matrix.num_labels() != dataset.num_classes() {
        return Err(Error::MatrixShape {
            rows: k,
            cols: matrix.num_labels(),
            expected_rows: k,
            expected_cols: dataset.num_classes(),
        });
    }
    let mut rng = seed::rng(seed_value);
    let groups = label_groups(dataset);
    let mut regions = assign_by_proportions(groups, |c| matrix.column(c), k, &mut rng);
    repair_empty_regions(&mut regions, dataset.labels(), dataset.num_classes())?;
    RegionPartition::new(
        PartitionMethod::Custom {
            matrix: matrix.clone(),
        },
        dataset.len(),
        regions,
    )
}

/// Dispatches to the partitioner selected by `method`, checking that `k`
/// agrees with any region count the method itself implies.
pub fn partition(
    dataset: &LabeledDataset,
    method: &PartitionMethod,
    k: usize,
    seed_value: u64,
) -> Result<RegionPartition> {
    match method {
        PartitionMethod::Iid => partition_iid(dataset, k, seed_value),
        PartitionMethod::Dirichlet { alpha } => partition_dirichlet(dataset, k, *alpha, seed_value),
        PartitionMethod::Hard { labels_per_region } => {
            partition_hard(dataset, k, labels_per_region.as_deref(), seed_value)
        }
        PartitionMethod::Custom { matrix } => {
            if matrix.num_regions() != k {
                return Err(Error::MatrixShape {
                    rows: matrix.num_regions(),
                    cols: matrix.num_labels(),
                    expected_rows: k,
                    expected_cols: matrix.num_labels(),
                });
            }
            partition_custom(dataset, matrix, seed_value)
        }
    }
}

/// Deals each region's indices homogeneously to its devices.
///
/// Region indices are shuffled once and dealt round-robin, so device sizes
/// within a region differ by at most one and each device mirrors the region's
/// label mix in expectation. Device ids are global and region-major.
pub fn to_device_partitions(
    partition: &RegionPartition,
    count: &DeviceCount,
    seed_value: u64,
) -> Result<DeviceAssignment> {
    let k = partition.num_regions();
    let per_region: Vec<usize> = match count {
        DeviceCount::Total(total) => {
            let base = total / k;
            let extra = total % k;
            (0..k).map(|r| base + usize::from(r < extra)).collect()
        }
        DeviceCount::PerRegion(counts) => {
            if counts.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "{} device counts for {} regions",
                    counts.len(),
                    k
                )));
            }
            counts.clone()
        }
    };
    for (r, &m) in per_region.iter().enumerate() {
        if m == 0 {
            return Err(Error::ZeroDevices(r));
        }
        if m > partition.regions[r].len() {
            return Err(Error::TooManyDevices {
                region: r,
                samples: partition.regions[r].len(),
                devices: m,
            });
        }
    }

    let mut rng = seed::rng(seed_value);
    let mut shards = Vec::with_capacity(per_region.iter().sum());
    let mut next_id = 0;
    for (r, &m) in per_region.iter().enumerate() {
        let mut indices = partition.regions[r].clone();
        indices.shuffle(&mut rng);
        let mut device_indices = vec![Vec::with_capacity(indices.len() / m + 1); m];
        for (pos, &i) in indices.iter().enumerate() {
            device_indices[pos % m].push(i);
        }
        for dev in device_indices {
            shards.push(DeviceShard {
                id: next_id,
                region: r,
                indices: dev,
            });
            next_id += 1;
        }
    }
    Ok(DeviceAssignment { shards })
}

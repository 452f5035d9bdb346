//! Experiment configuration and the four subcommand entry points.
//!
//! Settings resolve in three layers: built-in defaults, then an optional
//! `key = value` config file, then command-line flags. The fully resolved
//! configuration is embedded in every report so results are reproducible
//! from their own output.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{fetch_dataset, load_dataset, train_validation_split, DatasetKind};
use crate::error::{Error, Result};
use crate::federation::{run_experiment, Algorithm, Parallelism};
use crate::metrics::{
    read_round_csv, read_summary_csv, render_chart, write_round_csv, write_summary_csv,
    ChartSeries, SummaryRow,
};
use crate::nn::{save_checkpoint, Hyperparams};
use crate::partitioning::{
    partition, skewness_report, to_device_partitions, DeviceCount, PartitionManifest,
    PartitionMatrix, PartitionMethod,
};
use crate::seed;

/// Fully resolved experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    #[serde(flatten)]
    pub method: PartitionMethod,
    pub areas: usize,
    pub devices: usize,
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub split_fraction: f64,
    pub seeds: Vec<u64>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            method: PartitionMethod::Iid,
            areas: 3,
            devices: 50,
            algorithm: Algorithm::FedAvg,
            rounds: 30,
            local_epochs: 2,
            batch_size: 32,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            split_fraction: 0.8,
            seeds: vec![0, 1, 2, 3, 4],
            data_dir: PathBuf::from("./data"),
            out_dir: PathBuf::from("./out"),
        }
    }
}

impl ExperimentConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            ..Hyperparams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".to_string()));
        }
        if self.areas == 0 {
            return Err(Error::BadRegionCount {
                k: 0,
                reason: "at least one region is required".to_string(),
            });
        }
        if self.devices == 0 {
            return Err(Error::Config("at least one device is required".to_string()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::BadFraction(self.split_fraction));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".to_string()));
        }
        let mut seen = HashSet::new();
        for &s in &self.seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("seed {s} appears twice")));
            }
        }
        if let PartitionMethod::Dirichlet { alpha } = self.method {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::BadAlpha(alpha));
            }
        }
        if let Algorithm::FedProx { mu } = self.algorithm {
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(Error::Config(format!(
                    "fedprox mu must be non-negative, got {mu}"
                )));
            }
        }
        Ok(())
    }

    /// Directory name identifying this configuration's outputs.
    pub fn run_dir_name(&self) -> String {
        format!(
            "{}_{}_{}_{}areas",
            self.dataset,
            self.algorithm.name(),
            self.method.name(),
            self.areas
        )
    }
}

/// Partitioning strategy name before parameters are attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodName {
    Iid,
    Dirichlet,
    Hard,
    Custom,
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iid" => Ok(MethodName::Iid),
            "dirichlet" => Ok(MethodName::Dirichlet),
            "hard" => Ok(MethodName::Hard),
            "custom" => Ok(MethodName::Custom),
            _ => Err(Error::Config(format!(
                "unknown partitioning `{s}` (expected iid, dirichlet, hard or custom)"
            ))),
        }
    }
}

/// Algorithm name before parameters are attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgorithmName {
    FedAvg,
    FedProx,
    Scaffold,
}

impl FromStr for AlgorithmName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(AlgorithmName::FedAvg),
            "fedprox" => Ok(AlgorithmName::FedProx),
            "scaffold" => Ok(AlgorithmName::Scaffold),
            _ => Err(Error::Config(format!(
                "unknown algorithm `{s}` (expected fedavg, fedprox or scaffold)"
            ))),
        }
    }
}

/// Settings provided by one source (config file or flags); `None` means
/// "not specified here".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigPatch {
    pub dataset: Option<DatasetKind>,
    pub partitioning: Option<MethodName>,
    pub alpha: Option<f64>,
    pub matrix: Option<PathBuf>,
    pub areas: Option<usize>,
    pub devices: Option<usize>,
    pub algorithm: Option<AlgorithmName>,
    pub mu: Option<f64>,
    pub rounds: Option<usize>,
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub split_fraction: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($dst:ident, $src:ident, $($field:ident),* $(,)?) => {
        $(if $src.$field.is_some() { $dst.$field = $src.$field; })*
    };
}

impl ConfigPatch {
    /// Applies `other` on top of `self`; set fields in `other` win.
    pub fn overlay(&mut self, other: ConfigPatch) {
        overlay_fields!(
            self, other, dataset, partitioning, alpha, matrix, areas, devices, algorithm, mu,
            rounds, local_epochs, batch_size, learning_rate, weight_decay, split_fraction, seeds,
            data_dir, out_dir,
        );
    }
}

/// Parses a comma-separated list of seeds, e.g. `0,1,2,3,4`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{}` is not a seed", part.trim())))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".to_string()));
    }
    Ok(seeds)
}

/// Reads a `key = value` config file.
///
/// Blank lines and lines starting with `#` are skipped. Keys mirror the CLI
/// flag names; an unknown key is a hard error rather than a silent ignore.
pub fn parse_config_file(path: &Path) -> Result<ConfigPatch> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config file {}", path.display()), e))?;
    let mut patch = ConfigPatch::default();
    for (i, raw_line) in body.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |msg: String| Error::Config(format!("{} line {}: {msg}", path.display(), i + 1));
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let usize_value = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| at(format!("`{value}` is not a count")))
        };
        let f64_value = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| at(format!("`{value}` is not a number")))
        };
        match key {
            "dataset" => patch.dataset = Some(value.parse()?),
            "partitioning" => patch.partitioning = Some(value.parse()?),
            "alpha" => patch.alpha = Some(f64_value()?),
            "matrix" => patch.matrix = Some(PathBuf::from(value)),
            "areas" => patch.areas = Some(usize_value()?),
            "devices" => patch.devices = Some(usize_value()?),
            "algorithm" => patch.algorithm = Some(value.parse()?),
            "mu" => patch.mu = Some(f64_value()?),
            "rounds" => patch.rounds = Some(usize_value()?),
            "epochs" => patch.local_epochs = Some(usize_value()?),
            "batch" => patch.batch_size = Some(usize_value()?),
            "lr" => patch.learning_rate = Some(f64_value()?),
            "wd" => patch.weight_decay = Some(f64_value()?),
            "fraction" => patch.split_fraction = Some(f64_value()?),
            "seeds" => patch.seeds = Some(parse_seed_list(value)?),
            "data_dir" => patch.data_dir = Some(PathBuf::from(value)),
            "out_dir" => patch.out_dir = Some(PathBuf::from(value)),
            _ => return Err(at(format!("unknown key `{key}`"))),
        }
    }
    Ok(patch)
}

/// Builds the final configuration from defaults, an optional config file
/// layer and the flag layer, in that precedence order.
///
/// Parameters tied to a strategy (`alpha`, `matrix`, `mu`) are rejected when
/// explicitly given for a different strategy, instead of silently ignored.
pub fn resolve_config(file: Option<ConfigPatch>, flags: ConfigPatch) -> Result<ExperimentConfig> {
    let mut merged = file.unwrap_or_default();
    merged.overlay(flags);

    let partitioning = merged.partitioning.unwrap_or(MethodName::Iid);
    if merged.alpha.is_some() && partitioning != MethodName::Dirichlet {
        return Err(Error::Config(
            "alpha only applies to dirichlet partitioning".to_string(),
        ));
    }
    if merged.matrix.is_some() && partitioning != MethodName::Custom {
        return Err(Error::Config(
            "a partition matrix only applies to custom partitioning".to_string(),
        ));
    }
    let algorithm_name = merged.algorithm.unwrap_or(AlgorithmName::FedAvg);
    if merged.mu.is_some() && algorithm_name != AlgorithmName::FedProx {
        return Err(Error::Config("mu only applies to fedprox".to_string()));
    }

    let method = match partitioning {
        MethodName::Iid => PartitionMethod::Iid,
        MethodName::Dirichlet => PartitionMethod::Dirichlet {
            alpha: merged.alpha.unwrap_or(0.5),
        },
        MethodName::Hard => PartitionMethod::Hard {
            labels_per_region: None,
        },
        MethodName::Custom => {
            let path = merged.matrix.ok_or_else(|| {
                Error::Config("custom partitioning requires a matrix file".to_string())
            })?;
            PartitionMethod::Custom {
                matrix: PartitionMatrix::from_json_file(&path)?,
            }
        }
    };
    let algorithm = match algorithm_name {
        AlgorithmName::FedAvg => Algorithm::FedAvg,
        AlgorithmName::FedProx => Algorithm::FedProx {
            mu: merged.mu.unwrap_or(0.01),
        },
        AlgorithmName::Scaffold => Algorithm::Scaffold,
    };
    let data_dir = merged
        .data_dir
        .or_else(|| std::env::var_os("PROFED_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("./data"));

    let defaults = ExperimentConfig::default();
    let config = ExperimentConfig {
        dataset: merged.dataset.unwrap_or(defaults.dataset),
        method,
        areas: merged.areas.unwrap_or(defaults.areas),
        devices: merged.devices.unwrap_or(defaults.devices),
        algorithm,
        rounds: merged.rounds.unwrap_or(defaults.rounds),
        local_epochs: merged.local_epochs.unwrap_or(defaults.local_epochs),
        batch_size: merged.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: merged.learning_rate.unwrap_or(defaults.learning_rate),
        weight_decay: merged.weight_decay.unwrap_or(defaults.weight_decay),
        split_fraction: merged.split_fraction.unwrap_or(defaults.split_fraction),
        seeds: merged.seeds.unwrap_or(defaults.seeds),
        data_dir,
        out_dir: merged.out_dir.unwrap_or(defaults.out_dir),
    };
    config.validate()?;
    Ok(config)
}

/// `fetch`: download (or verify) the configured dataset.
pub fn cmd_fetch(config: &ExperimentConfig) -> Result<PathBuf> {
    let raw = fetch_dataset(config.dataset, &config.data_dir)?;
    println!("{} ready at {}", config.dataset, raw.display());
    Ok(raw)
}

/// `partition`: partition the training split once (with the first seed) and
/// write the manifest; prints a skewness summary.
pub fn cmd_partition(config: &ExperimentConfig) -> Result<PathBuf> {
    let (train_full, _) = load_dataset(config.dataset, &config.data_dir)?;
    let seed0 = config.seeds[0];
    let split = train_validation_split(
        &train_full,
        config.split_fraction,
        seed::mix(seed0, seed::tag::SPLIT),
    )?;
    let region = partition(
        &split.training,
        &config.method,
        config.areas,
        seed::mix(seed0, seed::tag::PARTITION),
    )?;
    let devices = to_device_partitions(
        &region,
        &DeviceCount::Total(config.devices),
        seed::mix(seed0, seed::tag::DEVICES),
    )?;
    let skew = skewness_report(&split.training, &region, Some(&devices))?;

    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(format!("creating {}", config.out_dir.display()), e))?;
    let path = config.out_dir.join(format!(
        "{}_{}_{}areas_partition.json",
        config.dataset,
        config.method.name(),
        config.areas
    ));
    let manifest = PartitionManifest {
        dataset: config.dataset.name().to_string(),
        method: config.method.clone(),
        seed: seed0,
        split_fraction: config.split_fraction,
        regions: region.regions.clone(),
        devices: devices.shards.clone(),
    };
    manifest.save(&path)?;

    println!("partition manifest: {}", path.display());
    println!(
        "regions: {}, devices: {}, training samples: {}",
        region.num_regions(),
        devices.num_devices(),
        split.training.len()
    );
    println!("mean inter-region TV distance: {:.6}", skew.mean_inter_region);
    println!("pairwise TV distances:");
    for (i, row) in skew.pairwise.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|d| format!("{d:.6}")).collect();
        println!("  region {i}: {}", cells.join(" "));
    }
    if let Some(d) = skew.max_intra_device {
        println!("max intra-device TV distance: {d:.6}");
    }
    Ok(path)
}

/// `run`: execute the experiment and write round CSVs, checkpoints, the
/// summary CSV and the full JSON report into one run directory.
pub fn cmd_run(config: &ExperimentConfig, parallelism: Parallelism) -> Result<PathBuf> {
    let outcome = run_experiment(config, parallelism)?;
    let run_dir = config.out_dir.join(config.run_dir_name());
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| Error::io(format!("creating {}", run_dir.display()), e))?;
    for (seed_run, model) in outcome.report.seed_runs.iter().zip(&outcome.final_models) {
        write_round_csv(
            &seed_run.rounds,
            &run_dir.join(format!("seed{}_rounds.csv", seed_run.seed)),
        )?;
        save_checkpoint(model, &run_dir.join(format!("seed{}_model.bin", seed_run.seed)))?;
    }
    write_summary_csv(
        &[SummaryRow::from_report(&outcome.report)],
        &run_dir.join("summary.csv"),
    )?;
    outcome.report.save(&run_dir.join("report.json"))?;
    println!("run directory: {}", run_dir.display());
    println!(
        "test accuracy mean {:.6} std {:.6} over {} seeds",
        outcome.report.test_acc_mean,
        outcome.report.test_acc_std,
        outcome.report.seed_runs.len()
    );
    Ok(run_dir)
}

fn seed_csvs_sorted(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name
            .strip_prefix("seed")
            .and_then(|r| r.strip_suffix("_rounds.csv"))
        {
            if let Ok(n) = stem.parse::<u64>() {
                found.push((n, entry.path()));
            }
        }
    }
    found.sort_by_key(|&(n, _)| n);
    Ok(found)
}

/// `report`: merge run summaries into one CSV and render one accuracy chart
/// per run directory.
pub fn cmd_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::Config(
            "report needs at least one run directory".to_string(),
        ));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for dir in run_dirs {
        for row in read_summary_csv(&dir.join("summary.csv"))? {
            if !seen.insert(row.key()) {
                return Err(Error::DuplicateRow(row.key()));
            }
            rows.push(row);
        }
        let mut series = Vec::new();
        for (n, csv) in seed_csvs_sorted(dir)? {
            let records = read_round_csv(&csv)?;
            series.push(ChartSeries {
                label: format!("seed {n}"),
                points: records.iter().map(|r| (r.round, r.val_accuracy)).collect(),
            });
        }
        if !series.is_empty() {
            let name = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            let chart = out_dir.join(format!("{name}.svg"));
            render_chart(&name, &series, &chart)?;
            println!("chart: {}", chart.display());
        }
    }
    let summary = out_dir.join("summary.csv");
    write_summary_csv(&rows, &summary)?;
    println!("summary: {}", summary.display());
    Ok(())
}

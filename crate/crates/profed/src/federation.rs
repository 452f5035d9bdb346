//! Federated training: local ADAM updates plus FedAvg, FedProx and Scaffold.
//!
//! One round trains every device from the current global model on its own
//! shard, then aggregates by sample-count-weighted averaging. FedProx adds a
//! proximal pull toward the global model to each local gradient; Scaffold
//! corrects each gradient with control variates and keeps per-device and
//! global controls in the federation state.
//!
//! Reductions always run in ascending device id order so sequential and
//! parallel execution produce bit-identical results.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::ExperimentConfig;
use crate::datasets::{train_validation_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_seeds, ExperimentReport, RoundRecord, SeedRun};
use crate::nn::{
    adam_step, evaluate, init_mlp, loss_and_grad_into, AdamState, Hyperparams, ModelParams,
};
use crate::partitioning::{
    partition, skewness_report, to_device_partitions, DeviceCount, DeviceShard,
};
use crate::seed;

/// Hidden layer width of the experiment model.
pub const HIDDEN_DIM: usize = 128;

/// Aggregation algorithm. FedProx carries its proximal coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedProx { mu: f64 },
    Scaffold,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx { .. } => "fedprox",
            Algorithm::Scaffold => "scaffold",
        }
    }

    pub fn is_scaffold(&self) -> bool {
        matches!(self, Algorithm::Scaffold)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Server-side state carried across rounds.
///
/// Control vectors are empty unless the algorithm is Scaffold.
#[derive(Clone, Debug, PartialEq)]
pub struct FederationState {
    pub global: ModelParams,
    pub round: u64,
    pub c_global: Vec<f64>,
    pub c_local: Vec<Vec<f64>>,
}

impl FederationState {
    pub fn new(global: ModelParams, num_devices: usize, algorithm: &Algorithm) -> Self {
        let (c_global, c_local) = if algorithm.is_scaffold() {
            (vec![0.0; global.len()], vec![vec![0.0; global.len()]; num_devices])
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            global,
            round: 0,
            c_global,
            c_local,
        }
    }
}

/// What one device sends back after local training.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub device_id: usize,
    pub params: ModelParams,
    pub num_samples: usize,
    /// Change to this device's control variate; empty unless Scaffold.
    pub delta_c: Vec<f64>,
    pub mean_train_loss: f64,
}

/// Whether devices inside a round train on the rayon pool or one by one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Parallel,
}

/// Adds the FedProx proximal gradient `mu * (local - global)` in place.
pub fn fedprox_gradient(
    grad: &mut [f64],
    local: &ModelParams,
    global: &ModelParams,
    mu: f64,
) -> Result<()> {
    if local.len() != grad.len() || global.len() != grad.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient of {} with models of {} and {}",
            grad.len(),
            local.len(),
            global.len()
        )));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::Config(format!(
            "fedprox mu must be non-negative, got {mu}"
        )));
    }
    for (g, (&l, &w)) in grad.iter_mut().zip(local.values().iter().zip(global.values())) {
        *g += mu * (l - w);
    }
    Ok(())
}

/// Applies the Scaffold correction `c_global - c_local` to a gradient.
pub fn scaffold_correct(grad: &mut [f64], c_global: &[f64], c_local: &[f64]) -> Result<()> {
    for c in [c_global, c_local] {
        if c.len() != grad.len() {
            return Err(Error::ControlVariateLength {
                got: c.len(),
                expected: grad.len(),
            });
        }
    }
    for (g, (&cg, &cl)) in grad.iter_mut().zip(c_global.iter().zip(c_local)) {
        *g += cg - cl;
    }
    Ok(())
}

/// Scaffold control update after `steps` local steps of size `lr`:
/// `c_new = c_local - c_global + (global - local) / (steps * lr)`.
///
/// Returns `(c_new, delta)` with `delta = c_new - c_local`, computed so that
/// adding `delta` to the stored control reproduces `c_new` bit for bit.
pub fn scaffold_update_control(
    c_local: &[f64],
    c_global: &[f64],
    global: &ModelParams,
    local: &ModelParams,
    steps: u64,
    lr: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = global.len();
    for (got, expected) in [
        (c_local.len(), len),
        (c_global.len(), len),
        (local.len(), len),
    ] {
        if got != expected {
            return Err(Error::ControlVariateLength { got, expected });
        }
    }
    if steps == 0 {
        return Err(Error::Config(
            "scaffold control update needs at least one local step".to_string(),
        ));
    }
    let scale = 1.0 / (steps as f64 * lr);
    let mut c_new = vec![0.0; len];
    let mut delta = vec![0.0; len];
    for i in 0..len {
        let d = -c_global[i] + (global.values()[i] - local.values()[i]) * scale;
        delta[i] = d;
        c_new[i] = c_local[i] + d;
    }
    Ok((c_new, delta))
}

/// Trains one device from the global model over its shard.
///
/// The device draws its own RNG stream from `stream_seed` for batch order,
/// starts from a fresh ADAM state and returns its full parameter vector.
/// `c_global`/`c_local` are only read for Scaffold and may be empty otherwise.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    global: &ModelParams,
    dataset: &LabeledDataset,
    shard: &DeviceShard,
    hyper: &Hyperparams,
    algorithm: &Algorithm,
    c_global: &[f64],
    c_local: &[f64],
    stream_seed: u64,
) -> Result<LocalUpdate> {
    hyper.validate()?;
    let n = shard.indices.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = shard.indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::DimensionMismatch(format!(
            "device {} holds index {bad} beyond the {} dataset samples",
            shard.id,
            dataset.len()
        )));
    }
    if algorithm.is_scaffold() {
        for c in [c_global, c_local] {
            if c.len() != global.len() {
                return Err(Error::ControlVariateLength {
                    got: c.len(),
                    expected: global.len(),
                });
            }
        }
    }

    let mut params = global.clone();
    let mut adam = AdamState::new(global.len());
    let mut grad = vec![0.0; global.len()];
    let mut rng = seed::rng(stream_seed);
    let mut order = shard.indices.clone();
    let features = dataset.features();
    let labels = dataset.labels();
    let buf_rows = hyper.batch_size.min(n);
    let mut xbuf = Array2::<f64>::zeros((buf_rows, dataset.feature_dim()));
    let mut ybuf = vec![0usize; buf_rows];

    let mut steps = 0u64;
    let mut loss_sum = 0.0;
    for _ in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let blen = chunk.len();
            for (row, &i) in chunk.iter().enumerate() {
                xbuf.row_mut(row).assign(&features.row(i));
                ybuf[row] = labels[i];
            }
            let loss = loss_and_grad_into(
                &params,
                xbuf.slice(s![..blen, ..]),
                &ybuf[..blen],
                hyper.weight_decay,
                &mut grad,
            )?;
            match algorithm {
                Algorithm::FedAvg => {}
                Algorithm::FedProx { mu } => fedprox_gradient(&mut grad, &params, global, *mu)?,
                Algorithm::Scaffold => scaffold_correct(&mut grad, c_global, c_local)?,
            }
            adam_step(&mut params, &mut adam, &grad, hyper)?;
            steps += 1;
            loss_sum += loss;
        }
    }

    let delta_c = if algorithm.is_scaffold() {
        let (_, delta) =
            scaffold_update_control(c_local, c_global, global, &params, steps, hyper.learning_rate)?;
        delta
    } else {
        Vec::new()
    };
    Ok(LocalUpdate {
        device_id: shard.id,
        params,
        num_samples: n,
        delta_c,
        mean_train_loss: loss_sum / steps as f64,
    })
}

/// Folds local updates into the federation state.
///
/// The new global model is the sample-count-weighted mean of device models,
/// summed in ascending device id order. For Scaffold, each device's control
/// delta is applied and the global control becomes the plain mean of all
/// device controls, again in ascending id order.
pub fn aggregate(
    state: &mut FederationState,
    updates: &[LocalUpdate],
    algorithm: &Algorithm,
) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::NoUpdates);
    }
    let len = state.global.len();
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].device_id);
    for pair in order.windows(2) {
        if updates[pair[0]].device_id == updates[pair[1]].device_id {
            return Err(Error::DimensionMismatch(format!(
                "duplicate update from device {}",
                updates[pair[0]].device_id
            )));
        }
    }
    let total: usize = updates.iter().map(|u| u.num_samples).sum();
    if total == 0 {
        return Err(Error::NoUpdates);
    }

    let mut acc = vec![0.0; len];
    for &i in &order {
        let u = &updates[i];
        if u.params.shape() != state.global.shape() {
            return Err(Error::DimensionMismatch(format!(
                "device {} sent shape {:?}, expected {:?}",
                u.device_id,
                u.params.shape(),
                state.global.shape()
            )));
        }
        let w = u.num_samples as f64 / total as f64;
        for (a, &p) in acc.iter_mut().zip(u.params.values()) {
            *a += w * p;
        }
    }
    state.global = ModelParams::new(state.global.shape(), acc)?;

    if algorithm.is_scaffold() {
        for &i in &order {
            let u = &updates[i];
            if u.delta_c.len() != len {
                return Err(Error::ControlVariateLength {
                    got: u.delta_c.len(),
                    expected: len,
                });
            }
            let registered = state.c_local.len();
            let c = state.c_local.get_mut(u.device_id).ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "device id {} outside the {registered} registered devices",
                    u.device_id
                ))
            })?;
            for (ci, &d) in c.iter_mut().zip(&u.delta_c) {
                *ci += d;
            }
        }
        let m = state.c_local.len() as f64;
        let mut c_global = vec![0.0; len];
        for c in &state.c_local {
            for (g, &v) in c_global.iter_mut().zip(c) {
                *g += v;
            }
        }
        for g in &mut c_global {
            *g /= m;
        }
        state.c_global = c_global;
    }
    state.round += 1;
    Ok(())
}

/// Runs one full round over every device and aggregates.
///
/// Returns per-device mean training losses in ascending device id order.
/// Sequential and parallel execution are bit-identical because device RNG
/// streams depend only on `(experiment_seed, round, device id)` and the
/// aggregation order is fixed.
pub fn run_round(
    state: &mut FederationState,
    dataset: &LabeledDataset,
    shards: &[DeviceShard],
    hyper: &Hyperparams,
    algorithm: &Algorithm,
    experiment_seed: u64,
    parallelism: Parallelism,
) -> Result<Vec<f64>> {
    if algorithm.is_scaffold() && state.c_local.len() != shards.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} control vectors for {} devices",
            state.c_local.len(),
            shards.len()
        )));
    }
    let updates: Vec<LocalUpdate> = {
        let global = &state.global;
        let c_global = state.c_global.as_slice();
        let c_local = state.c_local.as_slice();
        let round = state.round;
        let train_one = |shard: &DeviceShard| -> Result<LocalUpdate> {
            let local_c: &[f64] = if algorithm.is_scaffold() {
                &c_local[shard.id]
            } else {
                &[]
            };
            local_train(
                global,
                dataset,
                shard,
                hyper,
                algorithm,
                c_global,
                local_c,
                seed::device_stream(experiment_seed, round, shard.id as u64),
            )
        };
        match parallelism {
            Parallelism::Sequential => shards.iter().map(train_one).collect::<Result<_>>()?,
            Parallelism::Parallel => shards.par_iter().map(train_one).collect::<Result<_>>()?,
        }
    };
    let mut losses: Vec<(usize, f64)> = updates
        .iter()
        .map(|u| (u.device_id, u.mean_train_loss))
        .collect();
    losses.sort_by_key(|&(id, _)| id);
    aggregate(state, &updates, algorithm)?;
    Ok(losses.into_iter().map(|(_, l)| l).collect())
}

/// Everything a finished experiment produces: the report plus one final
/// model per seed (kept out of the report so it stays small enough to echo).
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub final_models: Vec<ModelParams>,
}

/// Runs the configured experiment against preloaded training and test splits.
///
/// Per seed: split train/validation, partition regions, deal devices, train
/// `rounds` rounds and evaluate. All seeds use the same data but freshly
/// derived RNG streams, so two calls with the same inputs agree exactly.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    train_full: &LabeledDataset,
    test: &LabeledDataset,
    parallelism: Parallelism,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let hyper = config.hyperparams();
    let mut seed_runs = Vec::with_capacity(config.seeds.len());
    let mut final_models = Vec::with_capacity(config.seeds.len());
    for &s in &config.seeds {
        let split =
            train_validation_split(train_full, config.split_fraction, seed::mix(s, seed::tag::SPLIT))?;
        let region = partition(
            &split.training,
            &config.method,
            config.areas,
            seed::mix(s, seed::tag::PARTITION),
        )?;
        let devices = to_device_partitions(
            &region,
            &DeviceCount::Total(config.devices),
            seed::mix(s, seed::tag::DEVICES),
        )?;
        let skewness = skewness_report(&split.training, &region, Some(&devices))?;
        let model = init_mlp(
            train_full.feature_dim(),
            HIDDEN_DIM,
            train_full.num_classes(),
            seed::mix(s, seed::tag::INIT),
        )?;
        let mut state = FederationState::new(model, devices.num_devices(), &config.algorithm);
        let mut rounds = Vec::with_capacity(config.rounds);
        for _ in 0..config.rounds {
            let losses = run_round(
                &mut state,
                &split.training,
                &devices.shards,
                &hyper,
                &config.algorithm,
                s,
                parallelism,
            )?;
            let (val_accuracy, val_loss) = evaluate(&state.global, &split.validation)?;
            rounds.push(RoundRecord {
                round: state.round,
                val_accuracy,
                val_loss,
                mean_train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            });
        }
        let (final_test_accuracy, final_test_loss) = evaluate(&state.global, test)?;
        seed_runs.push(SeedRun {
            seed: s,
            rounds,
            final_test_accuracy,
            final_test_loss,
            skewness,
        });
        final_models.push(state.global);
    }
    let finals: Vec<f64> = seed_runs.iter().map(|r| r.final_test_accuracy).collect();
    let (test_acc_mean, test_acc_std) = aggregate_seeds(&finals)?;
    Ok(ExperimentOutcome {
        report: ExperimentReport {
            config: config.clone(),
            seed_runs,
            test_acc_mean,
            test_acc_std,
        },
        final_models,
    })
}

/// Loads the configured dataset from disk and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig, parallelism: Parallelism) -> Result<ExperimentOutcome> {
    let (train_full, test) = crate::datasets::load_dataset(config.dataset, &config.data_dir)?;
    run_experiment_on(config, &train_full, &test, parallelism)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat(shape: (usize, usize, usize), value: f64) -> ModelParams {
        ModelParams::new(shape, vec![value; crate::nn::param_count(shape)]).unwrap()
    }

    fn update(id: usize, n: usize, value: f64) -> LocalUpdate {
        LocalUpdate {
            device_id: id,
            params: flat((1, 1, 1), value),
            num_samples: n,
            delta_c: Vec::new(),
            mean_train_loss: 0.0,
        }
    }

    #[test]
    fn aggregate_weights_by_sample_count() {
        let mut state = FederationState::new(flat((1, 1, 1), 0.0), 2, &Algorithm::FedAvg);
        let updates = vec![update(0, 10, 0.0), update(1, 30, 2.0)];
        aggregate(&mut state, &updates, &Algorithm::FedAvg).unwrap();
        for &v in state.global.values() {
            assert_abs_diff_eq!(v, 1.5, epsilon = 1e-15);
        }
        assert_eq!(state.round, 1);
    }

    #[test]
    fn aggregate_is_input_order_independent() {
        let updates = vec![update(2, 7, 0.25), update(0, 5, -1.0), update(1, 11, 3.0)];
        let mut forward = FederationState::new(flat((1, 1, 1), 0.0), 3, &Algorithm::FedAvg);
        aggregate(&mut forward, &updates, &Algorithm::FedAvg).unwrap();
        let mut reversed: Vec<LocalUpdate> = updates.clone();
        reversed.reverse();
        let mut backward = FederationState::new(flat((1, 1, 1), 0.0), 3, &Algorithm::FedAvg);
        aggregate(&mut backward, &reversed, &Algorithm::FedAvg).unwrap();
        assert_eq!(forward.global.values(), backward.global.values());
    }

    #[test]
    fn aggregate_rejects_bad_inputs() {
        let mut state = FederationState::new(flat((1, 1, 1), 0.0), 2, &Algorithm::FedAvg);
        assert!(matches!(
            aggregate(&mut state, &[], &Algorithm::FedAvg),
            Err(Error::NoUpdates)
        ));
        let dup = vec![update(0, 1, 0.0), update(0, 1, 1.0)];
        assert!(matches!(
            aggregate(&mut state, &dup, &Algorithm::FedAvg),
            Err(Error::DimensionMismatch(_))
        ));
        let wrong_shape = vec![LocalUpdate {
            device_id: 0,
            params: flat((1, 2, 1), 0.0),
            num_samples: 1,
            delta_c: Vec::new(),
            mean_train_loss: 0.0,
        }];
        assert!(matches!(
            aggregate(&mut state, &wrong_shape, &Algorithm::FedAvg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn fedprox_pulls_toward_global() {
        let local = flat((1, 1, 1), 3.0);
        let global = flat((1, 1, 1), 1.0);
        let mut grad = vec![0.0; 4];
        fedprox_gradient(&mut grad, &local, &global, 0.01).unwrap();
        for &g in &grad {
            assert_abs_diff_eq!(g, 0.02, epsilon = 1e-15);
        }
        assert!(fedprox_gradient(&mut grad, &local, &global, -1.0).is_err());
    }

    #[test]
    fn scaffold_correction_applies_control_difference() {
        let mut grad = vec![1.0, 1.0];
        scaffold_correct(&mut grad, &[0.5, 0.0], &[0.0, 0.25]).unwrap();
        assert_eq!(grad, vec![1.5, 0.75]);
        assert!(matches!(
            scaffold_correct(&mut grad, &[0.0], &[0.0, 0.0]),
            Err(Error::ControlVariateLength { got: 1, expected: 2 })
        ));
    }

    #[test]
    fn scaffold_control_update_formula() {
        let global = flat((1, 1, 1), 1.0);
        let local = flat((1, 1, 1), 0.9);
        // steps=10, lr=0.01: (1 - 0.9) / (10 * 0.01) = 1, minus c_global 0.3.
        let (c_new, delta) = scaffold_update_control(
            &[0.2; 4],
            &[0.3; 4],
            &global,
            &local,
            10,
            0.01,
        )
        .unwrap();
        for (&c, &d) in c_new.iter().zip(&delta) {
            assert_abs_diff_eq!(d, 0.7, epsilon = 1e-12);
            assert_abs_diff_eq!(c, 0.9, epsilon = 1e-12);
        }
        assert!(scaffold_update_control(&[0.0; 4], &[0.0; 4], &global, &local, 0, 0.01).is_err());
    }

    #[test]
    fn scaffold_state_allocates_controls() {
        let state = FederationState::new(flat((1, 1, 1), 0.0), 3, &Algorithm::Scaffold);
        assert_eq!(state.c_global.len(), 4);
        assert_eq!(state.c_local.len(), 3);
        assert!(state.c_local.iter().all(|c| c.iter().all(|&v| v == 0.0)));
        let plain = FederationState::new(flat((1, 1, 1), 0.0), 3, &Algorithm::FedAvg);
        assert!(plain.c_global.is_empty() && plain.c_local.is_empty());
    }

    /// Two labels with separated feature means, so gradients are nonzero and
    /// batch order genuinely influences the trajectory.
    fn trainable_dataset() -> LabeledDataset {
        let features = ndarray::Array2::from_shape_fn((12, 4), |(s, d)| {
            let peak = if d == s % 2 { 0.8 } else { 0.1 };
            peak + 0.1 * (s as f64) / 12.0
        });
        let labels = (0..12).map(|s| s % 2).collect();
        LabeledDataset::new("toy", features, labels, 2).unwrap()
    }

    #[test]
    fn local_train_is_stream_deterministic() {
        let dataset = trainable_dataset();
        let shard = DeviceShard {
            id: 0,
            region: 0,
            indices: (0..12).collect(),
        };
        let global = init_mlp(4, 3, 2, 7).unwrap();
        let hyper = Hyperparams {
            batch_size: 4,
            local_epochs: 1,
            ..Hyperparams::default()
        };
        let a = local_train(&global, &dataset, &shard, &hyper, &Algorithm::FedAvg, &[], &[], 5)
            .unwrap();
        let b = local_train(&global, &dataset, &shard, &hyper, &Algorithm::FedAvg, &[], &[], 5)
            .unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.mean_train_loss, b.mean_train_loss);
        assert_eq!(a.num_samples, 12);
        let c = local_train(&global, &dataset, &shard, &hyper, &Algorithm::FedAvg, &[], &[], 6)
            .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn algorithm_serialization_names() {
        assert_eq!(
            serde_json::to_string(&Algorithm::FedProx { mu: 0.01 }).unwrap(),
            r#"{"name":"fedprox","mu":0.01}"#
        );
        assert_eq!(
            serde_json::to_string(&Algorithm::FedAvg).unwrap(),
            r#"{"name":"fedavg"}"#
        );
        let back: Algorithm = serde_json::from_str(r#"{"name":"scaffold"}"#).unwrap();
        assert_eq!(back, Algorithm::Scaffold);
    }
}

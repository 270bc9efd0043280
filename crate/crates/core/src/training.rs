//! Minibatch gradient descent with per-epoch validation and best-epoch
//! model selection.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FeatureVector;
use crate::exec::Execution;
use crate::network::{
    cross_entropy, forward, Dropout, Gradients, InstanceGradient, Matrix, ModelFileError,
    ModelMetadata, NetworkError, NetworkModel,
};

/// Random stream tags, so that initialization, shuffling and dropout never
/// share generator state.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("divergence detected at epoch {epoch}: {source}")]
    Divergence {
        epoch: usize,
        #[source]
        source: NetworkError,
        /// Best model saved before the failure, if any epoch completed.
        last_good: Option<Box<NetworkModel>>,
        reports: Vec<EpochReport>,
    },
    #[error("snapshot {path}: {source}")]
    Snapshot {
        path: PathBuf,
        #[source]
        source: ModelFileError,
    },
}

/// A featurized sentence pair: source indicators and target-presence labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: FeatureVector,
    pub target: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// `usize::MAX` gives one full-batch update per epoch.
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    /// Drop probability for the last hidden layer; 0 disables dropout.
    pub dropout: f64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    /// Weights start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub execution: Execution,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.02,
            batch_size: 15,
            epochs: 35,
            l2: 1e-5,
            dropout: 0.0,
            seed: 1,
            hidden_dims: vec![1000, 500, 1000],
            init_scale: 0.05,
            execution: Execution::Sequential,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail(format!("l2 must be >= 0, got {}", self.l2));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return fail(format!("init scale must be > 0, got {}", self.init_scale));
        }
        if self.hidden_dims.contains(&0) {
            return fail("hidden layer sizes must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean cross-entropy of the training instances as seen during the epoch.
    pub train_e: f64,
    pub valid_e: f64,
    pub wall_time: f64,
}

impl EpochReport {
    /// `epoch<TAB>train_E<TAB>valid_E<TAB>seconds`
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.3}",
            self.epoch, self.train_e, self.valid_e, self.wall_time
        )
    }
}

/// Uniform `[-init_scale, init_scale]` weights from a ChaCha generator seeded
/// with `seed`; no biases.
pub fn init_model(
    input_dim: usize,
    hidden_dims: &[usize],
    output_dim: usize,
    seed: u64,
    init_scale: f64,
) -> Result<NetworkModel, NetworkError> {
    let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden_dims);
    dims.push(output_dim);
    if dims.contains(&0) {
        return Err(NetworkError::InvalidShape(format!("zero-sized layer in {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Matrix> = dims
        .windows(2)
        .map(|d| Matrix::from_fn(d[0], d[1], |_, _| rng.gen_range(-init_scale..=init_scale)))
        .collect();
    let biases = vec![None; weights.len()];
    NetworkModel::new(
        weights,
        biases,
        ModelMetadata {
            seed,
            ..Default::default()
        },
    )
}

/// Mean cross-entropy over `pairs`, dropout disabled. Per-pair losses are
/// summed in index order.
pub fn evaluate(model: &NetworkModel, pairs: &[Example], exec: Execution) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let losses = exec.map(pairs, |_, ex| -> Result<f64, NetworkError> {
        let acts = forward(model, &ex.source, None)?;
        cross_entropy(acts.output(), &ex.target)
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean loss and mean gradient over `batch`, accumulated in batch order,
/// without dropout. This is the update direction of one minibatch step.
pub fn mean_gradient(
    model: &NetworkModel,
    batch: &[Example],
    exec: Execution,
) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptySet("batch"));
    }
    check_dims(batch, model)?;
    let results = exec.map(batch, |_, ex| {
        let acts = forward(model, &ex.source, None)?;
        let loss = cross_entropy(acts.output(), &ex.target)?;
        Ok::<_, NetworkError>((loss, InstanceGradient::compute(model, acts, &ex.target)?))
    });
    let mut loss_sum = 0.0;
    let mut insts = Vec::with_capacity(batch.len());
    for r in results {
        let (loss, inst) = r?;
        loss_sum += loss;
        insts.push(inst);
    }
    let mut grad = Gradients::zeros_like(model);
    grad.accumulate(&insts, exec);
    grad.scale(1.0 / insts.len() as f64, exec);
    Ok((loss_sum / batch.len() as f64, grad))
}

/// Where improving epoch snapshots are kept.
#[derive(Debug, Clone, Default)]
pub enum SnapshotStore {
    #[default]
    Memory,
    /// One `epoch-NNN.model` file per improving epoch.
    Directory(PathBuf),
}

pub struct TrainOutcome {
    pub model: NetworkModel,
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
}

/// Generator for the dropout mask of one training instance, independent of
/// how instances are scheduled across threads.
fn dropout_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&STREAM_DROPOUT.to_le_bytes());
    key[16..24].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[24..].copy_from_slice(&(position as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn check_dims(set: &[Example], model: &NetworkModel) -> Result<(), TrainError> {
    for ex in set {
        for (what, got, want) in [
            ("source features", ex.source.dim(), model.input_dim()),
            ("target labels", ex.target.dim(), model.output_dim()),
        ] {
            if got != want {
                return Err(NetworkError::DimensionMismatch {
                    what,
                    expected: want,
                    actual: got,
                }
                .into());
            }
        }
    }
    Ok(())
}

/// Trains a freshly initialized network (see [`init_model`]).
pub fn train(
    train_set: &[Example],
    valid_set: &[Example],
    config: &TrainingConfig,
    snapshots: &SnapshotStore,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let first = train_set.first().ok_or(TrainError::EmptySet("training"))?;
    let model = init_model(
        first.source.dim(),
        &config.hidden_dims,
        first.target.dim(),
        config.seed,
        config.init_scale,
    )?;
    train_from(model, train_set, valid_set, config, snapshots, on_epoch)
}

/// Trains starting from `model`.
///
/// Each epoch shuffles the training set, applies one mean-gradient update per
/// minibatch and then measures validation cross-entropy. The returned model
/// is the snapshot with the lowest validation error (earliest on ties).
pub fn train_from(
    mut model: NetworkModel,
    train_set: &[Example],
    valid_set: &[Example],
    config: &TrainingConfig,
    snapshots: &SnapshotStore,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if valid_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    check_dims(train_set, &model)?;
    check_dims(valid_set, &model)?;

    let exec = config.execution;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = Gradients::zeros_like(&model);
    let mut reports: Vec<EpochReport> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Snapshot)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size.min(train_set.len())).enumerate() {
            let base = b * config.batch_size.min(train_set.len());
            let model_ref = &model;
            let results = exec.map(batch, |pos, &idx| {
                let ex = &train_set[idx];
                let mut rng = dropout_rng(config.seed, epoch, base + pos);
                let dropout = (config.dropout > 0.0).then_some(Dropout {
                    p: config.dropout,
                    rng: &mut rng,
                });
                let acts = forward(model_ref, &ex.source, dropout)?;
                let loss = cross_entropy(acts.output(), &ex.target)?;
                Ok::<_, NetworkError>((loss, InstanceGradient::compute(model_ref, acts, &ex.target)?))
            });
            let mut insts = Vec::with_capacity(results.len());
            for r in results {
                let (loss, inst) = r?;
                loss_sum += loss;
                insts.push(inst);
            }
            grad.reset();
            grad.accumulate(&insts, exec);
            grad.scale(1.0 / insts.len() as f64, exec);
            if let Err(source) = model.apply_update(&grad, config.learning_rate, config.l2, exec) {
                return Err(TrainError::Divergence {
                    epoch,
                    source,
                    last_good: best.map(|(_, _, s)| s.load()).transpose()?.map(Box::new),
                    reports,
                });
            }
        }
        let train_e = loss_sum / train_set.len() as f64;
        let valid_e = evaluate(&model, valid_set, exec)?;
        if !train_e.is_finite() || !valid_e.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                source: NetworkError::Divergence { layer: model.depth() },
                last_good: best.map(|(_, _, s)| s.load()).transpose()?.map(Box::new),
                reports,
            });
        }
        let report = EpochReport {
            epoch,
            train_e,
            valid_e,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!("{}", report.to_line());
        on_epoch(&report);
        reports.push(report);

        if best.as_ref().is_none_or(|(_, e, _)| valid_e < *e) {
            best = Some((epoch, valid_e, Snapshot::save(snapshots, epoch, &model)?));
        }
    }

    let (best_epoch, _, snapshot) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: snapshot.load()?,
        reports,
        best_epoch,
    })
}

enum Snapshot {
    Memory(Box<NetworkModel>),
    File(PathBuf),
}

impl Snapshot {
    fn save(store: &SnapshotStore, epoch: usize, model: &NetworkModel) -> Result<Self, TrainError> {
        match store {
            SnapshotStore::Memory => Ok(Snapshot::Memory(Box::new(model.clone()))),
            SnapshotStore::Directory(dir) => {
                let path = dir.join(format!("epoch-{epoch:03}.model"));
                model.save(&path).map_err(|source| TrainError::Snapshot {
                    path: path.clone(),
                    source,
                })?;
                Ok(Snapshot::File(path))
            }
        }
    }

    fn load(self) -> Result<NetworkModel, TrainError> {
        match self {
            Snapshot::Memory(m) => Ok(*m),
            Snapshot::File(path) => {
                NetworkModel::load(&path).map_err(|source| TrainError::Snapshot { path, source })
            }
        }
    }
}

//! Minibatch training loop: seeded shuffling, Adam steps, per-epoch train and
//! validation losses.

use std::io::Write;
use std::time::Instant;

use rand::Rng;

use super::{
    adam_step, apply_batch_stats, loss_and_gradients_into, predict, AdamState, NetworkParameters,
    Workspace,
};
use crate::datagen::{Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::stream_rng;

/// Optimiser and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainingConfig {
    /// Conventional Adam moments; only the schedule varies between runs.
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainingConfig {
            epochs,
            batch_size,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed,
            shuffle: true,
        }
    }

    fn validate(&self, train_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 || self.batch_size > train_len {
            return Err(Error::InvalidConfig(format!(
                "batch size must lie in 2..={train_len}, got {}",
                self.batch_size
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-epoch losses; `seconds` is wall-clock and therefore the one field that
/// varies between otherwise identical runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub threads: usize,
}

impl TrainingLog {
    pub fn final_val_mse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_mse)
    }
}

/// Feature/label matrices ready for the network: one row per record,
/// features are counts rescaled by the resource budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Mat,
    pub labels: Mat,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let rows = dataset.records.len();
        let feature_width = dataset.meta.num_sites;
        let label_width = dataset.meta.neighbour_order;
        let mut features = Mat::zeros(rows, feature_width);
        let mut labels = Mat::zeros(rows, label_width);
        for (r, record) in dataset.records.iter().enumerate() {
            let m = record.resources as f64;
            for (j, &c) in record.counts.iter().enumerate() {
                features[(r, j)] = c / m;
            }
            labels.row_mut(r).copy_from_slice(&record.couplings);
        }
        TrainingSet { features, labels }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of a training run: either the final parameters with the full log,
/// or the log up to the batch where the loss stopped being finite.
#[derive(Debug)]
pub enum TrainOutcome {
    Completed {
        params: NetworkParameters,
        log: TrainingLog,
    },
    Aborted {
        epoch: usize,
        batch: usize,
        log: TrainingLog,
    },
}

impl TrainOutcome {
    /// Unwraps the completed case or converts the abort into an error.
    pub fn into_completed(self) -> Result<(NetworkParameters, TrainingLog)> {
        match self {
            TrainOutcome::Completed { params, log } => Ok((params, log)),
            TrainOutcome::Aborted { epoch, batch, .. } => {
                Err(Error::NonFiniteLoss { epoch, batch })
            }
        }
    }
}

/// The shuffling order used for one epoch: Fisher–Yates driven by a stream
/// derived from `(seed, epoch)`.
pub fn epoch_permutation(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = stream_rng(seed, "shuffle", epoch as u64);
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Trains on a split dataset; see [`train_on_sets`].
pub fn train(
    params: NetworkParameters,
    split: &SplitDataset,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    let train_set = TrainingSet::from_dataset(&split.train);
    let validation_set = TrainingSet::from_dataset(&split.validation);
    train_on_sets(params, &train_set, &validation_set, config)
}

/// Runs `epochs` passes of shuffled minibatch Adam over the training set,
/// logging the training loss and the infer-mode validation loss per epoch.
/// There is no early stopping; the schedule is fixed.
pub fn train_on_sets(
    mut params: NetworkParameters,
    train_set: &TrainingSet,
    validation_set: &TrainingSet,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate(train_set.len())?;
    check_set(&params, train_set, "training set")?;
    check_set(&params, validation_set, "validation set")?;

    let mut state = AdamState::new(&params);
    let mut log = TrainingLog {
        epochs: Vec::with_capacity(config.epochs),
        threads: rayon::current_num_threads(),
    };

    let rows = train_set.len();
    let feature_width = train_set.features.cols();
    let label_width = train_set.labels.cols();

    // Buffers reused across batches; rebuilt only when the trailing batch of
    // an epoch has a different size.
    let mut ws = Workspace::new(&params, config.batch_size);
    let mut features = Mat::zeros(config.batch_size, feature_width);
    let mut labels = Mat::zeros(config.batch_size, label_width);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let order = if config.shuffle {
            epoch_permutation(config.seed, epoch, rows)
        } else {
            (0..rows).collect()
        };

        let mut loss_sum = 0.0;
        let mut loss_rows = 0usize;
        let mut batch_index = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // A trailing single row cannot carry batch statistics.
            if chunk.len() < 2 {
                continue;
            }
            if ws.rows() != chunk.len() {
                ws = Workspace::new(&params, chunk.len());
                features = Mat::zeros(chunk.len(), feature_width);
                labels = Mat::zeros(chunk.len(), label_width);
            }
            for (r, &row) in chunk.iter().enumerate() {
                features.row_mut(r).copy_from_slice(train_set.features.row(row));
                labels.row_mut(r).copy_from_slice(train_set.labels.row(row));
            }

            let (loss, stats) = loss_and_gradients_into(&params, &features, &labels, &mut ws)?;
            if !loss.is_finite() {
                return Ok(TrainOutcome::Aborted {
                    epoch,
                    batch: batch_index,
                    log,
                });
            }
            apply_batch_stats(&mut params, &stats);
            adam_step(&mut params, &ws.gradients, &mut state, config);

            loss_sum += loss * chunk.len() as f64;
            loss_rows += chunk.len();
            batch_index += 1;
        }

        let val_mse = evaluate_mse(&params, validation_set)?;
        log.epochs.push(EpochStats {
            train_mse: loss_sum / loss_rows as f64,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome::Completed { params, log })
}

fn check_set(params: &NetworkParameters, set: &TrainingSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidConfig(format!("{what} is empty")));
    }
    if set.features.cols() != params.config.input_width
        || set.labels.cols() != params.config.output_width
        || set.features.rows() != set.labels.rows()
    {
        return Err(Error::ShapeMismatch(format!(
            "{what}: features {}×{}, labels {}×{}, network {}→{}",
            set.features.rows(),
            set.features.cols(),
            set.labels.rows(),
            set.labels.cols(),
            params.config.input_width,
            params.config.output_width
        )));
    }
    Ok(())
}

/// Infer-mode mean squared error over a whole set, evaluated in large chunks.
pub fn evaluate_mse(params: &NetworkParameters, set: &TrainingSet) -> Result<f64> {
    const CHUNK: usize = 4096;
    let rows = set.len();
    let mut total = 0.0;
    let mut row = 0;
    while row < rows {
        let chunk = (rows - row).min(CHUNK);
        let features = Mat::from_fn(chunk, set.features.cols(), |r, c| {
            set.features[(row + r, c)]
        });
        let outputs = predict(params, &features)?;
        for r in 0..chunk {
            for c in 0..outputs.cols() {
                let d = outputs[(r, c)] - set.labels[(row + r, c)];
                total += d * d;
            }
        }
        row += chunk;
    }
    Ok(total / (rows * set.labels.cols()) as f64)
}

/// Writes the per-epoch log as CSV: `epoch,train_mse,val_mse,seconds`.
pub fn write_training_log_csv<W: Write>(log: &TrainingLog, mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_mse,val_mse,seconds")?;
    for (i, epoch) in log.epochs.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{:.3}",
            i + 1,
            epoch.train_mse,
            epoch.val_mse,
            epoch.seconds
        )?;
    }
    Ok(())
}

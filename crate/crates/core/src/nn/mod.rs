//! Dense feed-forward regression network, written from scratch.
//!
//! Architecture: an input batch-normalization stage (per-feature statistics
//! with learnable scale and shift), a stack of rectifier hidden layers, and a
//! linear output layer. Training minimises the mean squared error with Adam;
//! gradients come from reverse-mode accumulation through every stage.
//! Everything runs in 64-bit floats so the finite-difference gradient checks
//! stay tight.

mod adam;
mod io;
mod train;

pub use adam::{adam_step, AdamState};
pub use io::{load_weights, load_weights_expecting, params_hash, save_weights};
pub use train::{
    epoch_permutation, evaluate_mse, train, train_on_sets, write_training_log_csv, EpochStats,
    TrainOutcome, TrainingConfig, TrainingLog, TrainingSet,
};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn, Mat};
use crate::rng::stream_rng;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Rectifier,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Rectifier => "rectifier",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectifier" => Ok(Activation::Rectifier),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// Network shape and normalization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_width: usize,
    pub hidden_layers: Vec<usize>,
    pub output_width: usize,
    pub activation: Activation,
    pub batch_norm_epsilon: f64,
    pub batch_norm_momentum: f64,
}

impl NetworkConfig {
    /// Reduced profile used by the desk-scale runs: four hidden layers of 256.
    pub fn desk(input_width: usize, output_width: usize) -> Self {
        NetworkConfig {
            input_width,
            hidden_layers: vec![256; 4],
            output_width,
            activation: Activation::Rectifier,
            batch_norm_epsilon: 1e-5,
            batch_norm_momentum: 0.99,
        }
    }

    /// Full-size profile: six hidden layers of 600.
    pub fn full(input_width: usize, output_width: usize) -> Self {
        NetworkConfig {
            hidden_layers: vec![600; 6],
            ..NetworkConfig::desk(input_width, output_width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(Error::InvalidConfig("widths must be at least 1".into()));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden layers must be nonempty with positive widths".into(),
            ));
        }
        if self.batch_norm_epsilon.is_nan() || self.batch_norm_epsilon <= 0.0 {
            return Err(Error::InvalidConfig("batch_norm_epsilon must be positive".into()));
        }
        if self.batch_norm_momentum.is_nan()
            || self.batch_norm_momentum <= 0.0
            || self.batch_norm_momentum >= 1.0
        {
            return Err(Error::InvalidConfig(
                "batch_norm_momentum must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_layers.len() + 2);
        widths.push(self.input_width);
        widths.extend_from_slice(&self.hidden_layers);
        widths.push(self.output_width);
        widths
    }
}

/// One dense layer: `weights` is `fan_out × fan_in`, row per output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Mat,
    pub biases: Vec<f64>,
}

/// Input-normalization state: running statistics gathered during training and
/// the learnable affine transform applied after standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// All weights, biases and normalization state of the estimator network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub config: NetworkConfig,
    pub input_norm: InputNorm,
    pub layers: Vec<DenseLayer>,
}

impl NetworkParameters {
    /// Trainable blocks in their canonical order: input scale, input shift,
    /// then per layer the weights (row-major) and biases. Running statistics
    /// are not trainable.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut blocks: Vec<&[f64]> = vec![&self.input_norm.scale, &self.input_norm.shift];
        for layer in &self.layers {
            blocks.push(layer.weights.data());
            blocks.push(&layer.biases);
        }
        blocks
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = vec![
            self.input_norm.scale.as_mut_slice(),
            self.input_norm.shift.as_mut_slice(),
        ];
        for layer in &mut self.layers {
            blocks.push(layer.weights.data_mut());
            blocks.push(layer.biases.as_mut_slice());
        }
        blocks
    }

    pub fn trainable_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Reads one trainable coordinate by flat index.
    pub fn trainable(&self, index: usize) -> f64 {
        let mut remaining = index;
        for block in self.blocks() {
            if remaining < block.len() {
                return block[remaining];
            }
            remaining -= block.len();
        }
        panic!("trainable index {index} out of range");
    }

    /// Writes one trainable coordinate by flat index.
    pub fn set_trainable(&mut self, index: usize, value: f64) {
        let mut remaining = index;
        for block in self.blocks_mut() {
            if remaining < block.len() {
                block[remaining] = value;
                return;
            }
            remaining -= block.len();
        }
        panic!("trainable index {index} out of range");
    }
}

/// Gradient (or any other per-parameter quantity) with the same block layout
/// as [`NetworkParameters::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub layers: Vec<(Mat, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParameters) -> Self {
        Gradients {
            scale: vec![0.0; params.input_norm.scale.len()],
            shift: vec![0.0; params.input_norm.shift.len()],
            layers: params
                .layers
                .iter()
                .map(|l| {
                    (
                        Mat::zeros(l.weights.rows(), l.weights.cols()),
                        vec![0.0; l.biases.len()],
                    )
                })
                .collect(),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut blocks: Vec<&[f64]> = vec![&self.scale, &self.shift];
        for (weights, biases) in &self.layers {
            blocks.push(weights.data());
            blocks.push(biases);
        }
        blocks
    }

    pub fn trainable(&self, index: usize) -> f64 {
        let mut remaining = index;
        for block in self.blocks() {
            if remaining < block.len() {
                return block[remaining];
            }
            remaining -= block.len();
        }
        panic!("gradient index {index} out of range");
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |acc, g| acc.max(g.abs()))
    }
}

/// Deterministic initialization: weights from a zero-mean normal scaled by
/// fan-in (variance `2 / fan_in`), biases zero, normalization scale one and
/// shift zero, running statistics at the standard-normal reference.
pub fn init_network(config: &NetworkConfig, seed: u64) -> Result<NetworkParameters> {
    config.validate()?;
    let mut rng = stream_rng(seed, "init", 0);
    let widths = config.widths();
    let layers = widths
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let sigma = (2.0 / fan_in as f64).sqrt();
            let mut weights = Mat::zeros(fan_out, fan_in);
            for value in weights.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *value = sigma * z;
            }
            DenseLayer {
                weights,
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(NetworkParameters {
        config: config.clone(),
        input_norm: InputNorm {
            running_mean: vec![0.0; config.input_width],
            running_var: vec![1.0; config.input_width],
            scale: vec![1.0; config.input_width],
            shift: vec![0.0; config.input_width],
        },
        layers,
    })
}

/// Whether the forward pass normalizes by batch statistics (training) or by
/// the stored running statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-feature mean and population variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Output of a forward pass; train mode also carries the batch statistics.
pub struct ForwardPass {
    pub outputs: Mat,
    stats: Option<BatchStats>,
}

impl ForwardPass {
    pub fn batch_stats(&self) -> Option<&BatchStats> {
        self.stats.as_ref()
    }
}

/// Reusable buffers for one batch shape. The training loop keeps one
/// workspace alive across batches so the hot path allocates nothing.
pub struct Workspace {
    rows: usize,
    /// Standardised inputs before scale/shift.
    normalized: Mat,
    /// Input of layer 0 (after scale/shift) followed by each hidden
    /// activation.
    activations: Vec<Mat>,
    outputs: Mat,
    /// `deltas[l]` is the loss gradient at the pre-activation of layer `l`.
    deltas: Vec<Mat>,
    /// Loss gradient at the transformed input.
    input_delta: Mat,
    pub gradients: Gradients,
}

impl Workspace {
    pub fn new(params: &NetworkParameters, rows: usize) -> Self {
        let widths = params.config.widths();
        Workspace {
            rows,
            normalized: Mat::zeros(rows, widths[0]),
            activations: widths[..widths.len() - 1]
                .iter()
                .map(|&w| Mat::zeros(rows, w))
                .collect(),
            outputs: Mat::zeros(rows, *widths.last().unwrap()),
            deltas: widths[1..].iter().map(|&w| Mat::zeros(rows, w)).collect(),
            input_delta: Mat::zeros(rows, widths[0]),
            gradients: Gradients::zeros_like(params),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn batch_statistics(input: &Mat) -> BatchStats {
    let (rows, cols) = (input.rows(), input.cols());
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += input[(r, j)];
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for (j, v) in var.iter_mut().enumerate() {
            let d = input[(r, j)] - mean[j];
            *v += d * d;
        }
    }
    for v in &mut var {
        *v /= rows as f64;
    }
    BatchStats { mean, var }
}

/// Forward pass into preallocated buffers; returns the statistics the batch
/// was normalized with when in train mode.
fn forward_into(
    params: &NetworkParameters,
    input: &Mat,
    mode: Mode,
    ws: &mut Workspace,
) -> Result<Option<BatchStats>> {
    if input.cols() != params.config.input_width {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, network expects {}",
            input.cols(),
            params.config.input_width
        )));
    }
    if input.rows() == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    if mode == Mode::Train && input.rows() < 2 {
        return Err(Error::InvalidConfig(
            "training batches need at least 2 rows for batch statistics".into(),
        ));
    }
    assert_eq!(ws.rows, input.rows(), "workspace sized for a different batch");

    let stats = match mode {
        Mode::Train => batch_statistics(input),
        Mode::Infer => BatchStats {
            mean: params.input_norm.running_mean.clone(),
            var: params.input_norm.running_var.clone(),
        },
    };

    // Standardise, then apply the learnable scale and shift.
    let (rows, cols) = (input.rows(), input.cols());
    let epsilon = params.config.batch_norm_epsilon;
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
    let norm = &params.input_norm;
    for r in 0..rows {
        for j in 0..cols {
            let xhat = (input[(r, j)] - stats.mean[j]) * inv_std[j];
            ws.normalized[(r, j)] = xhat;
            ws.activations[0][(r, j)] = norm.scale[j] * xhat + norm.shift[j];
        }
    }

    let hidden_count = params.layers.len() - 1;
    for l in 0..hidden_count {
        let (before, after) = ws.activations.split_at_mut(l + 1);
        let z = &mut after[0];
        gemm_nt(z, &before[l], &params.layers[l].weights);
        let biases = &params.layers[l].biases;
        for row in z.data_mut().chunks_exact_mut(biases.len()) {
            for (v, b) in row.iter_mut().zip(biases) {
                *v = (*v + b).max(0.0);
            }
        }
    }
    let output_layer = params.layers.last().unwrap();
    gemm_nt(&mut ws.outputs, &ws.activations[hidden_count], &output_layer.weights);
    for row in ws.outputs.data_mut().chunks_exact_mut(output_layer.biases.len()) {
        for (v, b) in row.iter_mut().zip(&output_layer.biases) {
            *v += b;
        }
    }

    Ok(match mode {
        Mode::Train => Some(stats),
        Mode::Infer => None,
    })
}

/// Folds one batch's statistics into the running statistics by exponential
/// moving average.
pub fn apply_batch_stats(params: &mut NetworkParameters, stats: &BatchStats) {
    let momentum = params.config.batch_norm_momentum;
    for (running, batch) in params
        .input_norm
        .running_mean
        .iter_mut()
        .zip(&stats.mean)
    {
        *running = momentum * *running + (1.0 - momentum) * batch;
    }
    for (running, batch) in params.input_norm.running_var.iter_mut().zip(&stats.var) {
        *running = momentum * *running + (1.0 - momentum) * batch;
    }
}

/// Forward pass. In train mode the batch is normalized by its own statistics
/// and the running statistics are updated; in infer mode the stored running
/// statistics are used and the parameters stay untouched.
pub fn forward(params: &mut NetworkParameters, input: &Mat, mode: Mode) -> Result<ForwardPass> {
    let mut ws = Workspace::new(params, input.rows().max(1));
    let stats = forward_into(params, input, mode, &mut ws)?;
    if let Some(stats) = &stats {
        apply_batch_stats(params, stats);
    }
    Ok(ForwardPass {
        outputs: ws.outputs,
        stats,
    })
}

/// Pure inference: batched estimates from the stored running statistics.
pub fn predict(params: &NetworkParameters, input: &Mat) -> Result<Mat> {
    let mut ws = Workspace::new(params, input.rows().max(1));
    forward_into(params, input, Mode::Infer, &mut ws)?;
    Ok(ws.outputs)
}

/// Train-mode loss without gradients or state updates; the independent
/// reference for finite-difference gradient checks.
pub fn training_loss(params: &NetworkParameters, input: &Mat, labels: &Mat) -> Result<f64> {
    check_labels(params, input, labels)?;
    let mut ws = Workspace::new(params, input.rows().max(1));
    forward_into(params, input, Mode::Train, &mut ws)?;
    Ok(mse(&ws.outputs, labels))
}

fn check_labels(params: &NetworkParameters, input: &Mat, labels: &Mat) -> Result<()> {
    if labels.rows() != input.rows() || labels.cols() != params.config.output_width {
        return Err(Error::ShapeMismatch(format!(
            "labels are {}×{}, expected {}×{}",
            labels.rows(),
            labels.cols(),
            input.rows(),
            params.config.output_width
        )));
    }
    Ok(())
}

fn mse(outputs: &Mat, labels: &Mat) -> f64 {
    let total: f64 = outputs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(y, t)| (y - t) * (y - t))
        .sum();
    total / outputs.data().len() as f64
}

/// Mean squared error over the batch and its gradient with respect to every
/// trainable parameter, by reverse-mode accumulation. Also returns the batch
/// statistics so the caller can fold them into the running statistics.
pub fn loss_and_gradients(
    params: &NetworkParameters,
    input: &Mat,
    labels: &Mat,
) -> Result<(f64, Gradients, BatchStats)> {
    let mut ws = Workspace::new(params, input.rows().max(1));
    let (loss, stats) = loss_and_gradients_into(params, input, labels, &mut ws)?;
    Ok((loss, ws.gradients, stats))
}

/// Workspace-backed variant of [`loss_and_gradients`]; the gradients land in
/// `ws.gradients`.
pub fn loss_and_gradients_into(
    params: &NetworkParameters,
    input: &Mat,
    labels: &Mat,
    ws: &mut Workspace,
) -> Result<(f64, BatchStats)> {
    check_labels(params, input, labels)?;
    let stats = forward_into(params, input, Mode::Train, ws)?.expect("train mode has statistics");
    let batch = input.rows();
    let loss = mse(&ws.outputs, labels);

    // d loss / d outputs for the batch-and-dimension mean of squared errors.
    let layer_count = params.layers.len();
    let scale = 2.0 / ws.outputs.data().len() as f64;
    for ((d, y), t) in ws.deltas[layer_count - 1]
        .data_mut()
        .iter_mut()
        .zip(ws.outputs.data())
        .zip(labels.data())
    {
        *d = scale * (y - t);
    }

    // Walk the layers backwards; activations[l] is the input of layer l and
    // deltas[l] the loss gradient at its pre-activation.
    for l in (0..layer_count).rev() {
        let (weight_grad, bias_grad) = &mut ws.gradients.layers[l];
        gemm_tn(weight_grad, &ws.deltas[l], &ws.activations[l]);
        bias_grad.fill(0.0);
        for row in ws.deltas[l].data().chunks_exact(bias_grad.len()) {
            for (b, d) in bias_grad.iter_mut().zip(row) {
                *b += d;
            }
        }
        if l == 0 {
            break;
        }
        let (earlier, current) = ws.deltas.split_at_mut(l);
        let previous = &mut earlier[l - 1];
        gemm_nn(previous, &current[0], &params.layers[l].weights);
        // Rectifier gate: the stored activation is zero exactly where the
        // pre-activation was clipped.
        for (p, a) in previous
            .data_mut()
            .iter_mut()
            .zip(ws.activations[l].data())
        {
            *p = if *a > 0.0 { *p } else { 0.0 };
        }
    }

    // Input normalization: gradients of scale and shift need the loss
    // gradient at the transformed input, one more product through the first
    // layer. Batch statistics depend only on the data, so the chain stops
    // there.
    gemm_nn(&mut ws.input_delta, &ws.deltas[0], &params.layers[0].weights);
    ws.gradients.scale.fill(0.0);
    ws.gradients.shift.fill(0.0);
    for r in 0..batch {
        let drow = ws.input_delta.row(r);
        let xrow = ws.normalized.row(r);
        for j in 0..drow.len() {
            ws.gradients.scale[j] += drow[j] * xrow[j];
            ws.gradients.shift[j] += drow[j];
        }
    }

    Ok((loss, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> NetworkConfig {
        NetworkConfig {
            input_width: 6,
            hidden_layers: vec![8, 5],
            output_width: 2,
            activation: Activation::Rectifier,
            batch_norm_epsilon: 1e-5,
            batch_norm_momentum: 0.99,
        }
    }

    fn toy_batch(rows: usize, cols: usize, offset: f64) -> Mat {
        Mat::from_fn(rows, cols, |r, c| {
            offset + ((r * 31 + c * 7) as f64 * 0.37).sin() * 0.5
        })
    }

    #[test]
    fn config_validation() {
        assert!(toy_config().validate().is_ok());
        assert!(NetworkConfig {
            hidden_layers: vec![],
            ..toy_config()
        }
        .validate()
        .is_err());
        assert!(NetworkConfig {
            batch_norm_momentum: 1.0,
            ..toy_config()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn init_shapes_chain_and_reproduce() {
        let config = toy_config();
        let params = init_network(&config, 5).unwrap();
        assert_eq!(params.layers.len(), 3);
        assert_eq!(params.layers[0].weights.rows(), 8);
        assert_eq!(params.layers[0].weights.cols(), 6);
        assert_eq!(params.layers[2].weights.rows(), 2);
        assert_eq!(params.layers[2].weights.cols(), 5);
        assert!(params.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));

        let again = init_network(&config, 5).unwrap();
        assert_eq!(params, again);
        let other = init_network(&config, 6).unwrap();
        assert_ne!(params, other);
    }

    #[test]
    fn init_variance_follows_fan_in() {
        // Layers with at least 1e4 weights each.
        let config = NetworkConfig {
            input_width: 100,
            hidden_layers: vec![100, 100],
            output_width: 100,
            ..toy_config()
        };
        let params = init_network(&config, 123).unwrap();
        for layer in &params.layers {
            let fan_in = layer.weights.cols() as f64;
            let expected = 2.0 / fan_in;
            let data = layer.weights.data();
            let mean: f64 = data.iter().sum::<f64>() / data.len() as f64;
            let var: f64 =
                data.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / data.len() as f64;
            assert!(
                (var - expected).abs() / expected < 0.1,
                "variance {var} vs expected {expected}"
            );
        }
    }

    #[test]
    fn train_mode_standardises_the_batch() {
        let config = toy_config();
        let mut params = init_network(&config, 1).unwrap();
        let input = toy_batch(64, 6, 3.0);
        let pass = forward(&mut params, &input, Mode::Train).unwrap();
        let stats = pass.batch_stats().unwrap();
        // Verify through the cache: re-normalize manually.
        for j in 0..6 {
            let col: Vec<f64> = (0..64).map(|r| input[(r, j)]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 64.0;
            assert!((stats.mean[j] - mean).abs() < 1e-12);
            let xhat: Vec<f64> = col
                .iter()
                .map(|x| (x - stats.mean[j]) / (stats.var[j] + config.batch_norm_epsilon).sqrt())
                .collect();
            let m: f64 = xhat.iter().sum::<f64>() / 64.0;
            let v: f64 = xhat.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 64.0;
            assert!(m.abs() < 1e-7);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn train_mode_rejects_singleton_batches() {
        let mut params = init_network(&toy_config(), 1).unwrap();
        let input = toy_batch(1, 6, 0.0);
        assert!(forward(&mut params, &input, Mode::Train).is_err());
        // inference accepts single rows
        assert!(predict(&params, &input).is_ok());
    }

    #[test]
    fn inference_is_pure_and_repeatable() {
        let mut params = init_network(&toy_config(), 2).unwrap();
        let warm = toy_batch(32, 6, 1.0);
        forward(&mut params, &warm, Mode::Train).unwrap();
        let input = toy_batch(4, 6, 0.5);
        let snapshot = params.clone();
        let a = predict(&params, &input).unwrap();
        let b = predict(&params, &input).unwrap();
        assert_eq!(a, b);
        assert_eq!(params, snapshot);
    }

    #[test]
    fn pass_through_network_reproduces_normalized_input() {
        // One hidden layer, width-preserving, identity weights, and a shift
        // large enough to keep every unit on the linear side of the
        // rectifier: the output must equal the scale/shift image of the
        // standardised input.
        let width = 5;
        let config = NetworkConfig {
            input_width: width,
            hidden_layers: vec![width],
            output_width: width,
            ..toy_config()
        };
        let mut params = init_network(&config, 3).unwrap();
        for layer in &mut params.layers {
            let n = layer.weights.rows();
            layer.weights = Mat::identity(n);
            layer.biases = vec![0.0; n];
        }
        params.input_norm.shift = vec![10.0; width];
        let input = toy_batch(16, width, 0.0);
        let pass = forward(&mut params, &input, Mode::Train).unwrap();
        let stats = pass.batch_stats().unwrap().clone();
        for r in 0..16 {
            for j in 0..width {
                let xhat = (input[(r, j)] - stats.mean[j])
                    / (stats.var[j] + config.batch_norm_epsilon).sqrt();
                let expected = xhat + 10.0;
                assert!((pass.outputs[(r, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn running_statistics_converge_to_the_data() {
        let config = toy_config();
        let mut params = init_network(&config, 9).unwrap();
        // Stationary stream: feature j has mean j and variance around 2.
        let mut phase = 0u64;
        for _ in 0..600 {
            let input = Mat::from_fn(64, 6, |r, c| {
                phase = phase.wrapping_add(1);
                c as f64 + 1.4 * (((r * 131 + c * 17) as f64 + phase as f64 * 0.01).sin())
            });
            forward(&mut params, &input, Mode::Train).unwrap();
        }
        let last = Mat::from_fn(256, 6, |r, c| {
            c as f64 + 1.4 * (((r * 131 + c * 17) as f64).sin())
        });
        let stats = batch_statistics(&last);
        for j in 0..6 {
            let mean_gap = (params.input_norm.running_mean[j] - stats.mean[j]).abs();
            assert!(mean_gap < 0.05 * stats.var[j].sqrt().max(1.0));
            let var_ratio = params.input_norm.running_var[j] / stats.var[j];
            assert!((var_ratio - 1.0).abs() < 0.05, "feature {j}: ratio {var_ratio}");
        }
    }

    #[test]
    fn perfect_outputs_give_zero_loss_and_gradients() {
        let config = toy_config();
        let mut params = init_network(&config, 4).unwrap();
        let input = toy_batch(16, 6, 0.0);
        let outputs = forward(&mut params, &input, Mode::Train).unwrap().outputs;
        let (loss, gradients, _) = loss_and_gradients(&params, &input, &outputs).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(gradients.max_abs(), 0.0);
    }

    #[test]
    fn doubling_errors_quadruples_the_loss() {
        let config = toy_config();
        let params = init_network(&config, 4).unwrap();
        let input = toy_batch(16, 6, 0.0);
        let outputs = forward(&mut params.clone(), &input, Mode::Train).unwrap().outputs;
        let near = Mat::from_fn(16, 2, |r, c| outputs[(r, c)] + 0.1);
        let far = Mat::from_fn(16, 2, |r, c| outputs[(r, c)] + 0.2);
        let (loss_near, _, _) = loss_and_gradients(&params, &input, &near).unwrap();
        let (loss_far, _, _) = loss_and_gradients(&params, &input, &far).unwrap();
        assert!((loss_far / loss_near - 4.0).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences_everywhere() {
        let config = toy_config();
        let params = init_network(&config, 11).unwrap();
        let input = toy_batch(8, 6, 0.2);
        let labels = Mat::from_fn(8, 2, |r, c| ((r + c) as f64 * 0.21).cos());
        let (_, gradients, _) = loss_and_gradients(&params, &input, &labels).unwrap();

        let h = 1e-5;
        let count = params.trainable_count();
        assert_eq!(count, 6 + 6 + (8 * 6 + 8) + (5 * 8 + 5) + (2 * 5 + 2));
        for index in 0..count {
            let mut shifted = params.clone();
            let base = params.trainable(index);
            shifted.set_trainable(index, base + h);
            let plus = training_loss(&shifted, &input, &labels).unwrap();
            shifted.set_trainable(index, base - h);
            let minus = training_loss(&shifted, &input, &labels).unwrap();
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = gradients.trainable(index);
            let scale = numeric.abs().max(analytic.abs());
            if scale < 1e-12 {
                continue;
            }
            assert!(
                (numeric - analytic).abs() / scale < 1e-4,
                "coordinate {index}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let params = init_network(&toy_config(), 1).unwrap();
        let bad_input = toy_batch(4, 5, 0.0);
        assert!(predict(&params, &bad_input).is_err());
        let input = toy_batch(4, 6, 0.0);
        let bad_labels = toy_batch(4, 3, 0.0);
        assert!(training_loss(&params, &input, &bad_labels).is_err());
    }
}

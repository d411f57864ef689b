// Diagnostic: criterion-7 data with checkpointed evaluation of the ratio
// medians along a 200-epoch trajectory. Not part of the suite.
use std::time::Instant;

use ctqwalk_core::nn::{
    adam_step, apply_batch_stats, epoch_permutation, evaluate_mse, loss_and_gradients_into,
    AdamState, TrainingConfig, TrainingSet, Workspace,
};
use ctqwalk_core::*;

fn eval_report(params: &NetworkParameters, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let experiment = ExperimentConfig {
        num_sites: 10,
        neighbour_order: 2,
        initial_state: InitialStateSpec::localized(5),
        time: 1.5,
        resources: 200_000,
        replicas: 100,
        seed,
        points: TestPoints::Grid {
            axes: vec![
                GridAxis::Sweep { low: 0.05, high: 0.95, count: 21 },
                GridAxis::Sweep { low: 0.05, high: 0.95, count: 21 },
            ],
        },
        fisher_step: 1e-4,
        fisher_floor: 1e-12,
        condition_cap: 1e12,
    };
    let report = run_experiment(&EvalModel::Network(params), &experiment).unwrap();
    let below: Vec<f64> = (0..2)
        .map(|i| {
            report
                .points
                .iter()
                .filter(|p| p.status == EvalStatus::Ok && p.ratio[i] < 10.0)
                .count() as f64
                / report.points.len() as f64
        })
        .collect();
    let center = report
        .points
        .iter()
        .min_by(|a, b| {
            let da = (a.couplings[0] - 0.5).powi(2) + (a.couplings[1] - 0.5).powi(2);
            let db = (b.couplings[0] - 0.5).powi(2) + (b.couplings[1] - 0.5).powi(2);
            da.total_cmp(&db)
        })
        .unwrap();
    (report.quantiles.q50.clone(), below, center.bias.clone())
}

fn main() {
    let seed = 1001u64;
    let epochs = 200usize;
    let checkpoints = [1usize, 3, 5, 10, 25, 50, 75, 100, 150, 200];

    let dataset_config = DatasetConfig {
        num_sites: 10,
        neighbour_order: 2,
        initial_state: InitialStateSpec::localized(5),
        time: 1.5,
        resources: 200_000,
        n_samp: 1 << 12,
        n_mc: 200,
        low: -0.2,
        high: 1.2,
        fraction: 0.8,
        seed,
        memory_budget: ctqwalk_core::datagen::DEFAULT_MEMORY_BUDGET,
        noiseless_validation: false,
    };
    let split = build_dataset(&dataset_config).unwrap();
    let train_set = TrainingSet::from_dataset(&split.train);
    let val_set = TrainingSet::from_dataset(&split.validation);
    drop(split);
    println!("data ready: {} train rows", train_set.len());

    let network = NetworkConfig::desk(10, 2);
    let mut params = init_network(&network, seed).unwrap();
    let config = TrainingConfig::new(epochs, 512, 1e-3, seed);
    let mut state = AdamState::new(&params);
    let mut ws = Workspace::new(&params, config.batch_size);
    let mut features = Mat::zeros(config.batch_size, 10);
    let mut labels = Mat::zeros(config.batch_size, 2);

    let started = Instant::now();
    for epoch in 0..epochs {
        let order = epoch_permutation(config.seed, epoch, train_set.len());
        let mut train_loss = 0.0;
        let mut rows = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            if ws.rows() != chunk.len() {
                ws = Workspace::new(&params, chunk.len());
                features = Mat::zeros(chunk.len(), 10);
                labels = Mat::zeros(chunk.len(), 2);
            }
            for (r, &row) in chunk.iter().enumerate() {
                features.row_mut(r).copy_from_slice(train_set.features.row(row));
                labels.row_mut(r).copy_from_slice(train_set.labels.row(row));
            }
            let (loss, stats) =
                loss_and_gradients_into(&params, &features, &labels, &mut ws).unwrap();
            apply_batch_stats(&mut params, &stats);
            adam_step(&mut params, &ws.gradients, &mut state, &config);
            train_loss += loss * chunk.len() as f64;
            rows += chunk.len();
        }
        let epoch_number = epoch + 1;
        if checkpoints.contains(&epoch_number) {
            let val = evaluate_mse(&params, &val_set).unwrap();
            let (medians, below, bias) = eval_report(&params, seed);
            println!(
                "epoch {epoch_number:>3}: train {:.4e} val {val:.4e} medians [{:.2}, {:.2}] below10 [{:.2}, {:.2}] center-bias [{:+.2e}, {:+.2e}] ({:.0}s)",
                train_loss / rows as f64,
                medians[0],
                medians[1],
                below[0],
                below[1],
                bias[0],
                bias[1],
                started.elapsed().as_secs_f64()
            );
        }
    }
}

// One-off timing of epoch components at full desk scale.
use std::time::Instant;
use ctqwalk_core::nn::{evaluate_mse, TrainingConfig, TrainingSet};
use ctqwalk_core::*;

fn main() {
    let params = init_network(&NetworkConfig::desk(10, 2), 3).unwrap();
    let rows = 163_800;
    let set = TrainingSet {
        features: Mat::from_fn(rows, 10, |r, c| ((r * 7 + c) as f64 * 0.001).sin() * 0.1 + 0.1),
        labels: Mat::from_fn(rows, 2, |r, c| ((r + c) as f64 * 0.01).cos() * 0.5),
    };
    let t = Instant::now();
    let mse = evaluate_mse(&params, &set).unwrap();
    println!("evaluate_mse over {rows}: {:.2} s (mse {mse:.3})", t.elapsed().as_secs_f64());

    // one epoch worth of training steps on synthetic data
    let train_rows = 655_400usize;
    let train = TrainingSet {
        features: Mat::from_fn(train_rows, 10, |r, c| ((r * 11 + c) as f64 * 0.0007).sin() * 0.1 + 0.1),
        labels: Mat::from_fn(train_rows, 2, |r, c| ((r * 3 + c) as f64 * 0.013).cos() * 0.5),
    };
    let config = TrainingConfig::new(1, 512, 1e-3, 5);
    let t = Instant::now();
    let outcome = ctqwalk_core::train_on_sets(params, &train, &set, &config).unwrap();
    if let TrainOutcome::Completed { log, .. } = outcome {
        println!("one epoch: {:.1} s (logged {:.1}s)", t.elapsed().as_secs_f64(), log.epochs[0].seconds);
    }
}

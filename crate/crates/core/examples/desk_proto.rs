// Scaled-down dry run of the desk pipeline to estimate timing and the
// saturation ratio before the full acceptance run. Not part of the suite.
use std::time::Instant;
use ctqwalk_core::nn::{TrainingConfig, TrainingSet};
use ctqwalk_core::*;

fn main() {
    let scale: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let seed = 1001;
    let t0 = Instant::now();
    let config = DatasetConfig {
        num_sites: 10,
        neighbour_order: 2,
        initial_state: InitialStateSpec::localized(5),
        time: 1.5,
        resources: 200_000,
        n_samp: (1 << 12) / scale,
        n_mc: 200,
        low: -0.2,
        high: 1.2,
        fraction: 0.8,
        seed,
        memory_budget: ctqwalk_core::datagen::DEFAULT_MEMORY_BUDGET,
        noiseless_validation: false,
    };
    let split = build_dataset(&config).unwrap();
    println!("datagen: {} train / {} val records in {:.1}s", split.train.len(), split.validation.len(), t0.elapsed().as_secs_f64());

    let train_set = TrainingSet::from_dataset(&split.train);
    let val_set = TrainingSet::from_dataset(&split.validation);
    drop(split);

    let t1 = Instant::now();
    let params = init_network(&NetworkConfig::desk(10, 2), seed).unwrap();
    let training = TrainingConfig::new(epochs, 512, 1e-3, seed);
    let outcome = train_on_sets(params, &train_set, &val_set, &training).unwrap();
    let (params, log) = match outcome {
        TrainOutcome::Completed { params, log } => (params, log),
        _ => panic!("aborted"),
    };
    let per_epoch = t1.elapsed().as_secs_f64() / epochs as f64;
    println!(
        "train: {} epochs x {} batches in {:.1}s ({:.2}s/epoch), val MSE first {:.3e} last {:.3e}",
        epochs,
        train_set.len() / 512,
        t1.elapsed().as_secs_f64(),
        per_epoch,
        log.epochs.first().unwrap().val_mse,
        log.final_val_mse().unwrap()
    );

    let t2 = Instant::now();
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
    let report = run_experiment(&EvalModel::Network(&params), &experiment).unwrap();
    println!("eval: {} points in {:.1}s", report.points.len(), t2.elapsed().as_secs_f64());
    println!("medians: {:?}", report.quantiles.q50);
    println!("q95: {:?}", report.quantiles.q95);
    for i in 0..2 {
        let below = report.points.iter().filter(|p| p.status == EvalStatus::Ok && p.ratio[i] < 10.0).count();
        println!("J{}: {}/{} below ratio 10", i + 1, below, report.points.len());
    }
    // interior bias check at (0.5, 0.5)
    let target = report.points.iter().min_by(|a, b| {
        let da = (a.couplings[0] - 0.5).powi(2) + (a.couplings[1] - 0.5).powi(2);
        let db = (b.couplings[0] - 0.5).powi(2) + (b.couplings[1] - 0.5).powi(2);
        da.total_cmp(&db)
    }).unwrap();
    for i in 0..2 {
        let limit = 3.0 * (target.crb[i] / 200_000.0).sqrt();
        println!(
            "bias J{} at {:?}: {:.3e} (3σ_CRB limit {:.3e}) {}",
            i + 1, target.couplings, target.bias[i], limit,
            if target.bias[i].abs() < limit { "OK" } else { "EXCEEDS" }
        );
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

//! Toy-scale end-to-end run of the library pipeline: generate a bootstrapped
//! dataset, train a small network on it, evaluate against the bound, and
//! push the artifacts through their file formats. Fast enough for every
//! development cycle; the full-size counterpart lives in the acceptance
//! suite.

use ctqwalk_core::nn::{TrainingConfig, TrainingSet};
use ctqwalk_core::{
    build_dataset, init_network, load_weights, params_hash, read_dataset, run_experiment,
    save_weights, train_on_sets, write_dataset, DatasetConfig, DatasetFormat, EvalModel,
    EvalStatus, ExperimentConfig, GridAxis, InitialStateSpec, NetworkConfig, TestPoints,
    TrainOutcome,
};

#[test]
fn toy_pipeline_end_to_end() {
    let seed = 77;
    // The walker starts off-center: a center start would make the chain
    // reflection-symmetric and fold distinct couplings onto the same
    // distribution, leaving nothing to learn.
    let dataset_config = DatasetConfig {
        num_sites: 5,
        neighbour_order: 2,
        initial_state: InitialStateSpec::localized(2),
        time: 1.5,
        resources: 200_000,
        n_samp: 512,
        n_mc: 12,
        low: -0.2,
        high: 1.2,
        fraction: 0.75,
        seed,
        memory_budget: ctqwalk_core::datagen::DEFAULT_MEMORY_BUDGET,
        noiseless_validation: false,
    };
    let split = build_dataset(&dataset_config).unwrap();
    assert_eq!(split.train.len(), 384 * 12);
    assert_eq!(split.validation.len(), 128 * 12);

    // The dataset survives its file format.
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.bin");
    write_dataset(&split.train, &train_path, DatasetFormat::Binary).unwrap();
    let reloaded = read_dataset(&train_path).unwrap();
    assert_eq!(reloaded, split.train);

    // A small network must learn enough structure that validation improves.
    let network = NetworkConfig {
        input_width: 5,
        hidden_layers: vec![48, 48],
        output_width: 2,
        ..NetworkConfig::desk(5, 2)
    };
    let params = init_network(&network, seed).unwrap();
    let train_set = TrainingSet::from_dataset(&split.train);
    let validation_set = TrainingSet::from_dataset(&split.validation);
    let training = TrainingConfig::new(60, 128, 3e-3, seed);
    let outcome = train_on_sets(params, &train_set, &validation_set, &training).unwrap();
    let (params, log) = match outcome {
        TrainOutcome::Completed { params, log } => (params, log),
        TrainOutcome::Aborted { epoch, batch, .. } => panic!("aborted at {epoch}/{batch}"),
    };
    assert_eq!(log.epochs.len(), 60);
    let first = log.epochs.first().unwrap().val_mse;
    let last = log.final_val_mse().unwrap();
    assert!(
        last < first / 5.0,
        "validation MSE should drop well below its start: {first} → {last}"
    );

    // Weight persistence keeps the estimates intact.
    let weights_path = dir.path().join("weights.bin");
    save_weights(&params, &weights_path).unwrap();
    let restored = load_weights(&weights_path).unwrap();
    assert_eq!(params_hash(&params), params_hash(&restored));

    // Evaluate on a small interior grid: the protocol must produce finite
    // ratios and flag nothing in the interior.
    let experiment = ExperimentConfig {
        num_sites: 5,
        neighbour_order: 2,
        initial_state: InitialStateSpec::localized(2),
        time: 1.5,
        resources: 200_000,
        replicas: 30,
        seed,
        points: TestPoints::Grid {
            axes: vec![
                GridAxis::Sweep { low: 0.25, high: 0.75, count: 3 },
                GridAxis::Sweep { low: 0.25, high: 0.75, count: 3 },
            ],
        },
        fisher_step: 1e-4,
        fisher_floor: 1e-12,
        condition_cap: 1e12,
    };
    let report = run_experiment(&EvalModel::Network(&restored), &experiment).unwrap();
    assert_eq!(report.points.len(), 9);
    for point in &report.points {
        assert_eq!(point.status, EvalStatus::Ok);
        for i in 0..2 {
            assert!(point.ratio[i].is_finite() && point.ratio[i] >= 0.0);
            assert!(point.crb[i] > 0.0);
        }
    }
}

//! Simulation of continuous-time quantum walks on a line with n-neighbour
//! couplings, Fisher-information / Cramér–Rao benchmarks for coupling
//! estimation, and a from-scratch dense neural network that learns the
//! couplings from measured site-occupation counts.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`ctqw`] — Hamiltonian construction, initial states, unitary evolution,
//!   site-occupation probabilities.
//! * [`fisher`] — numerical probability derivatives, Fisher-information
//!   matrices, Cramér–Rao bounds, and landscape maps over coupling grids.
//! * [`datagen`] — coupling sampling, expected counts, Poisson bootstrap, and
//!   train/validation dataset assembly.
//! * [`nn`] — dense feed-forward regression network with input batch
//!   normalization, reverse-mode gradients, Adam, and weight persistence.
//! * [`eval`] — test-phase protocol comparing estimator variance against the
//!   Cramér–Rao bound.

pub mod ctqw;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod linalg;
pub mod nn;
pub mod rng;

pub use error::{Error, ErrorCategory, Result};
pub use linalg::Mat;

pub use ctqw::{
    build_hamiltonian, chain_center, eigendecompose, evolve, expm_oracle, gaussian_state,
    site_probabilities, ChainSpec, Hamiltonian, InitialStateSpec, ProbabilityVector,
    SpectralDecomposition, WalkerState, COUPLING_MAX, COUPLING_MIN,
};
pub use datagen::{
    build_dataset, expected_counts, poisson_bootstrap, read_dataset, sample_couplings,
    stream_dataset, write_dataset, CountRecord, Dataset, DatasetConfig, DatasetFormat,
    DatasetMeta, DatasetWriter, SplitDataset,
};
pub use eval::{
    ratio_summary, run_experiment, slice_report, write_report_csv, write_summary_json,
    EstimationReport, EvalModel, EvalStatus, ExperimentConfig, ExperimentEcho, PointStatistics,
    RatioQuantiles, Region, ReportSummary, SlicePoint, TestPoints,
};
pub use fisher::{
    crb, fisher_map, fisher_matrix, probability_jacobian, write_fisher_map_csv, CrbDiagonal,
    FisherMapOptions, FisherMapRecord, FisherMatrix, GridAxis, GridSpec, PointStatus,
};
pub use nn::{
    adam_step, forward, init_network, load_weights, load_weights_expecting, loss_and_gradients,
    params_hash, predict, save_weights, train, train_on_sets, AdamState, Activation, ForwardPass,
    Gradients, Mode, NetworkConfig, NetworkParameters, TrainOutcome, TrainingConfig, TrainingLog,
    TrainingSet,
};

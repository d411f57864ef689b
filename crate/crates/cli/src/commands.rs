//! Implementations of the six pipeline subcommands.
//!
//! Every command is pure with respect to (config file, seed, input files):
//! re-running overwrites its outputs with identical bytes. Wall-clock timing
//! appears only in the training log's `seconds` column.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ctqwalk_core::eval::read_summary_json;
use ctqwalk_core::fisher::mean_entry;
use ctqwalk_core::nn::{write_training_log_csv, TrainingSet};
use ctqwalk_core::{
    build_dataset, build_hamiltonian, eigendecompose, fisher_map, load_weights_expecting,
    ratio_summary, read_dataset, run_experiment, site_probabilities, slice_report,
    stream_dataset, train_on_sets, write_dataset, write_fisher_map_csv, write_report_csv,
    write_summary_json, ChainSpec, DatasetFormat, Error, EstimationReport, EvalModel,
    ExperimentConfig, FisherMapOptions, GridSpec, PointStatus, Region, Result, TestPoints,
    TrainOutcome,
};

use crate::config::{config_digest, config_echo, EvalSection, RunConfig};

fn missing_section(name: &str) -> Error {
    Error::InvalidConfig(format!("this command needs the [{name}] config section"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Writes the per-run manifest: invocation echo plus the effective config.
fn write_manifest(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    threads: usize,
    outputs: &[PathBuf],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(dir.join("manifest.txt"))?);
    writeln!(out, "command={command}")?;
    writeln!(out, "experiment={}", config.experiment)?;
    writeln!(out, "seed={}", config.seed)?;
    writeln!(out, "threads={threads}")?;
    writeln!(out, "config_digest={:016x}", config_digest(config)?)?;
    for output in outputs {
        writeln!(out, "output={}", output.display())?;
    }
    writeln!(out)?;
    writeln!(out, "[config]")?;
    write!(out, "{}", config_echo(config)?)?;
    out.flush()?;
    Ok(())
}

fn chain_from_config(config: &RunConfig) -> Result<ChainSpec> {
    let couplings = config.chain.couplings.clone().ok_or_else(|| {
        Error::InvalidConfig("this command needs chain.couplings".into())
    })?;
    if couplings.len() != config.chain.neighbour_order {
        return Err(Error::InvalidConfig(format!(
            "chain.couplings has {} entries, neighbour_order is {}",
            couplings.len(),
            config.chain.neighbour_order
        )));
    }
    ChainSpec::new(config.chain.num_sites, couplings)
}

/// `simulate`: evolve one instance (or a coupling grid) and write the site
/// probabilities.
pub fn simulate(config: &RunConfig, out_root: &Path, threads: usize) -> Result<()> {
    let dir = out_root.join("simulate");
    create_dir(&dir)?;
    let csv_path = dir.join("probabilities.csv");
    let t = config.evolution.time;
    let grid = config.simulate.as_ref().and_then(|s| s.grid.clone());

    let mut out = BufWriter::new(File::create(&csv_path)?);
    match grid {
        None => {
            let spec = chain_from_config(config)?;
            let psi0 = config.initial_state.build(&spec)?;
            let state = eigendecompose(&build_hamiltonian(&spec))?.evolve(&psi0, t);
            let p = site_probabilities(&state, t);
            writeln!(out, "site,probability")?;
            for (x, value) in p.probabilities().iter().enumerate() {
                writeln!(out, "{},{}", x + 1, value)?;
            }
            println!("simulate: N={} t={t} total probability = {:.12}", spec.num_sites(), p.total());
        }
        Some(axes) => {
            let n = config.chain.neighbour_order;
            if axes.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "simulate.grid has {} axes, neighbour_order is {n}",
                    axes.len()
                )));
            }
            let grid = GridSpec::new(axes.iter().map(|a| a.to_grid_axis()).collect())?;
            let template = ChainSpec::new(config.chain.num_sites, vec![0.0; n])?;
            let psi0 = config.initial_state.build(&template)?;
            let mut header: Vec<String> = (1..=n).map(|i| format!("J{i}")).collect();
            header.extend((1..=config.chain.num_sites).map(|x| format!("p{x}")));
            writeln!(out, "{}", header.join(","))?;
            let mut worst: f64 = 0.0;
            for point in grid.points() {
                let spec = template.with_couplings(&point)?;
                let state = eigendecompose(&build_hamiltonian(&spec))?.evolve(&psi0, t);
                let p = site_probabilities(&state, t);
                let mut fields: Vec<String> = point.iter().map(|v| format!("{v}")).collect();
                fields.extend(p.probabilities().iter().map(|v| format!("{v}")));
                writeln!(out, "{}", fields.join(","))?;
                worst = worst.max((p.total() - 1.0).abs());
            }
            println!(
                "simulate: {} grid points, worst |Σp − 1| = {worst:.3e}",
                grid.len()
            );
        }
    }
    out.flush()?;
    write_manifest(&dir, "simulate", config, threads, &[csv_path])?;
    Ok(())
}

/// `fisher-map`: information and bound landscapes for every configured
/// (chain length, time) combination, plus an index file.
pub fn cmd_fisher_map(config: &RunConfig, out_root: &Path, threads: usize) -> Result<()> {
    let section = config.fisher.as_ref().ok_or_else(|| missing_section("fisher"))?;
    let dir = out_root.join("fisher-map");
    create_dir(&dir)?;
    let n = config.chain.neighbour_order;
    let grid = GridSpec::uniform(n, 0.0, 1.0, section.grid_points)?;
    let options = FisherMapOptions {
        step: section.step,
        floor: section.floor,
        condition_cap: section.condition_cap,
    };

    let mut outputs = Vec::new();
    let mut index_rows = Vec::new();
    let mut mean_by_combo: Vec<(usize, f64, f64)> = Vec::new();
    for &num_sites in &section.chain_lengths {
        let template = ChainSpec::new(num_sites, vec![0.0; n])?;
        let psi0 = config.initial_state.build(&template)?;
        for &t in &section.times {
            let records = fisher_map(num_sites, &psi0, t, &grid, &options)?;
            let file_name = format!("map_N{num_sites}_t{t}.csv");
            let path = dir.join(&file_name);
            write_fisher_map_csv(&records, BufWriter::new(File::create(&path)?))?;
            let singular = records
                .iter()
                .filter(|r| r.status == PointStatus::Singular)
                .count();
            let means: Vec<f64> = (0..n).map(|i| mean_entry(&records, i, i)).collect();
            let mean_text: Vec<String> = means.iter().map(|m| format!("{m}")).collect();
            index_rows.push(format!(
                "{num_sites},{t},{},{singular},{},{file_name}",
                records.len(),
                mean_text.join(",")
            ));
            println!(
                "fisher-map: N={num_sites} t={t}: {} points ({singular} singular), mean diag = [{}]",
                records.len(),
                means
                    .iter()
                    .map(|m| format!("{m:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            mean_by_combo.push((num_sites, t, means[0]));
            outputs.push(path);
        }
    }

    let index_path = dir.join("index.csv");
    let mut index = BufWriter::new(File::create(&index_path)?);
    let mean_header: Vec<String> = (1..=n).map(|i| format!("mean_F{i}{i}")).collect();
    writeln!(
        index,
        "num_sites,time,points,singular,{},file",
        mean_header.join(",")
    )?;
    for row in &index_rows {
        writeln!(index, "{row}")?;
    }
    index.flush()?;
    outputs.push(index_path);

    // Chain-length ordering of the first-neighbour information at fixed time.
    for &t in &section.times {
        let mut at_t: Vec<(usize, f64)> = mean_by_combo
            .iter()
            .filter(|(_, time, _)| *time == t)
            .map(|&(num_sites, _, mean)| (num_sites, mean))
            .collect();
        if at_t.len() > 1 {
            at_t.sort_by_key(|&(num_sites, _)| num_sites);
            let summary: Vec<String> = at_t
                .iter()
                .map(|(num_sites, mean)| format!("N={num_sites}: {mean:.4}"))
                .collect();
            println!("fisher-map: mean F11 at t={t}: {}", summary.join(", "));
        }
    }

    write_manifest(&dir, "fisher-map", config, threads, &outputs)?;
    Ok(())
}

/// `gen-data`: build the bootstrapped dataset and write the two splits.
/// Datasets beyond the memory budget are streamed to disk chunk by chunk,
/// producing byte-identical files.
pub fn gen_data(config: &RunConfig, out_root: &Path, threads: usize) -> Result<()> {
    let section = config.datagen.as_ref().ok_or_else(|| missing_section("datagen"))?;
    let format: DatasetFormat = section.format()?;
    let dir = out_root.join("dataset");
    create_dir(&dir)?;

    let dataset_config = section.to_dataset_config(config);
    let extension = match format {
        DatasetFormat::Csv => "csv",
        DatasetFormat::Binary => "bin",
    };
    let train_path = dir.join(format!("train.{extension}"));
    let validation_path = dir.join(format!("validation.{extension}"));

    let (train_records, validation_records, mode) =
        if dataset_config.estimated_bytes() > dataset_config.memory_budget {
            let (t, v) = stream_dataset(&dataset_config, &train_path, &validation_path, format)?;
            (t, v, "streamed")
        } else {
            let split = build_dataset(&dataset_config)?;
            write_dataset(&split.train, &train_path, format)?;
            write_dataset(&split.validation, &validation_path, format)?;
            (split.train.len(), split.validation.len(), "in-memory")
        };
    println!(
        "gen-data: {train_records} train records, {validation_records} validation records \
         ({} base samples × {} replicas, split {}, {mode})",
        section.n_samp, section.n_mc, section.fraction
    );
    write_manifest(
        &dir,
        "gen-data",
        config,
        threads,
        &[train_path, validation_path],
    )?;
    Ok(())
}

fn find_dataset_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for extension in ["csv", "bin"] {
        let candidate = dir.join(format!("{stem}.{extension}"));
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::InvalidConfig(format!(
        "no {stem}.csv or {stem}.bin under {}",
        dir.display()
    )))
}

/// `train`: fit the estimator network on a generated dataset. With `resume`
/// the run starts from stored weights instead of a fresh initialization.
pub fn cmd_train(
    config: &RunConfig,
    out_root: &Path,
    threads: usize,
    dataset_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<()> {
    let network_section = config.network.as_ref().ok_or_else(|| missing_section("network"))?;
    let training_section = config.training.as_ref().ok_or_else(|| missing_section("training"))?;
    let dataset_dir = dataset_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_root.join("dataset"));
    let dir = out_root.join("train");
    create_dir(&dir)?;

    let train_data = read_dataset(&find_dataset_file(&dataset_dir, "train")?)?;
    let validation_data = read_dataset(&find_dataset_file(&dataset_dir, "validation")?)?;
    let network_config = network_section.to_network_config(
        train_data.meta.num_sites,
        train_data.meta.neighbour_order,
    )?;
    let params = match resume {
        Some(weights) => load_weights_expecting(
            weights,
            train_data.meta.num_sites,
            train_data.meta.neighbour_order,
        )?,
        None => ctqwalk_core::init_network(&network_config, config.seed)?,
    };
    let training_config = training_section.to_training_config(config.seed);

    let train_set = TrainingSet::from_dataset(&train_data);
    let validation_set = TrainingSet::from_dataset(&validation_data);
    drop(train_data);
    drop(validation_data);

    let outcome = train_on_sets(params, &train_set, &validation_set, &training_config)?;
    let log_path = dir.join("training_log.csv");
    match outcome {
        TrainOutcome::Completed { params, log } => {
            write_training_log_csv(&log, BufWriter::new(File::create(&log_path)?))?;
            let weights_path = dir.join("weights.bin");
            ctqwalk_core::save_weights(&params, &weights_path)?;
            println!(
                "train: {} epochs done, final validation MSE = {:.6e}, weights hash = {:016x}",
                log.epochs.len(),
                log.final_val_mse().unwrap_or(f64::NAN),
                ctqwalk_core::params_hash(&params)
            );
            write_manifest(&dir, "train", config, threads, &[weights_path, log_path])?;
            Ok(())
        }
        TrainOutcome::Aborted { epoch, batch, log } => {
            write_training_log_csv(&log, BufWriter::new(File::create(&log_path)?))?;
            Err(Error::NonFiniteLoss { epoch, batch })
        }
    }
}

fn test_points_from_section(section: &EvalSection, n: usize) -> Result<TestPoints> {
    match section.points.as_str() {
        "grid" => {
            let axes = section.axes.clone().ok_or_else(|| {
                Error::InvalidConfig("eval.points = \"grid\" needs eval.axes".into())
            })?;
            if axes.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "eval.axes has {} entries, neighbour_order is {n}",
                    axes.len()
                )));
            }
            Ok(TestPoints::Grid {
                axes: axes.iter().map(|a| a.to_grid_axis()).collect(),
            })
        }
        "random" => {
            let count = section.n_test.ok_or_else(|| {
                Error::InvalidConfig("eval.points = \"random\" needs eval.n_test".into())
            })?;
            Ok(TestPoints::Random {
                count,
                low: section.random_low,
                high: section.random_high,
            })
        }
        other => Err(Error::InvalidConfig(format!(
            "eval.points must be \"grid\" or \"random\", got {other:?}"
        ))),
    }
}

/// `evaluate`: run the test protocol with the trained network (or the
/// perfect-oracle testing hook) and export the report, summary and slices.
pub fn evaluate(
    config: &RunConfig,
    out_root: &Path,
    threads: usize,
    weights: Option<&Path>,
    perfect_oracle: bool,
) -> Result<()> {
    let eval_section = config.eval.as_ref().ok_or_else(|| missing_section("eval"))?;
    let datagen_section = config.datagen.as_ref().ok_or_else(|| missing_section("datagen"))?;
    let fisher_section = config.fisher.as_ref().ok_or_else(|| missing_section("fisher"))?;
    let dir = out_root.join("evaluate");
    create_dir(&dir)?;

    let n = config.chain.neighbour_order;
    let experiment = ExperimentConfig {
        num_sites: config.chain.num_sites,
        neighbour_order: n,
        initial_state: config.initial_state.clone(),
        time: config.evolution.time,
        resources: datagen_section.resources,
        replicas: eval_section.replicas,
        seed: config.seed,
        points: test_points_from_section(eval_section, n)?,
        fisher_step: fisher_section.step,
        fisher_floor: fisher_section.floor,
        condition_cap: fisher_section.condition_cap,
    };

    let loaded;
    let model = if perfect_oracle {
        EvalModel::PerfectOracle
    } else {
        let weights_path = weights
            .map(Path::to_path_buf)
            .unwrap_or_else(|| out_root.join("train").join("weights.bin"));
        loaded = load_weights_expecting(&weights_path, config.chain.num_sites, n)?;
        EvalModel::Network(&loaded)
    };

    let report = run_experiment(&model, &experiment)?;
    let report_path = dir.join("report.csv");
    let summary_path = dir.join("summary.json");
    write_report_csv(&report, BufWriter::new(File::create(&report_path)?))?;
    write_summary_json(&report, BufWriter::new(File::create(&summary_path)?))?;
    let mut outputs = vec![report_path, summary_path];

    for slice in &eval_section.slices {
        if slice.swept == 0 || slice.swept > n {
            return Err(Error::InvalidConfig(format!(
                "slice swept index {} outside 1..={n}",
                slice.swept
            )));
        }
        let fixed: Vec<(usize, f64)> = slice
            .fixed
            .iter()
            .map(|f| {
                if f.axis == 0 || f.axis > n {
                    return Err(Error::InvalidConfig(format!(
                        "slice fixed axis {} outside 1..={n}",
                        f.axis
                    )));
                }
                Ok((f.axis - 1, f.value))
            })
            .collect::<Result<_>>()?;
        let points = slice_report(&report, &fixed, slice.swept - 1, slice.tolerance)?;
        let slices_dir = dir.join("slices");
        create_dir(&slices_dir)?;
        let path = slices_dir.join(format!("slice_J{}.csv", slice.swept));
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "J{},m_variance,crb", slice.swept)?;
        for point in &points {
            writeln!(out, "{},{},{}", point.swept, point.scaled_variance, point.crb)?;
        }
        out.flush()?;
        outputs.push(path);
    }

    let medians: Vec<String> = report
        .quantiles
        .q50
        .iter()
        .enumerate()
        .map(|(i, q)| format!("J{}: {q:.3}", i + 1))
        .collect();
    println!(
        "evaluate: {} points × {} replicas, median M·Δ²J/CRB = [{}]",
        report.points.len(),
        experiment.replicas,
        medians.join(", ")
    );
    write_manifest(&dir, "evaluate", config, threads, &outputs)?;
    Ok(())
}

/// `report`: turn an estimation report into a human-readable summary and a
/// long-format CSV for plotting.
pub fn cmd_report(
    config: &RunConfig,
    out_root: &Path,
    threads: usize,
    input: Option<&Path>,
) -> Result<()> {
    let input_dir = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_root.join("evaluate"));
    let dir = out_root.join("report");
    create_dir(&dir)?;

    let csv_path = input_dir.join("report.csv");
    let json_path = input_dir.join("summary.json");
    if !csv_path.exists() || !json_path.exists() {
        return Err(Error::EmptySelection(format!(
            "no estimation report under {}",
            input_dir.display()
        )));
    }
    let points = ctqwalk_core::eval::read_report_csv(&csv_path)?;
    let summary = read_summary_json(&json_path)?;
    let report = EstimationReport {
        points,
        quantiles: summary.quantiles.clone(),
        echo: summary.echo.clone(),
    };
    // The stored quantiles must be reproducible from the stored points.
    let recomputed = ratio_summary(&report, Region::All)?;
    if recomputed != summary.quantiles {
        return Err(Error::CorruptFile {
            path: json_path.display().to_string(),
            reason: "stored quantiles do not match the stored points".into(),
        });
    }

    let n = report.echo.neighbour_order;
    let summary_path = dir.join("summary.txt");
    let mut out = BufWriter::new(File::create(&summary_path)?);
    writeln!(out, "experiment report")?;
    writeln!(out, "model={} hash={}", report.echo.model, report.echo.model_hash.as_deref().unwrap_or("-"))?;
    writeln!(out, "config_digest={:016x}", config_digest(config)?)?;
    writeln!(
        out,
        "points={} replicas={} resources={} seed={}",
        report.echo.n_points, report.echo.replicas, report.echo.resources, report.echo.seed
    )?;
    writeln!(out)?;
    writeln!(out, "ratio M·Δ²J / CRB quantiles per coupling")?;
    writeln!(out, "coupling      q05      q25      q50      q75      q95")?;
    for i in 0..n {
        writeln!(
            out,
            "J{:<10} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            i + 1,
            recomputed.q05[i],
            recomputed.q25[i],
            recomputed.q50[i],
            recomputed.q75[i],
            recomputed.q95[i]
        )?;
    }
    out.flush()?;

    let long_path = dir.join("long.csv");
    let mut long = BufWriter::new(File::create(&long_path)?);
    writeln!(long, "point,coupling,J,mean,variance,bias,crb,ratio,status")?;
    for (index, point) in report.points.iter().enumerate() {
        for i in 0..n {
            writeln!(
                long,
                "{index},{},{},{},{},{},{},{},{}",
                i + 1,
                point.couplings[i],
                point.mean_estimate[i],
                point.variance[i],
                point.bias[i],
                point.crb[i],
                point.ratio[i],
                point.status.as_str()
            )?;
        }
    }
    long.flush()?;

    println!(
        "report: {} points summarised, medians = [{}]",
        report.points.len(),
        recomputed
            .q50
            .iter()
            .enumerate()
            .map(|(i, q)| format!("J{}: {q:.3}", i + 1))
            .collect::<Vec<_>>()
            .join(", ")
    );
    write_manifest(&dir, "report", config, threads, &[summary_path, long_path])?;
    Ok(())
}


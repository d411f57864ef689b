//! Training-data pipeline: sample coupling vectors, turn site probabilities
//! into expected counts for a resource budget, bootstrap Poisson noise, and
//! assemble train/validation splits.
//!
//! Every stage draws from a stream derived from `(seed, stage tag, sample
//! index)`, so parallel generation is order-independent and the whole dataset
//! is reproducible from the configuration alone.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::ctqw::{
    build_hamiltonian, eigendecompose, site_probabilities, ChainSpec, InitialStateSpec,
    WalkerState, COUPLING_MAX, COUPLING_MIN,
};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Default cap on the estimated in-memory dataset size.
pub const DEFAULT_MEMORY_BUDGET: u64 = 6 * 1024 * 1024 * 1024;

/// One labelled count vector: the couplings that generated it and the
/// (expected or bootstrapped) counts per site for `resources` total shots.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub sample_id: u64,
    pub replica_id: u32,
    pub couplings: Vec<f64>,
    pub counts: Vec<f64>,
    pub resources: u64,
}

impl CountRecord {
    /// Counts rescaled to empirical probabilities, the network input.
    pub fn features(&self) -> Vec<f64> {
        let m = self.resources as f64;
        self.counts.iter().map(|c| c / m).collect()
    }
}

/// Configuration echo stored with every dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub num_sites: usize,
    pub neighbour_order: usize,
    pub time: f64,
    pub resources: u64,
    pub n_samp: usize,
    pub n_mc: usize,
    pub low: f64,
    pub high: f64,
    pub seed: u64,
    pub initial_state: InitialStateSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<CountRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Train/validation pair with replicas of one base sample always landing in
/// the same split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub fraction: f64,
}

fn coupling_sample(n: usize, low: f64, high: f64, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, "couplings", index);
    (0..n)
        .map(|_| rand::Rng::random_range(&mut rng, low..high))
        .collect()
}

/// Draws `count` i.i.d. coupling vectors uniform in `[low, high]^n`.
///
/// Vector `i` comes from its own derived stream, so the result does not
/// depend on evaluation order.
pub fn sample_couplings(n: usize, count: usize, low: f64, high: f64, seed: u64) -> Vec<Vec<f64>> {
    assert!(low < high, "need low < high, got [{low}, {high}]");
    assert!(
        low >= COUPLING_MIN && high <= COUPLING_MAX,
        "sampling range [{low}, {high}] outside the coupling domain"
    );
    assert!(count >= 1 && n >= 1);
    (0..count as u64)
        .into_par_iter()
        .map(|i| coupling_sample(n, low, high, seed, i))
        .collect()
}

/// Expected counts `π_x = M · p_x(t, J)` for one coupling point.
pub fn expected_counts(
    spec: &ChainSpec,
    psi0: &WalkerState,
    t: f64,
    resources: u64,
) -> Result<CountRecord> {
    if resources == 0 {
        return Err(Error::InvalidConfig("resources must be at least 1".into()));
    }
    let state = eigendecompose(&build_hamiltonian(spec))?.evolve(psi0, t);
    let probabilities = site_probabilities(&state, t);
    let m = resources as f64;
    Ok(CountRecord {
        sample_id: 0,
        replica_id: 0,
        couplings: spec.couplings().to_vec(),
        counts: probabilities.probabilities().iter().map(|p| m * p).collect(),
        resources,
    })
}

/// Draws `n_mc` Poisson replicas of a count record: each site count is
/// replaced by a draw from `Poisson(count)`, labels are copied unchanged.
/// The stream is derived from `(seed, record.sample_id)`.
pub fn poisson_bootstrap(record: &CountRecord, n_mc: usize, seed: u64) -> Vec<CountRecord> {
    let mut rng = stream_rng(seed, "bootstrap", record.sample_id);
    (0..n_mc)
        .map(|replica| {
            let counts = record
                .counts
                .iter()
                .map(|&mean| {
                    if mean > 0.0 {
                        Poisson::new(mean).expect("positive finite mean").sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect();
            CountRecord {
                sample_id: record.sample_id,
                replica_id: replica as u32,
                couplings: record.couplings.clone(),
                counts,
                resources: record.resources,
            }
        })
        .collect()
}

/// Full dataset-generation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub num_sites: usize,
    pub neighbour_order: usize,
    pub initial_state: InitialStateSpec,
    pub time: f64,
    pub resources: u64,
    pub n_samp: usize,
    pub n_mc: usize,
    pub low: f64,
    pub high: f64,
    pub fraction: f64,
    pub seed: u64,
    pub memory_budget: u64,
    /// Keep the validation split at the expected (noise-free) counts, one
    /// record per base sample, instead of bootstrapped replicas.
    pub noiseless_validation: bool,
}

impl DatasetConfig {
    fn validate_parameters(&self) -> Result<()> {
        if self.n_samp < 2 {
            return Err(Error::InvalidConfig(
                "need at least 2 base samples to split".into(),
            ));
        }
        if self.n_mc < 1 {
            return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
        }
        if self.fraction.is_nan() || self.fraction <= 0.0 || self.fraction >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "split fraction must lie in (0, 1), got {}",
                self.fraction
            )));
        }
        if self.low.is_nan()
            || self.high.is_nan()
            || self.low >= self.high
            || self.low < COUPLING_MIN
            || self.high > COUPLING_MAX
        {
            return Err(Error::InvalidConfig(format!(
                "sampling range [{}, {}] must be increasing within [{COUPLING_MIN}, {COUPLING_MAX}]",
                self.low, self.high
            )));
        }
        if !self.time.is_finite() {
            return Err(Error::InvalidConfig("evolution time must be finite".into()));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.validate_parameters()?;
        let estimate = self.estimated_bytes();
        if estimate > self.memory_budget {
            return Err(Error::MemoryBudget {
                required: estimate,
                budget: self.memory_budget,
            });
        }
        Ok(())
    }

    /// Rough in-memory footprint of the assembled dataset.
    pub fn estimated_bytes(&self) -> u64 {
        let per_record = 8 * (self.neighbour_order + self.num_sites) as u64 + 128;
        (self.n_samp as u64) * (self.n_mc as u64) * per_record
    }

    fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            num_sites: self.num_sites,
            neighbour_order: self.neighbour_order,
            time: self.time,
            resources: self.resources,
            n_samp: self.n_samp,
            n_mc: self.n_mc,
            low: self.low,
            high: self.high,
            seed: self.seed,
            initial_state: self.initial_state.clone(),
        }
    }

    fn train_bases(&self) -> usize {
        let raw = (self.fraction * self.n_samp as f64).round() as usize;
        raw.clamp(1, self.n_samp - 1)
    }
}

/// Sampling, evolution, counts and bootstrap for one base sample; the unit
/// shared by the in-memory and streaming assembly paths.
fn sample_records(
    config: &DatasetConfig,
    template: &ChainSpec,
    psi0: &WalkerState,
    sample: u64,
    bootstrap: bool,
) -> Result<Vec<CountRecord>> {
    let couplings = coupling_sample(
        config.neighbour_order,
        config.low,
        config.high,
        config.seed,
        sample,
    );
    let spec = template.with_couplings(&couplings)?;
    let mut expected = expected_counts(&spec, psi0, config.time, config.resources)?;
    expected.sample_id = sample;
    if bootstrap {
        Ok(poisson_bootstrap(&expected, config.n_mc, config.seed))
    } else {
        Ok(vec![expected])
    }
}

/// Runs sample → evolve → counts → bootstrap → split.
///
/// The split is by base coupling sample, so every replica of one coupling
/// vector lands in the same half and no label crosses the train/validation
/// boundary. Configurations whose in-memory footprint would exceed the
/// budget are rejected; use [`stream_dataset`] for those.
pub fn build_dataset(config: &DatasetConfig) -> Result<SplitDataset> {
    config.validate()?;
    let template = ChainSpec::new(config.num_sites, vec![0.0; config.neighbour_order])?;
    let psi0 = config.initial_state.build(&template)?;

    let train_bases = config.train_bases();
    let per_sample: Vec<Vec<CountRecord>> = (0..config.n_samp as u64)
        .into_par_iter()
        .map(|sample| {
            let bootstrap = !config.noiseless_validation || (sample as usize) < train_bases;
            sample_records(config, &template, &psi0, sample, bootstrap)
        })
        .collect::<Result<_>>()?;

    let mut train = Vec::with_capacity(train_bases * config.n_mc);
    let mut validation = Vec::with_capacity((config.n_samp - train_bases) * config.n_mc);
    for (sample, records) in per_sample.into_iter().enumerate() {
        if sample < train_bases {
            train.extend(records);
        } else {
            validation.extend(records);
        }
    }

    let meta = config.meta();
    Ok(SplitDataset {
        train: Dataset {
            meta: meta.clone(),
            records: train,
        },
        validation: Dataset {
            meta,
            records: validation,
        },
        fraction: config.fraction,
    })
}

/// Base samples generated per streaming chunk.
const STREAM_CHUNK: usize = 256;

/// Generates the same records as [`build_dataset`] but writes them straight
/// to the two split files, holding only one chunk of base samples in memory.
/// Returns the record counts written to (train, validation).
pub fn stream_dataset(
    config: &DatasetConfig,
    train_path: &Path,
    validation_path: &Path,
    format: DatasetFormat,
) -> Result<(usize, usize)> {
    config.validate_parameters()?;
    let template = ChainSpec::new(config.num_sites, vec![0.0; config.neighbour_order])?;
    let psi0 = config.initial_state.build(&template)?;
    let meta = config.meta();
    let train_bases = config.train_bases();
    let train_records = train_bases * config.n_mc;
    let validation_replicas = if config.noiseless_validation { 1 } else { config.n_mc };
    let validation_records = (config.n_samp - train_bases) * validation_replicas;

    let mut train_writer = DatasetWriter::create(train_path, &meta, format, train_records)?;
    let mut validation_writer =
        DatasetWriter::create(validation_path, &meta, format, validation_records)?;
    for start in (0..config.n_samp).step_by(STREAM_CHUNK) {
        let end = (start + STREAM_CHUNK).min(config.n_samp);
        let chunk: Vec<Vec<CountRecord>> = (start as u64..end as u64)
            .into_par_iter()
            .map(|sample| {
                let bootstrap =
                    !config.noiseless_validation || (sample as usize) < train_bases;
                sample_records(config, &template, &psi0, sample, bootstrap)
            })
            .collect::<Result<_>>()?;
        for (offset, records) in chunk.into_iter().enumerate() {
            let writer = if start + offset < train_bases {
                &mut train_writer
            } else {
                &mut validation_writer
            };
            for record in &records {
                writer.push(record)?;
            }
        }
    }
    train_writer.finish()?;
    validation_writer.finish()?;
    Ok((train_records, validation_records))
}

// ---------------------------------------------------------------------------
// File format: a key-value text header followed by CSV rows or fixed-width
// binary records.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetFormat::Csv => "csv",
            DatasetFormat::Binary => "binary",
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DatasetFormat::Csv),
            "binary" => Ok(DatasetFormat::Binary),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset format {other:?}, expected csv or binary"
            ))),
        }
    }
}

const DATASET_MAGIC: &str = "# ctqwalk dataset v1";

fn write_header<W: Write>(
    w: &mut W,
    meta: &DatasetMeta,
    format: DatasetFormat,
    records: usize,
) -> Result<()> {
    writeln!(w, "{DATASET_MAGIC}")?;
    writeln!(w, "# format={}", format.as_str())?;
    writeln!(w, "# num_sites={}", meta.num_sites)?;
    writeln!(w, "# neighbour_order={}", meta.neighbour_order)?;
    writeln!(w, "# time={}", meta.time)?;
    writeln!(w, "# resources={}", meta.resources)?;
    writeln!(w, "# n_samp={}", meta.n_samp)?;
    writeln!(w, "# n_mc={}", meta.n_mc)?;
    writeln!(w, "# low={}", meta.low)?;
    writeln!(w, "# high={}", meta.high)?;
    writeln!(w, "# seed={}", meta.seed)?;
    writeln!(
        w,
        "# initial_state={}",
        serde_json::to_string(&meta.initial_state)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
    )?;
    writeln!(w, "# records={records}")?;
    writeln!(w, "# end")?;
    Ok(())
}

/// Incremental dataset writer; lets the generation pipeline stream records to
/// disk without materialising the dataset.
pub struct DatasetWriter {
    out: BufWriter<File>,
    format: DatasetFormat,
    expected: usize,
    written: usize,
    path: String,
}

impl DatasetWriter {
    pub fn create(
        path: &Path,
        meta: &DatasetMeta,
        format: DatasetFormat,
        records: usize,
    ) -> Result<Self> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        write_header(&mut out, meta, format, records)?;
        if format == DatasetFormat::Csv {
            let mut header: Vec<String> = vec!["sample_id".into(), "replica_id".into()];
            header.extend((1..=meta.neighbour_order).map(|i| format!("J{i}")));
            header.extend((1..=meta.num_sites).map(|x| format!("c{x}")));
            writeln!(out, "{}", header.join(","))?;
        }
        Ok(DatasetWriter {
            out,
            format,
            expected: records,
            written: 0,
            path: path.display().to_string(),
        })
    }

    pub fn push(&mut self, record: &CountRecord) -> Result<()> {
        match self.format {
            DatasetFormat::Csv => {
                let mut fields: Vec<String> =
                    vec![record.sample_id.to_string(), record.replica_id.to_string()];
                fields.extend(record.couplings.iter().map(|v| format!("{v}")));
                fields.extend(record.counts.iter().map(|v| format!("{v}")));
                writeln!(self.out, "{}", fields.join(","))?;
            }
            DatasetFormat::Binary => {
                self.out.write_all(&record.sample_id.to_le_bytes())?;
                self.out.write_all(&record.replica_id.to_le_bytes())?;
                for value in record.couplings.iter().chain(&record.counts) {
                    self.out.write_all(&value.to_le_bytes())?;
                }
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::CorruptFile {
                path: self.path,
                reason: format!(
                    "header promised {} records, wrote {}",
                    self.expected, self.written
                ),
            });
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Writes a dataset to one self-describing file.
pub fn write_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    let mut writer = DatasetWriter::create(path, &dataset.meta, format, dataset.len())?;
    for record in &dataset.records {
        writer.push(record)?;
    }
    writer.finish()
}

fn header_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, fields: &[(String, String)], key: &str) -> Result<T> {
    let raw = fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| header_error(path, format!("missing header field {key}")))?;
    raw.parse()
        .map_err(|_| header_error(path, format!("bad header field {key}={raw}")))
}

/// Reads a dataset written by [`write_dataset`] or [`DatasetWriter`]; the
/// format is taken from the header.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut fields = Vec::new();
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != DATASET_MAGIC {
        return Err(header_error(path, "not a ctqwalk dataset"));
    }
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(header_error(path, "truncated header"));
        }
        let trimmed = line.trim_end();
        if trimmed == "# end" {
            break;
        }
        let body = trimmed
            .strip_prefix("# ")
            .ok_or_else(|| header_error(path, format!("unexpected header line {trimmed:?}")))?;
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| header_error(path, format!("unexpected header line {trimmed:?}")))?;
        fields.push((key.to_string(), value.to_string()));
    }

    let format: String = parse_field(path, &fields, "format")?;
    let initial_state_raw: String = parse_field(path, &fields, "initial_state")?;
    let meta = DatasetMeta {
        num_sites: parse_field(path, &fields, "num_sites")?,
        neighbour_order: parse_field(path, &fields, "neighbour_order")?,
        time: parse_field(path, &fields, "time")?,
        resources: parse_field(path, &fields, "resources")?,
        n_samp: parse_field(path, &fields, "n_samp")?,
        n_mc: parse_field(path, &fields, "n_mc")?,
        low: parse_field(path, &fields, "low")?,
        high: parse_field(path, &fields, "high")?,
        seed: parse_field(path, &fields, "seed")?,
        initial_state: serde_json::from_str(&initial_state_raw)
            .map_err(|e| header_error(path, format!("bad initial_state: {e}")))?,
    };
    let expected: usize = parse_field(path, &fields, "records")?;

    let records = match format.as_str() {
        "csv" => read_csv_records(path, reader, &meta, expected)?,
        "binary" => read_binary_records(path, reader, &meta, expected)?,
        other => return Err(header_error(path, format!("unknown format {other:?}"))),
    };
    Ok(Dataset { meta, records })
}

fn read_csv_records(
    path: &Path,
    reader: BufReader<File>,
    meta: &DatasetMeta,
    expected: usize,
) -> Result<Vec<CountRecord>> {
    let n = meta.neighbour_order;
    let width = 2 + n + meta.num_sites;
    let mut records = Vec::with_capacity(expected);
    let mut lines = reader.lines();
    let _header = lines
        .next()
        .ok_or_else(|| header_error(path, "missing csv column header"))??;
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(header_error(
                path,
                format!("expected {width} fields, got {}", fields.len()),
            ));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| header_error(path, format!("bad number {s:?}")))
        };
        records.push(CountRecord {
            sample_id: fields[0]
                .parse()
                .map_err(|_| header_error(path, format!("bad sample_id {:?}", fields[0])))?,
            replica_id: fields[1]
                .parse()
                .map_err(|_| header_error(path, format!("bad replica_id {:?}", fields[1])))?,
            couplings: fields[2..2 + n].iter().map(|s| parse(s)).collect::<Result<_>>()?,
            counts: fields[2 + n..].iter().map(|s| parse(s)).collect::<Result<_>>()?,
            resources: meta.resources,
        });
    }
    if records.len() != expected {
        return Err(header_error(
            path,
            format!("header promised {expected} records, found {}", records.len()),
        ));
    }
    Ok(records)
}

fn read_binary_records(
    path: &Path,
    mut reader: BufReader<File>,
    meta: &DatasetMeta,
    expected: usize,
) -> Result<Vec<CountRecord>> {
    let n = meta.neighbour_order;
    let mut records = Vec::with_capacity(expected);
    let mut buffer = vec![0u8; 8 + 4 + 8 * (n + meta.num_sites)];
    for _ in 0..expected {
        reader.read_exact(&mut buffer).map_err(|_| {
            header_error(path, format!("truncated at record {}", records.len()))
        })?;
        let sample_id = u64::from_le_bytes(buffer[0..8].try_into().unwrap());
        let replica_id = u32::from_le_bytes(buffer[8..12].try_into().unwrap());
        let mut values = buffer[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        records.push(CountRecord {
            sample_id,
            replica_id,
            couplings: values.by_ref().take(n).collect(),
            counts: values.collect(),
            resources: meta.resources,
        });
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest)? != 0 {
        return Err(header_error(path, "trailing bytes after the last record"));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_config() -> DatasetConfig {
        DatasetConfig {
            num_sites: 5,
            neighbour_order: 2,
            initial_state: InitialStateSpec::Basis { site: 3 },
            time: 1.5,
            resources: 10_000,
            n_samp: 4,
            n_mc: 2,
            low: -0.2,
            high: 1.2,
            fraction: 0.5,
            seed: 11,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            noiseless_validation: false,
        }
    }

    #[test]
    fn coupling_samples_respect_bounds_and_seed() {
        let a = sample_couplings(2, 512, -0.2, 1.2, 9);
        let b = sample_couplings(2, 512, -0.2, 1.2, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 512);
        for pair in &a {
            assert_eq!(pair.len(), 2);
            assert!(pair.iter().all(|&j| (-0.2..1.2).contains(&j)));
        }
        let c = sample_couplings(2, 512, -0.2, 1.2, 10);
        assert_ne!(a, c);
        // spread sanity: empirical extremes approach the bounds
        let min = a.iter().flatten().cloned().fold(f64::MAX, f64::min);
        let max = a.iter().flatten().cloned().fold(f64::MIN, f64::max);
        assert!(min < 0.0 && max > 1.0);
    }

    #[test]
    fn expected_counts_sum_to_resources() {
        let spec = ChainSpec::new(5, vec![0.7, 0.1]).unwrap();
        let psi0 = WalkerState::basis(5, 3).unwrap();
        let record = expected_counts(&spec, &psi0, 2.0, 200_000).unwrap();
        let total: f64 = record.counts.iter().sum();
        assert!((total - 200_000.0).abs() / 200_000.0 < 1e-6);
        assert_eq!(record.couplings, vec![0.7, 0.1]);
    }

    #[test]
    fn expected_counts_of_localized_state_at_t_zero() {
        let spec = ChainSpec::new(4, vec![0.5]).unwrap();
        let psi0 = WalkerState::basis(4, 1).unwrap();
        let record = expected_counts(&spec, &psi0, 0.0, 100).unwrap();
        assert!((record.counts[0] - 100.0).abs() < 1e-9);
        assert!(record.counts[1..].iter().all(|&c| c.abs() < 1e-9));
    }

    #[test]
    fn expected_counts_uniform_state() {
        let spec = ChainSpec::new(10, vec![0.5]).unwrap();
        let amp = 1.0 / (10.0f64).sqrt();
        let psi0 = WalkerState::new(vec![num_complex::Complex64::new(amp, 0.0); 10]).unwrap();
        let record = expected_counts(&spec, &psi0, 0.0, 100_000).unwrap();
        for &c in &record.counts {
            assert!((c - 10_000.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bootstrap_recovers_the_mean() {
        let base = CountRecord {
            sample_id: 3,
            replica_id: 0,
            couplings: vec![0.4],
            counts: vec![20_000.0, 5.0, 0.0],
            resources: 20_005,
        };
        let replicas = poisson_bootstrap(&base, 500, 77);
        assert_eq!(replicas.len(), 500);
        for (i, r) in replicas.iter().enumerate() {
            assert_eq!(r.replica_id, i as u32);
            assert_eq!(r.sample_id, 3);
            assert_eq!(r.couplings, base.couplings);
            assert_eq!(r.counts[2], 0.0, "Poisson(0) must stay 0");
        }
        let mean: f64 = replicas.iter().map(|r| r.counts[0]).sum::<f64>() / 500.0;
        let standard_error = (20_000.0f64 / 500.0).sqrt();
        assert!(
            (mean - 20_000.0).abs() < 4.0 * standard_error,
            "mean {mean} too far from 20000"
        );
    }

    #[test]
    fn bootstrap_variance_matches_mean() {
        let base = CountRecord {
            sample_id: 0,
            replica_id: 0,
            couplings: vec![0.4],
            counts: vec![10_000.0],
            resources: 10_000,
        };
        let n_mc = 10_000;
        let replicas = poisson_bootstrap(&base, n_mc, 5);
        let mean: f64 = replicas.iter().map(|r| r.counts[0]).sum::<f64>() / n_mc as f64;
        let variance: f64 = replicas
            .iter()
            .map(|r| (r.counts[0] - mean).powi(2))
            .sum::<f64>()
            / n_mc as f64;
        assert!((variance - mean).abs() / mean < 0.1, "var {variance} vs mean {mean}");
    }

    #[test]
    fn toy_dataset_bookkeeping() {
        let split = build_dataset(&toy_config()).unwrap();
        assert_eq!(split.train.len(), 4);
        assert_eq!(split.validation.len(), 4);
        for train_record in &split.train.records {
            for val_record in &split.validation.records {
                assert_ne!(train_record.couplings, val_record.couplings);
            }
        }
        // replicas of a base sample stay together
        assert!(split.train.records.iter().all(|r| r.sample_id < 2));
        assert!(split.validation.records.iter().all(|r| r.sample_id >= 2));
    }

    #[test]
    fn noiseless_validation_flag() {
        let config = DatasetConfig {
            noiseless_validation: true,
            ..toy_config()
        };
        let split = build_dataset(&config).unwrap();
        assert_eq!(split.train.len(), 4, "train keeps its replicas");
        assert_eq!(split.validation.len(), 2, "one noise-free record per base");
        let m = config.resources as f64;
        for record in &split.validation.records {
            let total: f64 = record.counts.iter().sum();
            assert!((total - m).abs() / m < 1e-6, "expected counts are exact");
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = build_dataset(&toy_config()).unwrap();
        let b = build_dataset(&toy_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_dataset_is_rejected() {
        let config = DatasetConfig {
            n_samp: 1 << 20,
            n_mc: 1 << 20,
            ..toy_config()
        };
        match build_dataset(&config) {
            Err(Error::MemoryBudget { .. }) => {}
            other => panic!("expected MemoryBudget, got {other:?}"),
        }
    }

    #[test]
    fn file_round_trip_both_formats() {
        let split = build_dataset(&toy_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for format in [DatasetFormat::Csv, DatasetFormat::Binary] {
            let path = dir.path().join(format!("train.{}", format.as_str()));
            write_dataset(&split.train, &path, format).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(split.train, back, "{format:?} round trip");
        }
    }

    #[test]
    fn streaming_matches_the_in_memory_path_byte_for_byte() {
        let config = DatasetConfig {
            n_samp: 10,
            ..toy_config()
        };
        let split = build_dataset(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let memory_train = dir.path().join("mem_train.bin");
        let memory_val = dir.path().join("mem_val.bin");
        write_dataset(&split.train, &memory_train, DatasetFormat::Binary).unwrap();
        write_dataset(&split.validation, &memory_val, DatasetFormat::Binary).unwrap();

        let streamed_train = dir.path().join("stream_train.bin");
        let streamed_val = dir.path().join("stream_val.bin");
        let (train_count, val_count) =
            stream_dataset(&config, &streamed_train, &streamed_val, DatasetFormat::Binary)
                .unwrap();
        assert_eq!(train_count, split.train.len());
        assert_eq!(val_count, split.validation.len());
        assert_eq!(
            std::fs::read(&memory_train).unwrap(),
            std::fs::read(&streamed_train).unwrap()
        );
        assert_eq!(
            std::fs::read(&memory_val).unwrap(),
            std::fs::read(&streamed_val).unwrap()
        );
    }

    #[test]
    fn reader_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.csv");
        std::fs::write(&path, "something else\n").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::CorruptFile { .. })
        ));

        let split = build_dataset(&toy_config()).unwrap();
        let path = dir.path().join("train.bin");
        write_dataset(&split.train, &path, DatasetFormat::Binary).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::CorruptFile { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn features_recover_probabilities(seed in 0u64..1000) {
            let config = DatasetConfig { seed, resources: 200_000, ..toy_config() };
            let split = build_dataset(&config).unwrap();
            let m = config.resources as f64;
            for record in split.train.records.iter().chain(&split.validation.records) {
                let total: f64 = record.features().iter().sum();
                prop_assert!((total - 1.0).abs() < 5.0 / m.sqrt());
            }
        }
    }
}

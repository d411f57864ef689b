//! Test-phase protocol: draw test points, replicate their counts through
//! Poisson noise, run the estimator, and compare the replica variance scaled
//! by the resource budget against the Cramér–Rao bound at the same point.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctqw::{ChainSpec, InitialStateSpec};
use crate::datagen::{expected_counts, poisson_bootstrap};
use crate::error::{Error, Result};
use crate::fisher::{crb, fisher_matrix, GridAxis, GridSpec};
use crate::linalg::Mat;
use crate::nn::{params_hash, predict, NetworkParameters};
use crate::rng::{derive_seed, stream_rng};

/// Where the test couplings come from. All sources live in `[0, 1]^n`.
#[derive(Debug, Clone, PartialEq)]
pub enum TestPoints {
    /// Uniform random points, one derived stream per point.
    Random { count: usize, low: f64, high: f64 },
    /// Rectangular grid, same conventions as the information maps.
    Grid { axes: Vec<GridAxis> },
    /// Caller-supplied points.
    Explicit(Vec<Vec<f64>>),
}

impl TestPoints {
    fn materialize(&self, dimensions: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            TestPoints::Random { count, low, high } => {
                if *count == 0 {
                    return Err(Error::InvalidConfig("need at least one test point".into()));
                }
                if !(0.0..=1.0).contains(low) || !(0.0..=1.0).contains(high) || low >= high {
                    return Err(Error::InvalidConfig(format!(
                        "test range [{low}, {high}] must be increasing within [0, 1]"
                    )));
                }
                Ok((0..*count as u64)
                    .map(|i| {
                        let mut rng = stream_rng(seed, "test-points", i);
                        (0..dimensions).map(|_| rng.random_range(*low..*high)).collect()
                    })
                    .collect())
            }
            TestPoints::Grid { axes } => {
                if axes.len() != dimensions {
                    return Err(Error::InvalidConfig(format!(
                        "grid has {} axes, estimation needs {dimensions}",
                        axes.len()
                    )));
                }
                Ok(GridSpec::new(axes.clone())?.points())
            }
            TestPoints::Explicit(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidConfig("need at least one test point".into()));
                }
                for point in points {
                    if point.len() != dimensions
                        || point.iter().any(|j| !(0.0..=1.0).contains(j))
                    {
                        return Err(Error::InvalidConfig(format!(
                            "test point {point:?} outside [0, 1]^{dimensions}"
                        )));
                    }
                }
                Ok(points.clone())
            }
        }
    }
}

/// The estimator under test.
pub enum EvalModel<'a> {
    /// The trained network, fed replica counts rescaled by the resources.
    Network(&'a NetworkParameters),
    /// Returns the true couplings regardless of input; testing hook that
    /// bounds the protocol's own noise floor.
    PerfectOracle,
    /// Arbitrary estimator over the feature vector.
    Custom {
        name: &'a str,
        estimate: &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync),
    },
}

impl EvalModel<'_> {
    fn describe(&self) -> (String, Option<String>) {
        match self {
            EvalModel::Network(params) => (
                "network".into(),
                Some(format!("{:016x}", params_hash(params))),
            ),
            EvalModel::PerfectOracle => ("perfect-oracle".into(), None),
            EvalModel::Custom { name, .. } => (format!("custom:{name}"), None),
        }
    }
}

/// Full evaluation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_sites: usize,
    pub neighbour_order: usize,
    pub initial_state: InitialStateSpec,
    pub time: f64,
    pub resources: u64,
    pub replicas: usize,
    pub seed: u64,
    pub points: TestPoints,
    pub fisher_step: f64,
    pub fisher_floor: f64,
    pub condition_cap: f64,
}

/// Whether the bound exists at a test point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    SingularCrb,
}

impl EvalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalStatus::Ok => "ok",
            EvalStatus::SingularCrb => "singular_crb",
        }
    }
}

impl std::str::FromStr for EvalStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(EvalStatus::Ok),
            "singular_crb" => Ok(EvalStatus::SingularCrb),
            other => Err(Error::InvalidConfig(format!("unknown status {other:?}"))),
        }
    }
}

/// Replica statistics and bound comparison at one test point. `variance` is
/// the population variance over the Monte-Carlo replicas; `ratio` is
/// `M · variance / crb` per coupling, the quantity that should approach one
/// for an efficient estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStatistics {
    pub couplings: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub variance: Vec<f64>,
    pub bias: Vec<f64>,
    pub crb: Vec<f64>,
    pub ratio: Vec<f64>,
    pub status: EvalStatus,
}

/// Ratio quantiles per coupling at the 5, 25, 50, 75 and 95 percent levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioQuantiles {
    pub q05: Vec<f64>,
    pub q25: Vec<f64>,
    pub q50: Vec<f64>,
    pub q75: Vec<f64>,
    pub q95: Vec<f64>,
}

/// Configuration echo carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEcho {
    pub num_sites: usize,
    pub neighbour_order: usize,
    pub initial_state: InitialStateSpec,
    pub time: f64,
    pub resources: u64,
    pub replicas: usize,
    pub seed: u64,
    pub n_points: usize,
    pub fisher_step: f64,
    pub fisher_floor: f64,
    pub condition_cap: f64,
    pub model: String,
    pub model_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub points: Vec<PointStatistics>,
    pub quantiles: RatioQuantiles,
    pub echo: ExperimentEcho,
}

/// Region filter for ratio summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    All,
    /// Keep points with every coupling inside `[margin, 1 − margin]`.
    Interior { margin: f64 },
}

impl Region {
    fn contains(&self, couplings: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Interior { margin } => couplings
                .iter()
                .all(|j| *j >= *margin && *j <= 1.0 - *margin),
        }
    }
}

/// Runs the full test protocol: for each test point, compute the expected
/// counts, draw `replicas` Poisson replicas, estimate the couplings from each
/// replica's rescaled counts, and compare the replica variance against the
/// Cramér–Rao bound evaluated with the same step and floor.
///
/// Points run in parallel on derived streams; singular bounds are flagged,
/// never dropped, so the report covers the requested test set exactly.
pub fn run_experiment(model: &EvalModel, config: &ExperimentConfig) -> Result<EstimationReport> {
    if config.replicas == 0 {
        return Err(Error::InvalidConfig("need at least one replica".into()));
    }
    let n = config.neighbour_order;
    if let EvalModel::Network(params) = model {
        if params.config.input_width != config.num_sites
            || params.config.output_width != n
        {
            return Err(Error::ShapeMismatch(format!(
                "network is {}→{}, experiment needs {}→{n}",
                params.config.input_width, params.config.output_width, config.num_sites
            )));
        }
    }
    let template = ChainSpec::new(config.num_sites, vec![0.0; n])?;
    let psi0 = config.initial_state.build(&template)?;
    let points = config.points.materialize(n, config.seed)?;
    let bootstrap_seed = derive_seed(config.seed, "eval");
    let m = config.resources as f64;

    let points: Vec<PointStatistics> = points
        .into_par_iter()
        .enumerate()
        .map(|(index, couplings)| {
            let spec = template.with_couplings(&couplings)?;
            let mut expected = expected_counts(&spec, &psi0, config.time, config.resources)?;
            expected.sample_id = index as u64;
            let replicas = poisson_bootstrap(&expected, config.replicas, bootstrap_seed);

            let estimates: Vec<Vec<f64>> = match model {
                EvalModel::Network(params) => {
                    let mut features = Mat::zeros(replicas.len(), config.num_sites);
                    for (r, replica) in replicas.iter().enumerate() {
                        features.row_mut(r).copy_from_slice(&replica.features());
                    }
                    let outputs = predict(params, &features)?;
                    (0..outputs.rows()).map(|r| outputs.row(r).to_vec()).collect()
                }
                EvalModel::PerfectOracle => {
                    vec![couplings.clone(); replicas.len()]
                }
                EvalModel::Custom { estimate, .. } => replicas
                    .iter()
                    .map(|replica| {
                        let out = estimate(&replica.features());
                        if out.len() != n {
                            return Err(Error::ShapeMismatch(format!(
                                "custom estimator returned {} values, expected {n}",
                                out.len()
                            )));
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?,
            };

            let count = estimates.len() as f64;
            let mut mean = vec![0.0; n];
            for estimate in &estimates {
                for (m, e) in mean.iter_mut().zip(estimate) {
                    *m += e;
                }
            }
            for value in &mut mean {
                *value /= count;
            }
            let mut variance = vec![0.0; n];
            for estimate in &estimates {
                for (v, (e, mu)) in variance.iter_mut().zip(estimate.iter().zip(&mean)) {
                    *v += (e - mu) * (e - mu);
                }
            }
            for value in &mut variance {
                *value /= count;
            }
            let bias: Vec<f64> = mean.iter().zip(&couplings).map(|(m, j)| m - j).collect();

            let fisher = fisher_matrix(
                &spec,
                &psi0,
                config.time,
                config.fisher_step,
                config.fisher_floor,
            )?;
            let (crb_diag, status) = match crb(&fisher, config.condition_cap) {
                Ok(bound) => (bound.bounds().to_vec(), EvalStatus::Ok),
                Err(Error::SingularInformation { .. }) => {
                    (vec![f64::NAN; n], EvalStatus::SingularCrb)
                }
                Err(other) => return Err(other),
            };
            let ratio: Vec<f64> = variance
                .iter()
                .zip(&crb_diag)
                .map(|(v, c)| m * v / c)
                .collect();

            Ok(PointStatistics {
                couplings,
                mean_estimate: mean,
                variance,
                bias,
                crb: crb_diag,
                ratio,
                status,
            })
        })
        .collect::<Result<_>>()?;

    let quantiles = quantiles_over(&points, Region::All, n);
    let (model_name, model_hash) = model.describe();
    Ok(EstimationReport {
        echo: ExperimentEcho {
            num_sites: config.num_sites,
            neighbour_order: n,
            initial_state: config.initial_state.clone(),
            time: config.time,
            resources: config.resources,
            replicas: config.replicas,
            seed: config.seed,
            n_points: points.len(),
            fisher_step: config.fisher_step,
            fisher_floor: config.fisher_floor,
            condition_cap: config.condition_cap,
            model: model_name,
            model_hash,
        },
        points,
        quantiles,
    })
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let position = (sorted.len() - 1) as f64 * p;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    if lower == upper {
        sorted[lower]
    } else {
        sorted[lower] + (sorted[upper] - sorted[lower]) * (position - lower as f64)
    }
}

fn quantiles_over(points: &[PointStatistics], region: Region, n: usize) -> RatioQuantiles {
    let mut quantiles = RatioQuantiles {
        q05: vec![f64::NAN; n],
        q25: vec![f64::NAN; n],
        q50: vec![f64::NAN; n],
        q75: vec![f64::NAN; n],
        q95: vec![f64::NAN; n],
    };
    for i in 0..n {
        let mut ratios: Vec<f64> = points
            .iter()
            .filter(|point| point.status == EvalStatus::Ok && region.contains(&point.couplings))
            .map(|point| point.ratio[i])
            .collect();
        ratios.sort_by(f64::total_cmp);
        quantiles.q05[i] = quantile(&ratios, 0.05);
        quantiles.q25[i] = quantile(&ratios, 0.25);
        quantiles.q50[i] = quantile(&ratios, 0.50);
        quantiles.q75[i] = quantile(&ratios, 0.75);
        quantiles.q95[i] = quantile(&ratios, 0.95);
    }
    quantiles
}

/// Ratio quantiles restricted to a region of coupling space.
pub fn ratio_summary(report: &EstimationReport, region: Region) -> Result<RatioQuantiles> {
    let n = report.echo.neighbour_order;
    let kept = report
        .points
        .iter()
        .filter(|p| p.status == EvalStatus::Ok && region.contains(&p.couplings))
        .count();
    if kept == 0 {
        return Err(Error::EmptySelection(
            "no usable points inside the requested region".into(),
        ));
    }
    Ok(quantiles_over(&report.points, region, n))
}

/// One point of a one-dimensional slice through the report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicePoint {
    pub swept: f64,
    /// `M · Δ²J` for the swept coupling.
    pub scaled_variance: f64,
    /// Bound for the swept coupling (`NaN` at singular points).
    pub crb: f64,
}

/// Selects the points whose non-swept couplings match `fixed` within
/// `tolerance` and orders them by the swept coupling: the data behind the
/// slice plots.
pub fn slice_report(
    report: &EstimationReport,
    fixed: &[(usize, f64)],
    swept: usize,
    tolerance: f64,
) -> Result<Vec<SlicePoint>> {
    let n = report.echo.neighbour_order;
    if swept >= n || fixed.iter().any(|&(axis, _)| axis >= n || axis == swept) {
        return Err(Error::InvalidConfig(format!(
            "slice axes must be distinct and below {n}"
        )));
    }
    let m = report.echo.resources as f64;
    let mut points: Vec<SlicePoint> = report
        .points
        .iter()
        .filter(|point| {
            fixed
                .iter()
                .all(|&(axis, value)| (point.couplings[axis] - value).abs() <= tolerance)
        })
        .map(|point| SlicePoint {
            swept: point.couplings[swept],
            scaled_variance: m * point.variance[swept],
            crb: point.crb[swept],
        })
        .collect();
    if points.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no points match the slice at {fixed:?} within {tolerance}"
        )));
    }
    points.sort_by(|a, b| a.swept.total_cmp(&b.swept));
    Ok(points)
}

// ---------------------------------------------------------------------------
// Serialization: CSV per point plus a JSON summary.
// ---------------------------------------------------------------------------

/// Writes one row per test point: couplings, means, variances, biases,
/// bounds, ratios, status.
pub fn write_report_csv<W: Write>(report: &EstimationReport, mut w: W) -> Result<()> {
    let n = report.echo.neighbour_order;
    let mut header = Vec::new();
    for prefix in ["J", "mean", "var", "bias", "crb", "ratio"] {
        for i in 1..=n {
            header.push(format!("{prefix}{i}"));
        }
    }
    header.push("status".into());
    writeln!(w, "{}", header.join(","))?;
    for point in &report.points {
        let mut fields = Vec::with_capacity(6 * n + 1);
        for block in [
            &point.couplings,
            &point.mean_estimate,
            &point.variance,
            &point.bias,
            &point.crb,
            &point.ratio,
        ] {
            fields.extend(block.iter().map(|v| format!("{v}")));
        }
        fields.push(point.status.as_str().into());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads the rows written by [`write_report_csv`].
pub fn read_report_csv(path: &Path) -> Result<Vec<PointStatistics>> {
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.display().to_string(),
        reason,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| corrupt("empty report".into()))??;
    let columns: Vec<&str> = header.split(',').collect();
    let n = columns.iter().filter(|c| c.starts_with('J')).count();
    if n == 0 || columns.len() != 6 * n + 1 {
        return Err(corrupt(format!("unexpected header {header:?}")));
    }
    let mut points = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 * n + 1 {
            return Err(corrupt(format!("unexpected row width {}", fields.len())));
        }
        let parse_block = |start: usize| -> Result<Vec<f64>> {
            fields[start..start + n]
                .iter()
                .map(|s| {
                    s.parse()
                        .map_err(|_| corrupt(format!("bad number {s:?}")))
                })
                .collect()
        };
        points.push(PointStatistics {
            couplings: parse_block(0)?,
            mean_estimate: parse_block(n)?,
            variance: parse_block(2 * n)?,
            bias: parse_block(3 * n)?,
            crb: parse_block(4 * n)?,
            ratio: parse_block(5 * n)?,
            status: fields[6 * n].parse()?,
        });
    }
    if points.is_empty() {
        return Err(Error::EmptySelection("report has no points".into()));
    }
    Ok(points)
}

/// JSON half of the report: quantiles plus the configuration echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub echo: ExperimentEcho,
    pub quantiles: RatioQuantiles,
}

pub fn write_summary_json<W: Write>(report: &EstimationReport, w: W) -> Result<()> {
    let summary = ReportSummary {
        echo: report.echo.clone(),
        quantiles: report.quantiles.clone(),
    };
    serde_json::to_writer_pretty(w, &summary)
        .map_err(|e| Error::InvalidConfig(format!("summary serialization failed: {e}")))?;
    Ok(())
}

pub fn read_summary_json(path: &Path) -> Result<ReportSummary> {
    let file = File::open(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::CorruptFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

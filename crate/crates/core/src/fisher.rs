//! Fisher information of the site-occupation measurement with respect to the
//! couplings, and the Cramér–Rao bound obtained by inverting it.
//!
//! Derivatives of the site probabilities are taken by central finite
//! differences in coupling space. The information matrix is assembled as
//! `F_ij = Σ_x ∂_i p_x ∂_j p_x / p_x`, with a floor on the denominator at
//! sites where the probability vanishes; maps over coupling grids evaluate
//! points in parallel and record singular points inline.

use std::io::Write;

use rayon::prelude::*;

use crate::ctqw::{build_hamiltonian, eigendecompose, site_probabilities, ChainSpec, WalkerState};
use crate::ctqw::{COUPLING_MAX, COUPLING_MIN};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat, DEFAULT_MAX_SWEEPS};

/// Default central-difference step in coupling units.
pub const DEFAULT_STEP: f64 = 1e-4;
/// Default probability floor guarding the division in the information sum.
pub const DEFAULT_FLOOR: f64 = 1e-12;
/// Default condition-number cap beyond which the information matrix is
/// reported as singular.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// Fisher-information matrix of the position measurement at one coupling
/// point.
#[derive(Debug, Clone)]
pub struct FisherMatrix {
    entries: Mat,
    at_couplings: Vec<f64>,
    time: f64,
    step: f64,
    floored_sites: usize,
}

impl FisherMatrix {
    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn order(&self) -> usize {
        self.entries.rows()
    }

    pub fn at_couplings(&self) -> &[f64] {
        &self.at_couplings
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of sites whose probability fell below the floor while carrying
    /// a non-negligible derivative; nonzero values flag the point.
    pub fn floored_sites(&self) -> usize {
        self.floored_sites
    }
}

/// Diagonal of the inverse information matrix: the Cramér–Rao variance bound
/// per unit resource for each coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbDiagonal {
    bounds: Vec<f64>,
}

impl CrbDiagonal {
    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }
}

/// Matrix of central-difference probability derivatives: entry `(x, i)` is
/// `∂ p_x / ∂ J_i` at the couplings of `spec`.
pub fn probability_jacobian(
    spec: &ChainSpec,
    psi0: &WalkerState,
    t: f64,
    step: f64,
) -> Result<Mat> {
    if step.is_nan() || step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let n = spec.neighbour_order();
    let num_sites = spec.num_sites();
    for (i, &j) in spec.couplings().iter().enumerate() {
        if j - step < COUPLING_MIN || j + step > COUPLING_MAX {
            return Err(Error::StepOutsideDomain { index: i, step });
        }
    }

    let columns: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let shifted = |sign: f64| -> Result<Vec<f64>> {
                let mut couplings = spec.couplings().to_vec();
                couplings[i] += sign * step;
                let spec = spec.with_couplings(&couplings)?;
                let state = eigendecompose(&build_hamiltonian(&spec))?.evolve(psi0, t);
                Ok(site_probabilities(&state, t).probabilities().to_vec())
            };
            let plus = shifted(1.0)?;
            let minus = shifted(-1.0)?;
            Ok((0..num_sites)
                .map(|x| (plus[x] - minus[x]) / (2.0 * step))
                .collect())
        })
        .collect::<Result<_>>()?;

    Ok(Mat::from_fn(num_sites, n, |x, i| columns[i][x]))
}

/// Assembles the information matrix from the probability derivatives.
///
/// Sites whose probability falls below `floor` are dropped when their
/// derivatives are negligible (below `√floor`); otherwise the floored
/// denominator is used and the point is flagged through
/// [`FisherMatrix::floored_sites`].
pub fn fisher_matrix(
    spec: &ChainSpec,
    psi0: &WalkerState,
    t: f64,
    step: f64,
    floor: f64,
) -> Result<FisherMatrix> {
    if floor.is_nan() || floor <= 0.0 || !floor.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "probability floor must be positive, got {floor}"
        )));
    }
    let jacobian = probability_jacobian(spec, psi0, t, step)?;
    let state = eigendecompose(&build_hamiltonian(spec))?.evolve(psi0, t);
    let probabilities = site_probabilities(&state, t);

    let n = spec.neighbour_order();
    let derivative_cut = floor.sqrt();
    let mut entries = Mat::zeros(n, n);
    let mut floored_sites = 0;
    for (x, &p) in probabilities.probabilities().iter().enumerate() {
        let row = jacobian.row(x);
        if p < floor {
            if row.iter().all(|d| d.abs() < derivative_cut) {
                continue;
            }
            floored_sites += 1;
        }
        let denom = p.max(floor);
        for i in 0..n {
            for j in i..n {
                let term = row[i] * row[j] / denom;
                entries[(i, j)] += term;
                if i != j {
                    entries[(j, i)] += term;
                }
            }
        }
    }

    Ok(FisherMatrix {
        entries,
        at_couplings: spec.couplings().to_vec(),
        time: t,
        step,
        floored_sites,
    })
}

/// Diagonal of `F⁻¹`. Fails with [`Error::SingularInformation`] when the
/// condition number exceeds `condition_cap`, signalling a parameter
/// combination that is not identifiable at this point.
pub fn crb(fisher: &FisherMatrix, condition_cap: f64) -> Result<CrbDiagonal> {
    let (values, vectors) = sym_eigen(fisher.entries(), DEFAULT_MAX_SWEEPS)?;
    let n = values.len();
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition >= condition_cap {
        return Err(Error::SingularInformation {
            condition,
            cap: condition_cap,
        });
    }
    let bounds = (0..n)
        .map(|i| (0..n).map(|k| vectors[(i, k)].powi(2) / values[k]).sum())
        .collect();
    Ok(CrbDiagonal { bounds })
}

/// One coupling axis of a landscape grid: either swept over a closed
/// interval or held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridAxis {
    Sweep { low: f64, high: f64, count: usize },
    Fixed(f64),
}

impl GridAxis {
    fn len(&self) -> usize {
        match self {
            GridAxis::Sweep { count, .. } => *count,
            GridAxis::Fixed(_) => 1,
        }
    }

    fn value(&self, index: usize) -> f64 {
        match self {
            GridAxis::Sweep { low, high, count } => {
                low + (high - low) * index as f64 / (count - 1) as f64
            }
            GridAxis::Fixed(value) => *value,
        }
    }
}

/// Rectangular grid over coupling space, one axis per coupling dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one axis".into()));
        }
        for (i, axis) in axes.iter().enumerate() {
            match *axis {
                GridAxis::Sweep { low, high, count } => {
                    if count < 2 {
                        return Err(Error::InvalidConfig(format!(
                            "axis {i}: sweep needs at least 2 points, got {count}"
                        )));
                    }
                    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
                        return Err(Error::InvalidConfig(format!(
                            "axis {i}: sweep range [{low}, {high}] must be increasing within [0, 1]"
                        )));
                    }
                }
                GridAxis::Fixed(value) => {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(Error::InvalidConfig(format!(
                            "axis {i}: fixed value {value} outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(GridSpec { axes })
    }

    /// Uniform sweep on every axis.
    pub fn uniform(dimensions: usize, low: f64, high: f64, count: usize) -> Result<Self> {
        GridSpec::new(vec![GridAxis::Sweep { low, high, count }; dimensions])
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn dimensions(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(GridAxis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points in row-major order (first axis slowest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let total = self.len();
        let mut points = Vec::with_capacity(total);
        let mut indices = vec![0usize; self.axes.len()];
        for _ in 0..total {
            points.push(
                self.axes
                    .iter()
                    .zip(&indices)
                    .map(|(axis, &i)| axis.value(i))
                    .collect(),
            );
            for d in (0..self.axes.len()).rev() {
                indices[d] += 1;
                if indices[d] < self.axes[d].len() {
                    break;
                }
                indices[d] = 0;
            }
        }
        points
    }
}

/// Whether the Cramér–Rao bound exists at a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Ok,
    Singular,
}

impl PointStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Singular => "singular",
        }
    }
}

/// Landscape-map entry at one coupling point.
#[derive(Debug, Clone)]
pub struct FisherMapRecord {
    pub couplings: Vec<f64>,
    pub fisher: FisherMatrix,
    pub crb: Option<CrbDiagonal>,
    pub status: PointStatus,
}

/// Numerical knobs shared by the information-map evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherMapOptions {
    pub step: f64,
    pub floor: f64,
    pub condition_cap: f64,
}

impl Default for FisherMapOptions {
    fn default() -> Self {
        FisherMapOptions {
            step: DEFAULT_STEP,
            floor: DEFAULT_FLOOR,
            condition_cap: DEFAULT_CONDITION_CAP,
        }
    }
}

/// Evaluates the information matrix and Cramér–Rao bound over a coupling
/// grid. Points are processed in parallel; the output order is the grid
/// order regardless of scheduling, and singular points are recorded inline
/// rather than aborting the map.
pub fn fisher_map(
    num_sites: usize,
    psi0: &WalkerState,
    t: f64,
    grid: &GridSpec,
    options: &FisherMapOptions,
) -> Result<Vec<FisherMapRecord>> {
    if psi0.num_sites() != num_sites {
        return Err(Error::ShapeMismatch(format!(
            "state has {} sites, map asks for {num_sites}",
            psi0.num_sites()
        )));
    }
    grid.points()
        .into_par_iter()
        .map(|couplings| {
            let spec = ChainSpec::new(num_sites, couplings.clone())?;
            let fisher = fisher_matrix(&spec, psi0, t, options.step, options.floor)?;
            let (crb, status) = match crb(&fisher, options.condition_cap) {
                Ok(bound) => (Some(bound), PointStatus::Ok),
                Err(Error::SingularInformation { .. }) => (None, PointStatus::Singular),
                Err(other) => return Err(other),
            };
            Ok(FisherMapRecord {
                couplings,
                fisher,
                crb,
                status,
            })
        })
        .collect()
}

/// Mean of entry `(i, j)` of the information matrix across a map.
pub fn mean_entry(records: &[FisherMapRecord], i: usize, j: usize) -> f64 {
    records.iter().map(|r| r.fisher.entry(i, j)).sum::<f64>() / records.len() as f64
}

/// Writes a landscape map as CSV: couplings, the information matrix flattened
/// row-major, the bound diagonal (`nan` at singular points), and the status.
pub fn write_fisher_map_csv<W: Write>(records: &[FisherMapRecord], mut w: W) -> Result<()> {
    let n = match records.first() {
        Some(r) => r.fisher.order(),
        None => return Err(Error::EmptySelection("fisher map has no records".into())),
    };
    let mut header: Vec<String> = (1..=n).map(|i| format!("J{i}")).collect();
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("F{i}{j}"));
        }
    }
    for i in 1..=n {
        header.push(format!("CRB{i}"));
    }
    header.push("status".into());
    writeln!(w, "{}", header.join(","))?;

    for record in records {
        let mut fields: Vec<String> = record.couplings.iter().map(|v| format!("{v}")).collect();
        for i in 0..n {
            for j in 0..n {
                fields.push(format!("{}", record.fisher.entry(i, j)));
            }
        }
        match &record.crb {
            Some(bound) => fields.extend(bound.bounds().iter().map(|v| format!("{v}"))),
            None => fields.extend(std::iter::repeat_n("nan".to_string(), n)),
        }
        fields.push(record.status.as_str().to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

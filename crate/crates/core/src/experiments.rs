//! Seeded experiment harness.
//!
//! Every trial draws its frame, signal and measurement matrix from a seed
//! derived from the master seed, the cell parameters and the trial index.
//! Results therefore do not depend on the order of the grid or on scheduling.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{cosparse_signal, hadamard_frame, mutual_coherence, random_tight_frame, Frame};
use crate::qrip::{self, MeasurementEnsemble};
use crate::rng;
use crate::separation::{self, solve_split_analysis, SeparationProblem};
use crate::solvers::{LqProblem, SolverConfig, SolverMethod};

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 1e-4;

const RECOVERY_TAG: u64 = 0x5245_4356;
const SEPARATION_TAG: u64 = 0x5345_5041;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Figure1,
    PhaseTransition,
    SeparationSweep,
    BoundsTable,
}

/// Single-dictionary recovery: `n x d` frame, `m` measurements, `||D* f||_0 = s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub q: f64,
    pub s: usize,
}

/// Spikes plus orthonormal Hadamard separation in `R^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationCell {
    pub n: usize,
    pub m: usize,
    pub q: f64,
    pub s1: usize,
    pub s2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellParams {
    Recovery(RecoveryCell),
    Separation(SeparationCell),
}

impl CellParams {
    fn sort_key(&self) -> (f64, usize, usize, usize, usize) {
        match *self {
            CellParams::Recovery(c) => (c.q, c.s, c.m, c.n, c.d),
            CellParams::Separation(c) => (c.q, c.s1 + c.s2, c.m, c.n, c.s1),
        }
    }

    fn seed_labels(&self) -> Vec<u64> {
        match *self {
            CellParams::Recovery(c) => vec![
                RECOVERY_TAG,
                c.n as u64,
                c.d as u64,
                c.m as u64,
                c.q.to_bits(),
                c.s as u64,
            ],
            CellParams::Separation(c) => vec![
                SEPARATION_TAG,
                c.n as u64,
                c.m as u64,
                c.q.to_bits(),
                c.s1 as u64,
                c.s2 as u64,
            ],
        }
    }
}

/// Seed of trial `trial` of `cell`.
pub fn trial_seed(master_seed: u64, cell: &CellParams, trial: usize) -> u64 {
    let mut labels = cell.seed_labels();
    labels.push(trial as u64);
    rng::derive_seed(master_seed, &labels)
}

fn default_threshold() -> f64 {
    DEFAULT_SUCCESS_THRESHOLD
}

fn default_sigma() -> f64 {
    1.0
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub grid: Vec<CellParams>,
    pub trials_per_cell: usize,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub method: SolverMethod,
    /// Standard deviation of the Gaussian measurement entries.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Frame condition number used by bound tables.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidSpec("empty grid".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidSpec(
                "trials_per_cell must be at least 1".into(),
            ));
        }
        if !(self.success_threshold > 0.0) || !(self.sigma > 0.0) || !(self.kappa >= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "need positive success_threshold and sigma and kappa >= 1, got {}, {}, {}",
                self.success_threshold, self.sigma, self.kappa
            )));
        }
        let want_separation = self.kind == ExperimentKind::SeparationSweep;
        for cell in &self.grid {
            let q = match cell {
                CellParams::Recovery(c) if !want_separation => c.q,
                CellParams::Separation(c) if want_separation => c.q,
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "cell {cell:?} does not fit a {:?} experiment",
                        self.kind
                    )))
                }
            };
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidSpec(format!("q = {q} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub params: CellParams,
    /// Fraction of trials with relative error at most the threshold; failed trials count as misses.
    pub success_rate: f64,
    /// Over trials that produced an estimate; `None` if every trial failed.
    pub median_relative_error: Option<f64>,
    pub median_iterations: Option<f64>,
    /// Informational only.
    pub wall_time_ms: f64,
    pub trials: usize,
    /// Trials that returned an error.
    pub errors: usize,
    /// Mutual coherence of the dictionaries, for separation cells.
    pub mu1: Option<f64>,
}

struct TrialOutcome {
    relative_error: f64,
    iterations: usize,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

fn summarize(
    params: CellParams,
    outcomes: Vec<Result<TrialOutcome>>,
    threshold: f64,
    started: Instant,
    mu1: Option<f64>,
) -> CellResult {
    let trials = outcomes.len();
    let ok: Vec<TrialOutcome> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let errors = trials - ok.len();
    let successes = ok.iter().filter(|o| o.relative_error <= threshold).count();
    let mut errs: Vec<f64> = ok.iter().map(|o| o.relative_error).collect();
    let mut iters: Vec<f64> = ok.iter().map(|o| o.iterations as f64).collect();
    CellResult {
        params,
        success_rate: successes as f64 / trials as f64,
        median_relative_error: median(&mut errs),
        median_iterations: median(&mut iters),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        trials,
        errors,
        mu1,
    }
}

/// Signal, estimate and solver output of one recovery trial.
#[derive(Debug, Clone)]
pub struct RecoveryTrial {
    pub signal: DVector<f64>,
    pub estimate: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl RecoveryTrial {
    pub fn relative_error(&self) -> f64 {
        (&self.estimate - &self.signal).norm() / self.signal.norm()
    }
}

/// Random tight frame, cosparse signal and Gaussian `A` from `seed`, then one solve.
pub fn recovery_trial(
    cell: &RecoveryCell,
    seed: u64,
    sigma: f64,
    method: SolverMethod,
    config: &SolverConfig,
) -> Result<RecoveryTrial> {
    let frame = random_tight_frame(cell.n, cell.d, rng::derive_seed(seed, &[1]))?;
    let signal = cosparse_signal(&frame, cell.s, rng::derive_seed(seed, &[2]))?.signal;
    let a =
        MeasurementEnsemble::gaussian(cell.m, cell.n, sigma, rng::derive_seed(seed, &[3])).matrix;
    let y = &a * &signal;
    let res = method.solve(&LqProblem::new(a, y, frame, cell.q)?, config)?;
    Ok(RecoveryTrial {
        signal,
        estimate: res.f_hat,
        iterations: res.iterations,
        converged: res.converged,
    })
}

fn run_recovery_cell(
    cell: RecoveryCell,
    trials: usize,
    threshold: f64,
    master_seed: u64,
    sigma: f64,
    method: SolverMethod,
) -> CellResult {
    let params = CellParams::Recovery(cell);
    let started = Instant::now();
    let config = SolverConfig::default();
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(master_seed, &params, t);
            recovery_trial(&cell, seed, sigma, method, &config).map(|r| TrialOutcome {
                relative_error: r.relative_error(),
                iterations: r.iterations,
            })
        })
        .collect();
    summarize(params, outcomes, threshold, started, None)
}

/// Settings for [`run_figure1`]. Defaults: `n = 100`, `d = 110`, `m = 50`,
/// `q = 0.7`, `s = 25`, 20 trials, threshold `1e-4`, `sigma = 1`, IRLS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Figure1Config {
    pub cell: RecoveryCell,
    pub seed: u64,
    pub trials: usize,
    pub success_threshold: f64,
    pub sigma: f64,
    pub method: SolverMethod,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self {
            cell: RecoveryCell {
                n: 100,
                d: 110,
                m: 50,
                q: 0.7,
                s: 25,
            },
            seed: 0,
            trials: 20,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            sigma: 1.0,
            method: SolverMethod::Irls,
        }
    }
}

pub fn run_figure1(config: &Figure1Config) -> Result<CellResult> {
    if config.trials == 0 {
        return Err(Error::InvalidSpec("trials must be at least 1".into()));
    }
    Ok(run_recovery_cell(
        config.cell,
        config.trials,
        config.success_threshold,
        config.seed,
        config.sigma,
        config.method,
    ))
}

/// Sweeps recovery cells; output is sorted by `(q, s, m)`.
pub fn run_phase_transition(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    if spec.kind == ExperimentKind::SeparationSweep {
        return Err(Error::InvalidSpec(
            "separation cells in a recovery sweep".into(),
        ));
    }
    let mut results: Vec<CellResult> = spec
        .grid
        .par_iter()
        .map(|params| match *params {
            CellParams::Recovery(cell) => run_recovery_cell(
                cell,
                spec.trials_per_cell,
                spec.success_threshold,
                spec.master_seed,
                spec.sigma,
                spec.method,
            ),
            CellParams::Separation(_) => unreachable!("validated"),
        })
        .collect();
    sort_results(&mut results);
    Ok(results)
}

fn sort_results(results: &mut [CellResult]) {
    results.sort_by(|x, y| {
        let (a, b) = (x.params.sort_key(), y.params.sort_key());
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });
}

/// Components and their estimates from one separation trial.
#[derive(Debug, Clone)]
pub struct SeparationTrial {
    pub components: [DVector<f64>; 2],
    pub estimates: [DVector<f64>; 2],
    pub iterations: usize,
}

impl SeparationTrial {
    /// Larger of the two componentwise relative errors. A zero component is
    /// measured against the norm of the whole signal.
    pub fn relative_error(&self) -> f64 {
        let total = (&self.components[0] + &self.components[1]).norm();
        (0..2)
            .map(|k| {
                let scale = self.components[k].norm();
                let scale = if scale > 0.0 { scale } else { total };
                (&self.estimates[k] - &self.components[k]).norm() / scale
            })
            .fold(0.0, f64::max)
    }
}

fn sparse_gaussian(len: usize, s: usize, stream: &mut rng::StreamRng) -> DVector<f64> {
    let support = index::sample(stream, len, s).into_vec();
    let values = rng::gaussian_vector(s, stream);
    let mut x = DVector::zeros(len);
    for (i, v) in support.into_iter().zip(values.iter()) {
        x[i] = *v;
    }
    x
}

/// Spikes and orthonormal Hadamard dictionaries for `R^n`.
pub fn spikes_and_hadamard(n: usize) -> Result<[Frame; 2]> {
    Ok([Frame::identity(n)?, hadamard_frame(n)?])
}

pub fn separation_trial(
    cell: &SeparationCell,
    seed: u64,
    sigma: f64,
    config: &SolverConfig,
) -> Result<SeparationTrial> {
    let dicts = spikes_and_hadamard(cell.n)?;
    let mut stream = rng::substream(seed, &[1]);
    let f1 = sparse_gaussian(cell.n, cell.s1, &mut stream);
    let f2 = dicts[1].synthesize(&sparse_gaussian(cell.n, cell.s2, &mut stream));
    let a =
        MeasurementEnsemble::gaussian(cell.m, cell.n, sigma, rng::derive_seed(seed, &[2])).matrix;
    let y = &a * (&f1 + &f2);
    let problem = SeparationProblem::new(dicts.to_vec(), a, y, cell.q)?;
    let sol = solve_split_analysis(&problem, config)?;
    let [e1, e2]: [DVector<f64>; 2] = sol
        .components
        .try_into()
        .expect("two dictionaries give two components");
    Ok(SeparationTrial {
        components: [f1, f2],
        estimates: [e1, e2],
        iterations: sol.result.iterations,
    })
}

/// Spikes plus Hadamard sweep; a trial succeeds when both components are
/// within the threshold. Output is sorted by `(q, s1 + s2, m)`.
pub fn run_separation_sweep(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    if spec.kind != ExperimentKind::SeparationSweep {
        return Err(Error::InvalidSpec(format!(
            "run_separation_sweep needs a separation_sweep spec, got {:?}",
            spec.kind
        )));
    }
    let config = SolverConfig::default();
    let mut results = spec
        .grid
        .par_iter()
        .map(|params| {
            let CellParams::Separation(cell) = *params else {
                unreachable!("validated")
            };
            let mu1 = mutual_coherence(&spikes_and_hadamard(cell.n)?)?;
            let started = Instant::now();
            let outcomes = (0..spec.trials_per_cell)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(spec.master_seed, params, t);
                    separation_trial(&cell, seed, spec.sigma, &config).map(|r| TrialOutcome {
                        relative_error: r.relative_error(),
                        iterations: r.iterations,
                    })
                })
                .collect();
            Ok(summarize(
                *params,
                outcomes,
                spec.success_threshold,
                started,
                Some(mu1),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_results(&mut results);
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub q: f64,
    pub m_min: f64,
    pub m_min_separation: f64,
}

/// Measurement bounds for one dictionary (condition `kappa`) and for
/// separation, both with total sparsity `s` and `d` atoms.
pub fn run_bounds_table(q_list: &[f64], s: usize, d: usize, kappa: f64) -> Result<Vec<BoundsRow>> {
    if q_list.is_empty() || s == 0 || s > d || !(kappa >= 1.0) {
        return Err(Error::InvalidParameters(format!(
            "need a nonempty q list, 0 < s <= d and kappa >= 1; got {} values, s={s}, d={d}, kappa={kappa}",
            q_list.len()
        )));
    }
    q_list
        .iter()
        .map(|&q| {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidParameters(format!("q = {q} outside (0, 1]")));
            }
            Ok(BoundsRow {
                q,
                m_min: qrip::measurement_bound(q, s, d, kappa),
                m_min_separation: separation::separation_measurement_bound(q, s, d),
            })
        })
        .collect()
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentOutput {
    Cells(Vec<CellResult>),
    Bounds(Vec<BoundsRow>),
}

impl ExperimentOutput {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        match self {
            ExperimentOutput::Cells(cells) => write_cells_csv(writer, cells),
            ExperimentOutput::Bounds(rows) => write_bounds_csv(writer, rows),
        }
    }
}

/// Dispatches on `spec.kind`. A bounds table takes `(q, s, d)` from each cell and `kappa` from the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    match spec.kind {
        ExperimentKind::Figure1 | ExperimentKind::PhaseTransition => {
            run_phase_transition(spec).map(ExperimentOutput::Cells)
        }
        ExperimentKind::SeparationSweep => run_separation_sweep(spec).map(ExperimentOutput::Cells),
        ExperimentKind::BoundsTable => {
            let mut rows = Vec::with_capacity(spec.grid.len());
            for cell in &spec.grid {
                if let CellParams::Recovery(c) = cell {
                    rows.extend(run_bounds_table(&[c.q], c.s, c.d, spec.kappa)?);
                }
            }
            Ok(ExperimentOutput::Bounds(rows))
        }
    }
}

/// Flat CSV row of a [`CellResult`]; columns not used by a cell kind are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellRecord {
    n: usize,
    d: Option<usize>,
    m: usize,
    q: f64,
    s: Option<usize>,
    s1: Option<usize>,
    s2: Option<usize>,
    success_rate: f64,
    median_relative_error: Option<f64>,
    median_iterations: Option<f64>,
    wall_time_ms: f64,
    trials: usize,
    errors: usize,
    mu1: Option<f64>,
}

impl From<&CellResult> for CellRecord {
    fn from(r: &CellResult) -> Self {
        let (n, d, m, q, s, s1, s2) = match r.params {
            CellParams::Recovery(c) => (c.n, Some(c.d), c.m, c.q, Some(c.s), None, None),
            CellParams::Separation(c) => (c.n, None, c.m, c.q, None, Some(c.s1), Some(c.s2)),
        };
        Self {
            n,
            d,
            m,
            q,
            s,
            s1,
            s2,
            success_rate: r.success_rate,
            median_relative_error: r.median_relative_error,
            median_iterations: r.median_iterations,
            wall_time_ms: r.wall_time_ms,
            trials: r.trials,
            errors: r.errors,
            mu1: r.mu1,
        }
    }
}

impl TryFrom<CellRecord> for CellResult {
    type Error = Error;

    fn try_from(r: CellRecord) -> Result<Self> {
        let params = match (r.d, r.s, r.s1, r.s2) {
            (Some(d), Some(s), None, None) => CellParams::Recovery(RecoveryCell {
                n: r.n,
                d,
                m: r.m,
                q: r.q,
                s,
            }),
            (None, None, Some(s1), Some(s2)) => CellParams::Separation(SeparationCell {
                n: r.n,
                m: r.m,
                q: r.q,
                s1,
                s2,
            }),
            _ => {
                return Err(Error::InvalidSpec(
                    "row has neither (d, s) nor (s1, s2) filled".into(),
                ))
            }
        };
        Ok(CellResult {
            params,
            success_rate: r.success_rate,
            median_relative_error: r.median_relative_error,
            median_iterations: r.median_iterations,
            wall_time_ms: r.wall_time_ms,
            trials: r.trials,
            errors: r.errors,
            mu1: r.mu1,
        })
    }
}

pub fn write_cells_csv<W: Write>(writer: W, results: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in results {
        w.serialize(CellRecord::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cells_csv<R: Read>(reader: R) -> Result<Vec<CellResult>> {
    csv::Reader::from_reader(reader)
        .deserialize::<CellRecord>()
        .map(|rec| CellResult::try_from(rec?))
        .collect()
}

pub fn write_bounds_csv<W: Write>(writer: W, rows: &[BoundsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bounds_csv<R: Read>(reader: R) -> Result<Vec<BoundsRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

//! Separation of a signal `f = f_1 + ... + f_iota` whose components are
//! sparse in different tight frames `D_1, ..., D_iota`, from `y = A f`.
//!
//! With `D_bar = [D_1 | ... | D_iota]` and `Psi = blockdiag(D_1, ..., D_iota)`,
//! the split analysis problem
//!
//! ```text
//! min sum_k ||D_k* f_k||_q^q   s.t.   A (f_1 + ... + f_iota) = y
//! ```
//!
//! is an ordinary analysis problem in the stacked unknown `(f_1, ..., f_iota)`
//! with dictionary `Psi` and measurement matrix `[A | ... | A]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::qrip::{self, MeasurementBound};
use crate::solvers::{irls_analysis, LqProblem, ResidualNorm, SolverConfig, SolverResult};

/// Tolerance on `||D_k D_k* - I||` for a dictionary to count as tight with bound 1.
pub const TIGHTNESS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct StackedOperators {
    /// `n x sum d_k`.
    pub d_bar: DMatrix<f64>,
    /// `iota n x sum d_k`, block diagonal.
    pub psi: DMatrix<f64>,
    /// `m x iota n`.
    pub a_stacked: DMatrix<f64>,
}

pub fn build_stacked(dicts: &[Frame], a: &DMatrix<f64>) -> Result<StackedOperators> {
    let first = dicts
        .first()
        .ok_or_else(|| Error::InvalidDimensions("no dictionaries".into()))?;
    let n = first.dim();
    if let Some(bad) = dicts.iter().find(|d| d.dim() != n) {
        return Err(Error::InvalidDimensions(format!(
            "dictionaries live in R^{n} and R^{}",
            bad.dim()
        )));
    }
    if a.ncols() != n {
        return Err(Error::InvalidDimensions(format!(
            "A has {} columns, dictionaries live in R^{n}",
            a.ncols()
        )));
    }
    let iota = dicts.len();
    let total: usize = dicts.iter().map(Frame::len).sum();
    let mut d_bar = DMatrix::zeros(n, total);
    let mut psi = DMatrix::zeros(iota * n, total);
    let mut a_stacked = DMatrix::zeros(a.nrows(), iota * n);
    let mut col = 0;
    for (k, dict) in dicts.iter().enumerate() {
        let dk = dict.len();
        d_bar.view_mut((0, col), (n, dk)).copy_from(dict.matrix());
        psi.view_mut((k * n, col), (n, dk)).copy_from(dict.matrix());
        a_stacked.view_mut((0, k * n), (a.nrows(), n)).copy_from(a);
        col += dk;
    }
    Ok(StackedOperators {
        d_bar,
        psi,
        a_stacked,
    })
}

#[derive(Debug, Clone)]
pub struct SeparationProblem {
    pub dicts: Vec<Frame>,
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub q: f64,
    pub epsilon: f64,
    pub norm: ResidualNorm,
}

impl SeparationProblem {
    /// Rejects dictionaries that are not tight with frame bound 1.
    pub fn new(dicts: Vec<Frame>, a: DMatrix<f64>, y: DVector<f64>, q: f64) -> Result<Self> {
        for (index, d) in dicts.iter().enumerate() {
            if !d.is_parseval(TIGHTNESS_TOLERANCE) {
                return Err(Error::NotTight {
                    index,
                    lower: d.lower_bound(),
                    upper: d.upper_bound(),
                });
            }
        }
        build_stacked(&dicts, &a)?;
        if a.nrows() != y.len() {
            return Err(Error::InvalidDimensions(format!(
                "A has {} rows, y has length {}",
                a.nrows(),
                y.len()
            )));
        }
        Ok(Self {
            dicts,
            a,
            y,
            q,
            epsilon: 0.0,
            norm: ResidualNorm::L2,
        })
    }

    pub fn with_noise(mut self, epsilon: f64, norm: ResidualNorm) -> Self {
        self.epsilon = epsilon;
        self.norm = norm;
        self
    }

    pub fn iota(&self) -> usize {
        self.dicts.len()
    }

    pub fn stacked(&self) -> Result<StackedOperators> {
        build_stacked(&self.dicts, &self.a)
    }

    /// The equivalent single-dictionary problem in the stacked unknown.
    pub fn to_lq_problem(&self) -> Result<LqProblem> {
        let StackedOperators { psi, a_stacked, .. } = self.stacked()?;
        let psi = if self.dicts.len() == 1 {
            self.dicts[0].clone()
        } else {
            Frame::new(psi)?
        };
        LqProblem::new(a_stacked, self.y.clone(), psi, self.q)?.with_noise(self.epsilon, self.norm)
    }
}

#[derive(Debug, Clone)]
pub struct SplitSolution {
    pub components: Vec<DVector<f64>>,
    pub result: SolverResult,
}

impl SplitSolution {
    pub fn sum(&self) -> DVector<f64> {
        let n = self.components[0].len();
        self.components
            .iter()
            .fold(DVector::zeros(n), |acc, c| acc + c)
    }
}

/// Solves the split analysis problem with [`irls_analysis`] on the stacked
/// problem and cuts the solution into its `iota` components. When the
/// dictionaries overlap the split is not unique; only the sum is determined.
pub fn solve_split_analysis(
    problem: &SeparationProblem,
    config: &SolverConfig,
) -> Result<SplitSolution> {
    let result = irls_analysis(&problem.to_lq_problem()?, config)?;
    let n = problem.a.ncols();
    let components = (0..problem.iota())
        .map(|k| result.f_hat.rows(k * n, n).into_owned())
        .collect();
    Ok(SplitSolution { components, result })
}

/// Diagnostics for the separation guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationVerdict {
    pub mu1: f64,
    /// `mu1 (s + a) / 2`.
    #[serde(rename = "U")]
    pub u: f64,
    /// `(1 + delta_a) / (1 - delta_{s+a})`; infinite when `delta_{s+a} >= 1`.
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub rho: f64,
    /// Null-space constant, reported only when `U < 1` and `delta_{s+a} < 1`.
    pub theta_tilde: Option<f64>,
    pub thm3_lhs: f64,
    /// Coherence condition for two components with a Gaussian `A`.
    pub thm3_holds: bool,
    /// Coherence and RIP conditions for general `iota`, jointly.
    pub thm4_holds: bool,
}

/// `(ceil((5 * 2^{3q/2})^{2/(2-q)}) + 1) (1 / (8 * 5^{2/q}) + 1)`.
pub fn thm3_factor(q: f64) -> f64 {
    let t = qrip::ceil_tolerant((5.0 * 2f64.powf(1.5 * q)).powf(2.0 / (2.0 - q)));
    (t + 1.0) * (1.0 / (8.0 * 5f64.powf(2.0 / q)) + 1.0)
}

/// `((U + iota Delta^{2/q} + sqrt((U - iota Delta^{2/q})^2 + 4 iota Delta^{2/q})) / (2(1-U)))^{q/2} rho^{1-q/2}`.
pub fn theta_tilde(u: f64, delta: f64, rho: f64, q: f64, iota: usize) -> Option<f64> {
    if !(u < 1.0) || !delta.is_finite() {
        return None;
    }
    let x = iota as f64 * delta.powf(2.0 / q);
    let root = ((u - x).powi(2) + 4.0 * x).sqrt();
    Some(((u + x + root) / (2.0 * (1.0 - u))).powf(q / 2.0) * rho.powf(1.0 - q / 2.0))
}

/// `iota Delta^{2/q} (p + 1) p + U (1 + p) < 1` with `p = rho^{2/q-1}`, the
/// condition under which the null-space constant is below 1.
pub fn drip_mip_condition(u: f64, delta: f64, rho: f64, q: f64, iota: usize) -> bool {
    let p = rho.powf(2.0 / q - 1.0);
    iota as f64 * delta.powf(2.0 / q) * (p + 1.0) * p + u * (1.0 + p) < 1.0
}

pub fn check_separation_conditions(
    mu1: f64,
    sparsities: &[usize],
    a: usize,
    delta_a: f64,
    delta_sa: f64,
    q: f64,
    iota: usize,
) -> SeparationVerdict {
    let s = sparsities.iter().sum::<usize>() as f64;
    let a = a as f64;
    let rho = s / a;
    let p = rho.powf(2.0 / q - 1.0);
    let u = mu1 * (s + a) / 2.0;
    let delta = if delta_sa < 1.0 {
        (1.0 + delta_a) / (1.0 - delta_sa)
    } else {
        f64::INFINITY
    };
    let thm3_lhs = mu1 * s * thm3_factor(q);
    let mip = mu1 * (s + a) * (p + 1.0) < 1.0;
    let rip = delta * rho.powf(1.0 - q / 2.0) * (p + 1.0).powf(q / 2.0)
        < (2.0 * iota as f64).powf(-q / 2.0);
    SeparationVerdict {
        mu1,
        u,
        delta,
        rho,
        theta_tilde: theta_tilde(u, delta, rho, q, iota),
        thm3_lhs,
        thm3_holds: thm3_lhs < 1.0,
        thm4_holds: mip && rip,
    }
}

/// Measurement bound for separation: the single-dictionary formula with
/// oversampling ratio `t = ceil((5 * 2^{3q/2})^{2/(2-q)})` and no `kappa`.
pub fn separation_measurement_bound_terms(q: f64, s: usize, d_total: usize) -> MeasurementBound {
    let t = qrip::ceil_tolerant((5.0 * 2f64.powf(1.5 * q)).powf(2.0 / (2.0 - q)));
    qrip::bound_for_ratio(q, s, d_total, t)
}

pub fn separation_measurement_bound(q: f64, s: usize, d_total: usize) -> f64 {
    separation_measurement_bound_terms(q, s, d_total).m_min
}

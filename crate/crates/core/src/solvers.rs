//! Solvers for the `l_q`-analysis problem
//!
//! ```text
//! min ||D* f||_q^q   subject to   ||A f - y||_r <= eps,   0 < q <= 1,
//! ```
//!
//! by iteratively reweighted least squares ([`irls_analysis`]) and
//! iteratively reweighted `l_1` ([`irl1_analysis`]). Both smooth the
//! objective with a decreasing sequence `sigma_j` and start from the
//! least-norm solution of `A f = y`.

use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::q_norm_pow;

/// Largest penalty tried before the noisy path falls back to the exact constraint.
const MAX_PENALTY: f64 = 1e16;

/// Relative singular-value threshold for the full-row-rank check on `A`.
const ROW_RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualNorm {
    #[default]
    L2,
    Inf,
}

impl ResidualNorm {
    pub fn eval(self, r: &DVector<f64>) -> f64 {
        match self {
            ResidualNorm::L2 => r.norm(),
            ResidualNorm::Inf => r.amax(),
        }
    }
}

impl FromStr for ResidualNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "l2" | "L2" => Ok(ResidualNorm::L2),
            "inf" | "Inf" | "linf" => Ok(ResidualNorm::Inf),
            other => Err(Error::InvalidParameters(format!(
                "unknown residual norm {other:?}, expected 2 or inf"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    #[default]
    Irls,
    Irl1,
}

impl SolverMethod {
    pub fn solve(self, problem: &LqProblem, config: &SolverConfig) -> Result<SolverResult> {
        match self {
            SolverMethod::Irls => irls_analysis(problem, config),
            SolverMethod::Irl1 => irl1_analysis(problem, config),
        }
    }
}

impl FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irls" => Ok(SolverMethod::Irls),
            "irl1" => Ok(SolverMethod::Irl1),
            other => Err(Error::InvalidParameters(format!(
                "unknown method {other:?}, expected irls or irl1"
            ))),
        }
    }
}

/// An instance of the `l_q`-analysis problem.
#[derive(Debug, Clone)]
pub struct LqProblem {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub frame: Frame,
    pub q: f64,
    /// Noise level; `0` means the equality constraint `A f = y`.
    pub epsilon: f64,
    pub norm: ResidualNorm,
}

impl LqProblem {
    /// Noiseless problem `A f = y`.
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, frame: Frame, q: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParameters(format!("q = {q} outside (0, 1]")));
        }
        if a.nrows() != y.len() || a.ncols() != frame.dim() {
            return Err(Error::InvalidDimensions(format!(
                "A is {}x{}, y has length {}, D is {}x{}",
                a.nrows(),
                a.ncols(),
                y.len(),
                frame.dim(),
                frame.len()
            )));
        }
        Ok(Self {
            a,
            y,
            frame,
            q,
            epsilon: 0.0,
            norm: ResidualNorm::L2,
        })
    }

    pub fn with_noise(mut self, epsilon: f64, norm: ResidualNorm) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameters(format!("epsilon = {epsilon}")));
        }
        self.epsilon = epsilon;
        self.norm = norm;
        Ok(self)
    }

    pub fn residual(&self, f: &DVector<f64>) -> f64 {
        self.norm.eval(&(&self.a * f - &self.y))
    }
}

/// `sigma_j = max(initial * decay^j, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for SmoothingSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            decay: 0.9,
            floor: 1e-10,
        }
    }
}

impl SmoothingSchedule {
    pub fn at(&self, j: usize) -> f64 {
        let exponent = i32::try_from(j).unwrap_or(i32::MAX);
        (self.initial * self.decay.powi(exponent)).max(self.floor)
    }
}

/// Limits for the IRL1 inner splitting loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Stop when `||f^{j+1} - f^j||_2 / max(||f^j||_2, 1)` drops below this.
    pub tol: f64,
    pub smoothing: SmoothingSchedule,
    pub inner: InnerConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 1000,
            tol: 1e-9,
            smoothing: SmoothingSchedule::default(),
            inner: InnerConfig::default(),
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        let s = &self.smoothing;
        let ok = self.max_outer_iters > 0
            && self.tol > 0.0
            && s.initial > 0.0
            && s.floor > 0.0
            && s.decay > 0.0
            && s.decay < 1.0
            && self.inner.max_iters > 0
            && self.inner.tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameters(format!(
                "invalid solver config {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    #[serde(with = "crate::io::vector_serde")]
    pub f_hat: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||D* f^j||_q^q` after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// `||A f^j - y||_r` after each outer iteration.
    pub residual_trace: Vec<f64>,
    /// `f^0, f^1, ..., f^iterations`.
    #[serde(skip)]
    pub iterates: Vec<DVector<f64>>,
    /// Smoothing parameter used to compute each iterate from its predecessor.
    #[serde(skip)]
    pub smoothing: Vec<f64>,
}

impl SolverResult {
    fn start(f0: DVector<f64>) -> Self {
        Self {
            f_hat: f0.clone(),
            iterations: 0,
            converged: false,
            objective_trace: Vec::new(),
            residual_trace: Vec::new(),
            iterates: vec![f0],
            smoothing: Vec::new(),
        }
    }

    fn record(&mut self, problem: &LqProblem, f: DVector<f64>, sigma: f64) {
        self.objective_trace
            .push(objective(&f, problem.frame.matrix(), problem.q));
        self.residual_trace.push(problem.residual(&f));
        self.smoothing.push(sigma);
        self.iterations += 1;
        self.iterates.push(f.clone());
        self.f_hat = f;
    }
}

/// `||D* f||_q^q` (the `q`-th power, not the quasinorm itself).
pub fn objective(f: &DVector<f64>, d: &DMatrix<f64>, q: f64) -> f64 {
    q_norm_pow(d.tr_mul(f).iter().copied(), q)
}

/// Smoothed objective `sum_i (<d_i, f>^2 + sigma)^{q/2}` majorized by each IRLS step.
pub fn smoothed_objective(f: &DVector<f64>, d: &DMatrix<f64>, q: f64, sigma: f64) -> f64 {
    d.tr_mul(f)
        .iter()
        .map(|c| (c * c + sigma).powf(q / 2.0))
        .sum()
}

fn relative_change(next: &DVector<f64>, prev: &DVector<f64>) -> f64 {
    (next - prev).norm() / prev.norm().max(1.0)
}

/// Outer stopping rule: small relative change once the smoothing has reached
/// its floor. A square `A` has a single feasible point, so one step suffices.
fn outer_done(problem: &LqProblem, config: &SolverConfig, sigma: f64, change: f64) -> bool {
    let square = problem.a.nrows() == problem.a.ncols() && problem.epsilon == 0.0;
    change < config.tol && (square || sigma <= config.smoothing.floor)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn ensure_full_row_rank(a: &DMatrix<f64>) -> Result<()> {
    let (m, n) = a.shape();
    if m > n {
        return Err(Error::InfeasibleOrDegenerate(format!(
            "A is {m}x{n}; more rows than columns"
        )));
    }
    let sv = a.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if !(smax > 0.0) || smin <= ROW_RANK_TOLERANCE * smax {
        return Err(Error::InfeasibleOrDegenerate(format!(
            "A is row-rank deficient (singular values {smin:.3e} .. {smax:.3e})"
        )));
    }
    Ok(())
}

/// `D diag(w) D*`.
fn weighted_gram(d: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut dw = d.clone();
    for (mut col, &wi) in dw.column_iter_mut().zip(w.iter()) {
        col *= wi;
    }
    symmetrize(dw * d.transpose())
}

/// Minimizer of `f^T M f` subject to `A f = y`, i.e. `M^{-1} A^T (A M^{-1} A^T)^{-1} y`,
/// followed by one step of iterative refinement on the constraint.
fn constrained_minimizer(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    m: DMatrix<f64>,
) -> Result<DVector<f64>> {
    let chol_m = m.cholesky().ok_or_else(|| {
        Error::InfeasibleOrDegenerate("weighted Gram matrix is not positive definite".into())
    })?;
    let z = chol_m.solve(&a.transpose());
    let chol_s = symmetrize(a * &z).cholesky().ok_or_else(|| {
        Error::InfeasibleOrDegenerate("constraint system A M^-1 A^T is singular".into())
    })?;
    let mut f = &z * chol_s.solve(y);
    let r = y - a * &f;
    f += &z * chol_s.solve(&r);
    Ok(f)
}

fn least_norm(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    constrained_minimizer(a, y, DMatrix::identity(a.ncols(), a.ncols()))
}

/// Minimizer of `f^T M f + lambda ||A f - y||_2^2` for the smallest
/// `lambda in {1, 10, 100, ...}` whose solution satisfies the noise constraint.
fn penalized_minimizer(
    problem: &LqProblem,
    m: &DMatrix<f64>,
    ata: &DMatrix<f64>,
    aty: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut lambda = 1.0;
    while lambda <= MAX_PENALTY {
        let h = symmetrize(m + ata * lambda);
        if let Some(chol) = h.cholesky() {
            let f = chol.solve(&(aty * lambda));
            if problem.residual(&f) <= problem.epsilon {
                return Ok(f);
            }
        }
        lambda *= 10.0;
    }
    constrained_minimizer(&problem.a, &problem.y, m.clone())
}

/// Analysis IRLS.
///
/// Iteration `j` sets `w_i = (<d_i, f^j>^2 + sigma_j)^{q/2 - 1}` and takes
/// `f^{j+1}` as the minimizer of `sum_i w_i <d_i, f>^2` over the feasible set.
/// With `eps = 0` every iterate satisfies `A f^j = y` up to rounding. With
/// `eps > 0` the constraint is replaced by a quadratic penalty whose weight is
/// raised by factors of 10 until `||A f - y||_r <= eps`.
pub fn irls_analysis(problem: &LqProblem, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    let (a, y, d, q) = (&problem.a, &problem.y, problem.frame.matrix(), problem.q);
    let noisy = problem.epsilon > 0.0;
    let penalty_terms = noisy.then(|| (a.tr_mul(a), a.tr_mul(y)));
    if !noisy {
        ensure_full_row_rank(a)?;
    }

    let mut result = SolverResult::start(least_norm(a, y)?);
    let mut f = result.f_hat.clone();
    for j in 0..config.max_outer_iters {
        let sigma = config.smoothing.at(j);
        let w = d.tr_mul(&f).map(|c| (c * c + sigma).powf(q / 2.0 - 1.0));
        let m = weighted_gram(d, &w);
        let next = match &penalty_terms {
            Some((ata, aty)) => penalized_minimizer(problem, &m, ata, aty)?,
            None => constrained_minimizer(a, y, m)?,
        };
        let change = relative_change(&next, &f);
        f = next;
        result.record(problem, f.clone(), sigma);
        if outer_done(problem, config, sigma, change) {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}

/// Projection onto `{A f = y}` in the metric of `G = D D*`, as an affine map
/// of `v`: `f(v) = argmin_f f^T G f / 2 - (D v)^T f  s.t.  A f = y = P D v + c`
/// with `P = G^-1 - G^-1 A^T S^-1 A G^-1`, `S = A G^-1 A^T`.
struct AnalysisProjector {
    /// `P D`, `n x d`.
    pd: DMatrix<f64>,
    c: DVector<f64>,
    /// `D* P D`, so that `D* f(v) = h_mat v + h`.
    h_mat: DMatrix<f64>,
    h: DVector<f64>,
    g_inv_at: DMatrix<f64>,
    chol_s: Cholesky<f64, Dyn>,
}

impl AnalysisProjector {
    fn new(a: &DMatrix<f64>, y: &DVector<f64>, d: &DMatrix<f64>) -> Result<Self> {
        let chol_g = symmetrize(d * d.transpose())
            .cholesky()
            .ok_or_else(|| Error::InfeasibleOrDegenerate("D D* is not positive definite".into()))?;
        let g_inv_at = chol_g.solve(&a.transpose());
        let chol_s = symmetrize(a * &g_inv_at).cholesky().ok_or_else(|| {
            Error::InfeasibleOrDegenerate("constraint system A G^-1 A^T is singular".into())
        })?;
        let g_inv_d = chol_g.solve(d);
        let pd = &g_inv_d - &g_inv_at * chol_s.solve(&(a * &g_inv_d));
        let c = &g_inv_at * chol_s.solve(y);
        let h_mat = d.tr_mul(&pd);
        let h = d.tr_mul(&c);
        Ok(Self {
            pd,
            c,
            h_mat,
            h,
            g_inv_at,
            chol_s,
        })
    }

    /// `f(v)` with one refinement step on the constraint.
    fn solve(&self, a: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.pd * v + &self.c;
        let r = y - a * &f;
        f += &self.g_inv_at * self.chol_s.solve(&r);
        f
    }

    fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.h_mat * v + &self.h
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// State of the splitting loop, carried across outer iterations as a warm start.
struct SplitState {
    u: DVector<f64>,
    z: DVector<f64>,
    rho: f64,
}

/// Iterations between attempts to polish the splitting iterate.
const POLISH_EVERY: usize = 50;

/// Over-relaxation factor of the splitting loop.
const RELAXATION: f64 = 1.6;

/// Penalty rebalancing period of the splitting loop.
const REBALANCE_EVERY: usize = 10;

/// Exact solve on the zero set `Z` of `u`: the point with `A f = y` and
/// `D_Z* f = 0`, accepted only when it is unique and a dual certificate
/// `D_Z (w_Z g_Z) - A^T lambda = -D_S (w_S sign(D_S* f))`, `|g_Z| <= 1` exists.
fn polish(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    d: &DMatrix<f64>,
    w: &DVector<f64>,
    u: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    let exact: Vec<usize> = (0..u.len()).filter(|&i| u[i] == 0.0).collect();
    if let Some(f) = polish_on(a, y, d, w, &exact) {
        return Some(f);
    }
    // a vertex generically has exactly n - m vanishing coefficients
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&i, &j| u[i].abs().total_cmp(&u[j].abs()));
    order.truncate(n.saturating_sub(m));
    order.sort_unstable();
    if order == exact {
        return None;
    }
    polish_on(a, y, d, w, &order)
}

/// LU for square systems, least squares otherwise.
fn solve_dense(mat: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if mat.is_square() {
        mat.clone().lu().solve(rhs)
    } else {
        let svd = mat.clone().svd(true, true);
        let cut = 1e-12 * svd.singular_values.max();
        svd.solve(rhs, cut).ok()
    }
}

fn polish_on(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    d: &DMatrix<f64>,
    w: &DVector<f64>,
    zero: &[usize],
) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    let rows = m + zero.len();
    if rows < n {
        return None;
    }
    let mut system = DMatrix::zeros(rows, n);
    system.rows_mut(0, m).copy_from(a);
    for (r, &i) in zero.iter().enumerate() {
        system.row_mut(m + r).copy_from(&d.column(i).transpose());
    }
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, m).copy_from(y);
    let f = solve_dense(&system, &rhs)?;
    let scale = rhs.norm().max(f.norm());
    if (&system * &f - &rhs).norm() > 1e-10 * scale {
        return None;
    }

    let coeffs = d.tr_mul(&f);
    let in_zero = {
        let mut mask = vec![false; coeffs.len()];
        zero.iter().for_each(|&i| mask[i] = true);
        mask
    };
    let mut target = DVector::zeros(n);
    for i in (0..coeffs.len()).filter(|&i| !in_zero[i]) {
        target -= d.column(i) * (w[i] * coeffs[i].signum());
    }
    let mut dual = DMatrix::zeros(n, zero.len() + m);
    for (c, &i) in zero.iter().enumerate() {
        dual.column_mut(c).copy_from(&(d.column(i) * w[i]));
    }
    dual.columns_mut(zero.len(), m).copy_from(&(-a.transpose()));
    let g = solve_dense(&dual, &target)?;
    let dual_residual = (&dual * &g - &target).norm();
    let feasible = g.rows(0, zero.len()).iter().all(|v| v.abs() <= 1.0 + 1e-9);
    (dual_residual <= 1e-9 * target.norm().max(1.0) && feasible).then_some(f)
}

/// Weighted `l_1` analysis `min sum_i w_i |<d_i, f>|  s.t.  A f = y` by
/// over-relaxed ADMM on `u = D* f` with scaled dual `z`, residual-balanced
/// penalty `rho` and periodic exact polishing. Returns the final `f` and
/// whether the primal tolerance was met or a polished point was certified.
fn weighted_l1_analysis(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    d: &DMatrix<f64>,
    projector: &AnalysisProjector,
    w: &DVector<f64>,
    state: &mut SplitState,
    inner: &InnerConfig,
) -> (DVector<f64>, bool) {
    if let Some(exact) = polish(a, y, d, w, &state.u) {
        state.u = d.tr_mul(&exact);
        return (exact, true);
    }
    for k in 1..=inner.max_iters {
        let df = projector.coefficients(&(&state.u - &state.z));
        let mixed = &df * RELAXATION + &state.u * (1.0 - RELAXATION);
        let shifted = &mixed + &state.z;
        let u_prev = std::mem::replace(
            &mut state.u,
            DVector::from_fn(w.len(), |i, _| soft_threshold(shifted[i], w[i] / state.rho)),
        );
        let v_prev = &u_prev - &state.z;
        state.z += &mixed - &state.u;

        let r = (&df - &state.u).norm();
        if r <= inner.tol * df.norm().max(state.u.norm()) {
            return (projector.solve(a, y, &v_prev), true);
        }
        if k % POLISH_EVERY == 0 {
            if let Some(exact) = polish(a, y, d, w, &state.u) {
                state.u = d.tr_mul(&exact);
                return (exact, true);
            }
        }
        if k % REBALANCE_EVERY == 0 {
            let s = state.rho * (d * (&state.u - &u_prev)).norm();
            if r > 10.0 * s {
                state.rho *= 2.0;
                state.z /= 2.0;
            } else if s > 10.0 * r {
                state.rho /= 2.0;
                state.z *= 2.0;
            }
        }
    }
    let f = projector.solve(a, y, &(&state.u - &state.z));
    (f, false)
}

/// Analysis IRL1.
///
/// Iteration `j` sets `w_i = (|<d_i, f^j>| + sigma_j)^{q-1}` and solves the
/// weighted `l_1`-analysis problem `min sum_i w_i |<d_i, f>|  s.t.  A f = y`
/// by operator splitting on `u = D* f`. For `q = 1` the weights are constant
/// and a single outer iteration is performed. Only the noiseless problem is
/// supported. `converged` is false if any inner solve hit its iteration cap.
pub fn irl1_analysis(problem: &LqProblem, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    if problem.epsilon > 0.0 {
        return Err(Error::InvalidParameters(
            "irl1_analysis solves the noiseless problem only; use irls_analysis for eps > 0".into(),
        ));
    }
    let (a, y, d, q) = (&problem.a, &problem.y, problem.frame.matrix(), problem.q);
    ensure_full_row_rank(a)?;
    let projector = AnalysisProjector::new(a, y, d)?;

    let mut result = SolverResult::start(least_norm(a, y)?);
    let mut f = result.f_hat.clone();
    let mut state = SplitState {
        u: d.tr_mul(&f),
        z: DVector::zeros(d.ncols()),
        rho: 1.0,
    };
    let mut inner_ok = true;
    for j in 0..config.max_outer_iters {
        let sigma = config.smoothing.at(j);
        let w = d.tr_mul(&f).map(|c| (c.abs() + sigma).powf(q - 1.0));
        let (next, ok) = weighted_l1_analysis(a, y, d, &projector, &w, &mut state, &config.inner);
        inner_ok &= ok;
        let change = relative_change(&next, &f);
        f = next;
        result.record(problem, f.clone(), sigma);
        if q == 1.0 || outer_done(problem, config, sigma, change) {
            result.converged = inner_ok;
            break;
        }
    }
    Ok(result)
}

//! The restricted `q`-isometry property adapted to a dictionary.
//!
//! `A` has the `(D,q)`-RIP of order `s` with constant `delta` when
//!
//! ```text
//! (1 - delta) ||D v||_2^q <= ||A D v||_q^q <= (1 + delta) ||D v||_2^q
//! ```
//!
//! for every `s`-sparse `v`. Computing `delta_s` exactly is intractable, so
//! [`estimate_qrip`] reports maxima over evaluated (support, direction) pairs,
//! which are lower bounds on the true constant. The remaining functions
//! evaluate the closed-form quantities around it: the recovery condition and
//! its error constants, Gaussian moment and tail formulas, and the explicit
//! number of Gaussian measurements that guarantees the condition.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::rng;

/// Default cap on (support, direction) evaluations in exhaustive mode.
pub const DEFAULT_MAX_EVALUATIONS: usize = 1_000_000;

/// `varrho_q = sigma^q 2^{q/2} Gamma((q+1)/2) / sqrt(pi)`, the `q`-th absolute
/// moment `E|g|^q` of `g ~ N(0, sigma^2)`.
pub fn varrho(q: f64, sigma: f64) -> f64 {
    sigma.powf(q) * 2f64.powf(q / 2.0) * gamma((q + 1.0) / 2.0) / PI.sqrt()
}

/// `beta_q = (31/40)^{1/4} [1.13 + sqrt(q) (Gamma((q+1)/2)/sqrt(pi))^{-1/q}]`,
/// the constant in the Gaussian concentration bound for `||A x||_q^q`.
pub fn beta(q: f64) -> f64 {
    let moment_root = (gamma((q + 1.0) / 2.0) / PI.sqrt()).powf(-1.0 / q);
    (31.0_f64 / 40.0).powf(0.25) * (1.13 + q.sqrt() * moment_root)
}

/// Ceiling that treats values within `1e-9` (relative) of an integer as that
/// integer, so closed forms like `(5 sqrt 2)^2 = 50` are not pushed to 51 by rounding.
pub fn ceil_tolerant(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// A Gaussian measurement matrix together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct MeasurementEnsemble {
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub matrix: DMatrix<f64>,
}

impl MeasurementEnsemble {
    /// `m x n` matrix with i.i.d. `N(0, sigma^2)` entries.
    pub fn gaussian(m: usize, n: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed);
        let matrix = rng::gaussian_matrix(m, n, sigma, &mut rng);
        Self {
            m,
            n,
            sigma,
            seed,
            matrix,
        }
    }

    /// Standard deviation for which `m varrho_q = 1`, i.e. `E ||A x||_q^q = ||x||_2^q`.
    pub fn normalized_sigma(m: usize, q: f64) -> f64 {
        (1.0 / (m as f64 * varrho(q, 1.0))).powf(1.0 / q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    Exhaustive,
    Sampled,
}

/// How supports and directions are chosen by [`estimate_qrip`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QripSearch {
    pub method: EstimationMethod,
    /// Exhaustive: random directions per support. Sampled: number of random supports.
    pub budget: usize,
    /// Random directions per support in sampled mode.
    pub directions: usize,
    pub seed: u64,
    pub max_evaluations: usize,
}

impl QripSearch {
    pub fn exhaustive(directions: usize, seed: u64) -> Self {
        Self {
            method: EstimationMethod::Exhaustive,
            budget: directions,
            directions,
            seed,
            max_evaluations: DEFAULT_MAX_EVALUATIONS,
        }
    }

    pub fn sampled(supports: usize, directions: usize, seed: u64) -> Self {
        Self {
            method: EstimationMethod::Sampled,
            budget: supports,
            directions,
            seed,
            max_evaluations: DEFAULT_MAX_EVALUATIONS,
        }
    }

    fn directions_per_support(&self) -> usize {
        match self.method {
            EstimationMethod::Exhaustive => self.budget,
            EstimationMethod::Sampled => self.directions,
        }
    }
}

/// Recovery-condition summary attached to a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub theta: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
}

/// Estimated `(D,q)`-RIP constant of one order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRipReport {
    pub order: usize,
    pub q: f64,
    /// Largest observed `| ||ADv||_q^q / ||Dv||_2^q - 1 |`; a lower bound on `delta_s`.
    pub delta: f64,
    pub method: EstimationMethod,
    /// Evaluated (support, direction) pairs, degenerate ones included.
    pub trials: usize,
    #[serde(skip)]
    pub degenerate: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionSummary>,
}

impl QRipReport {
    /// True when the estimate already rules out a constant in `[0, 1)`.
    pub fn at_least_one(&self) -> bool {
        self.delta >= 1.0
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn for_each_combination(d: usize, s: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        visit(&idx);
        let mut i = s;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + d - s {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct SupportStats {
    delta: f64,
    evaluated: usize,
    degenerate: usize,
}

impl SupportStats {
    fn merge(self, other: Self) -> Self {
        Self {
            delta: self.delta.max(other.delta),
            evaluated: self.evaluated + other.evaluated,
            degenerate: self.degenerate + other.degenerate,
        }
    }
}

fn support_label(support: &[usize]) -> Vec<u64> {
    support.iter().map(|&i| i as u64).collect()
}

/// Evaluates the isometry ratio on the coordinate axes, the all-ones
/// direction and `random` uniform directions of the support's subspace.
fn evaluate_support(
    ad: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: f64,
    support: &[usize],
    random: usize,
    seed: u64,
) -> SupportStats {
    let s = support.len();
    let ad_s = ad.select_columns(support);
    let d_s = d.select_columns(support);
    let scale = d_s.column_iter().map(|c| c.norm()).fold(0.0_f64, f64::max);

    let mut stats = SupportStats::default();
    let mut visit = |v: &DVector<f64>| {
        stats.evaluated += 1;
        let dv = &d_s * v;
        let dv_norm = dv.norm();
        if dv_norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            stats.degenerate += 1;
            return;
        }
        let adv = &ad_s * v;
        let ratio = crate::q_norm_pow(adv.iter().copied(), q) / dv_norm.powf(q);
        stats.delta = stats.delta.max((ratio - 1.0).abs());
    };

    for k in 0..s {
        let mut e = DVector::zeros(s);
        e[k] = 1.0;
        visit(&e);
    }
    if s > 1 {
        visit(&DVector::from_element(s, 1.0 / (s as f64).sqrt()));
    }
    let mut stream = rng::substream(seed, &support_label(support));
    for _ in 0..random {
        visit(&rng::unit_vector(s, &mut stream));
    }
    stats
}

/// Lower bound on the `(D,q)`-RIP constant of order `s` of `A` (`m x n`)
/// relative to `D` (`n x d`).
///
/// Directions for a support are derived from `(seed, support)` only, so a
/// sampled run evaluates a subset of what the exhaustive run with the same
/// seed and direction count evaluates, and results are independent of the
/// order in which supports are visited.
pub fn estimate_qrip(
    a: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: f64,
    s: usize,
    search: &QripSearch,
) -> Result<QRipReport> {
    validate_q(q)?;
    if a.ncols() != d.nrows() {
        return Err(Error::InvalidDimensions(format!(
            "A is {}x{} but D has {} rows",
            a.nrows(),
            a.ncols(),
            d.nrows()
        )));
    }
    let dim = d.ncols();
    if s == 0 || s > dim {
        return Err(Error::InvalidDimensions(format!(
            "order {s} must lie in 1..={dim}"
        )));
    }
    let ad = a * d;
    let random = search.directions_per_support();
    let per_support = random + s + usize::from(s > 1);

    let stats = match search.method {
        EstimationMethod::Exhaustive => {
            let evaluations = binomial(dim, s) * per_support as f64;
            if evaluations > search.max_evaluations as f64 {
                return Err(Error::InvalidParameters(format!(
                    "exhaustive search needs {evaluations:.3e} evaluations, cap is {}",
                    search.max_evaluations
                )));
            }
            let mut supports = Vec::new();
            for_each_combination(dim, s, |c| supports.push(c.to_vec()));
            supports
                .par_iter()
                .map(|sup| evaluate_support(&ad, d, q, sup, random, search.seed))
                .reduce(SupportStats::default, SupportStats::merge)
        }
        EstimationMethod::Sampled => {
            if search.budget == 0 {
                return Err(Error::InvalidParameters(
                    "sampled search needs at least one support".into(),
                ));
            }
            (0..search.budget)
                .into_par_iter()
                .map(|k| {
                    let mut stream = rng::substream(search.seed, &[0x5355_5050, k as u64]);
                    let mut sup = index::sample(&mut stream, dim, s).into_vec();
                    sup.sort_unstable();
                    evaluate_support(&ad, d, q, &sup, random, search.seed)
                })
                .reduce(SupportStats::default, SupportStats::merge)
        }
    };

    if stats.degenerate == stats.evaluated {
        return Err(Error::DegenerateDictionary {
            degenerate: stats.degenerate,
        });
    }
    Ok(QRipReport {
        order: s,
        q,
        delta: stats.delta,
        method: search.method,
        trials: stats.evaluated,
        degenerate: stats.degenerate,
        condition: None,
    })
}

fn validate_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!("q = {q} outside (0, 1]")))
    }
}

/// All quantities entering the `(D^dag, q)`-RIP recovery condition
///
/// ```text
/// rho^{1-q/2} (rho^{2/q-1} + 1)^{q/2} kappa^q (1 + delta_a) < 1 - delta_{s+a}
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConditionVerdict {
    /// `s / a`.
    pub rho: f64,
    pub kappa: f64,
    /// `(1 + delta_a) / (1 - delta_{s+a})`.
    #[serde(rename = "Delta")]
    pub delta: f64,
    /// Null-space constant implied by the RIP; below 1 exactly when the condition holds.
    pub theta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl RecoveryConditionVerdict {
    pub fn summary(&self) -> ConditionSummary {
        ConditionSummary {
            lhs: self.lhs,
            rhs: self.rhs,
            holds: self.holds,
            theta: self.theta,
            delta: self.delta,
        }
    }
}

pub fn check_recovery_condition(
    delta_a: f64,
    delta_sa: f64,
    s: usize,
    a: usize,
    kappa: f64,
    q: f64,
) -> Result<RecoveryConditionVerdict> {
    validate_q(q)?;
    if s == 0 || s >= a {
        return Err(Error::InvalidParameters(format!(
            "need 0 < s < a, got s={s}, a={a}"
        )));
    }
    if !(kappa >= 1.0) || !(delta_a >= 0.0) || !(delta_sa >= 0.0) {
        return Err(Error::InvalidParameters(format!(
            "need kappa >= 1 and nonnegative constants, got kappa={kappa}, delta_a={delta_a}, delta_sa={delta_sa}"
        )));
    }
    if delta_sa >= 1.0 {
        return Err(Error::ConditionUnevaluable(format!(
            "delta_(s+a) = {delta_sa} >= 1"
        )));
    }
    let rho = s as f64 / a as f64;
    let delta = (1.0 + delta_a) / (1.0 - delta_sa);
    let lhs = rho.powf(1.0 - q / 2.0)
        * (rho.powf(2.0 / q - 1.0) + 1.0).powf(q / 2.0)
        * kappa.powf(q)
        * (1.0 + delta_a);
    let rhs = 1.0 - delta_sa;
    let root = (1.0 + 4.0 * kappa.powi(-2) * delta.powf(-2.0 / q)).sqrt();
    let theta = 2f64.powf(-q / 2.0)
        * (1.0 + root).powf(q / 2.0)
        * kappa.powf(q)
        * delta
        * rho.powf(1.0 - q / 2.0);
    Ok(RecoveryConditionVerdict {
        rho,
        kappa,
        delta,
        theta,
        lhs,
        rhs,
        holds: lhs < rhs,
    })
}

/// Constants of the error bound `||f^ - f||_2 <= C1 sigma_s / s^{1/q-1/2} + C2 m^{1/q-1/r} eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorConstants {
    pub c1: f64,
    pub c2: f64,
}

pub fn error_constants(
    theta: f64,
    rho: f64,
    q: f64,
    lower_bound: f64,
    delta_a: f64,
) -> Result<ErrorConstants> {
    validate_q(q)?;
    if !(theta < 1.0) || theta < 0.0 {
        return Err(Error::ConditionUnevaluable(format!(
            "theta = {theta} outside [0, 1)"
        )));
    }
    if !(rho > 0.0) || !(lower_bound > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "need rho > 0 and L > 0, got rho={rho}, L={lower_bound}"
        )));
    }
    let inv_q = 1.0 / q;
    let gap = (1.0 - theta).powf(inv_q);
    let c1 = (2.0 * theta + 2.0 * rho.powf(1.0 - q / 2.0)).powf(inv_q) / (lower_bound.sqrt() * gap);
    let c2 = (2.0 * theta + 2.0 * theta * rho.powf(q / 2.0 - 1.0)).powf(inv_q)
        / (gap * (1.0 + delta_a).powf(inv_q));
    Ok(ErrorConstants { c1, c2 })
}

/// Concentration and covering quantities for a Gaussian `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTail {
    pub q: f64,
    pub sigma: f64,
    pub eta: f64,
    pub eps_cover: f64,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub varrho: f64,
    pub beta: f64,
    /// `ln(2 (3ed/(eps k))^k exp(-eta^2 m / (2 q beta^2)))`, unclamped.
    pub log_failure_bound: f64,
    /// The bound above clamped to `[0, 1]`.
    pub failure_probability: f64,
    /// `(eta + eps^q) / (1 - eps^q)`: the RIP constant guaranteed on success
    /// (for `A` rescaled by `m varrho_q`).
    pub delta: f64,
}

pub fn gaussian_failure_probability(
    q: f64,
    eta: f64,
    eps_cover: f64,
    m: usize,
    k: usize,
    d: usize,
    sigma: f64,
) -> Result<GaussianTail> {
    validate_q(q)?;
    if !(eta > 0.0) || !(eps_cover > 0.0) || !(sigma > 0.0) || m == 0 || k == 0 || k > d {
        return Err(Error::InvalidParameters(format!(
            "need positive eta, eps, sigma, m and 0 < k <= d; got eta={eta}, eps={eps_cover}, sigma={sigma}, m={m}, k={k}, d={d}"
        )));
    }
    let eps_q = eps_cover.powf(q);
    if eps_q >= 1.0 {
        return Err(Error::InvalidParameters(format!(
            "eps^q = {eps_q} must be below 1"
        )));
    }
    let b = beta(q);
    let kf = k as f64;
    let log_cover = kf * (3.0 * E * d as f64 / (eps_cover * kf)).ln();
    let log_failure_bound = 2f64.ln() + log_cover - eta * eta * m as f64 / (2.0 * q * b * b);
    let failure_probability = if log_failure_bound >= 0.0 {
        1.0
    } else {
        log_failure_bound.exp()
    };
    Ok(GaussianTail {
        q,
        sigma,
        eta,
        eps_cover,
        m,
        k,
        d,
        varrho: varrho(q, sigma),
        beta: b,
        log_failure_bound,
        failure_probability,
        delta: (eta + eps_q) / (1.0 - eps_q),
    })
}

/// Pieces of the explicit Gaussian measurement bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBound {
    /// Oversampling ratio `t = a / s`.
    pub t: f64,
    /// Coefficient of `ln(d/s)` in `m_min`.
    pub log_coefficient: f64,
    pub m_min: f64,
}

/// Measurement bound for an oversampling ratio `t`:
///
/// ```text
/// 6.25 q beta^2 [ (t+1)(ln 3 - ln(t+1)) s + ln 2 + (t+2) s ln(ed/s) ] + 17.6 beta^2 (t+1) s
/// ```
pub fn bound_for_ratio(q: f64, s: usize, d: usize, t: f64) -> MeasurementBound {
    let b2 = beta(q).powi(2);
    let s = s as f64;
    let bracket = (t + 1.0) * (3f64.ln() - (t + 1.0).ln()) * s
        + 2f64.ln()
        + (t + 2.0) * s * (E * d as f64 / s).ln();
    MeasurementBound {
        t,
        log_coefficient: 6.25 * q * b2 * (t + 2.0) * s,
        m_min: 6.25 * q * b2 * bracket + 17.6 * b2 * (t + 1.0) * s,
    }
}

/// Terms of [`measurement_bound`], with `t = ceil((5 * 2^{q/2} kappa^q)^{2/(2-q)})`.
pub fn measurement_bound_terms(q: f64, s: usize, d: usize, kappa: f64) -> MeasurementBound {
    let t = ceil_tolerant((5.0 * 2f64.powf(q / 2.0) * kappa.powf(q)).powf(2.0 / (2.0 - q)));
    bound_for_ratio(q, s, d, t)
}

/// Number of `N(0, sigma^2)` measurements sufficient for the `(D^dag,q)`-RIP
/// recovery condition with probability at least `1 - 1/C(d,s)`. Returned as a
/// real; callers round up.
pub fn measurement_bound(q: f64, s: usize, d: usize, kappa: f64) -> f64 {
    measurement_bound_terms(q, s, d, kappa).m_min
}

/// Lower bound on the `D`-NSP_q constant of `A` of order `s`: the largest
/// `||D_T* h||_q^q / ||D_{T^c}* h||_q^q` over sampled kernel vectors `h`.
///
/// For a fixed `h` the ratio is maximised by `T` = the `s` largest entries of
/// `|D* h|`, so only kernel vectors are sampled. Returns infinity when some
/// `h` has `D_{T^c}* h = 0`.
pub fn estimate_dnsp_theta(
    a: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: f64,
    s: usize,
    budget: usize,
    seed: u64,
) -> Result<f64> {
    validate_q(q)?;
    let n = a.ncols();
    if d.nrows() != n {
        return Err(Error::InvalidDimensions(format!(
            "A has {n} columns but D has {} rows",
            d.nrows()
        )));
    }
    if s > d.ncols() || budget == 0 {
        return Err(Error::InvalidParameters(format!(
            "need s <= d and a positive budget, got s={s}, budget={budget}"
        )));
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    let row_space: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * smax.max(f64::MIN_POSITIVE))
        .collect();
    if row_space.len() >= n {
        return Err(Error::EmptyKernel);
    }

    let mut theta = 0.0_f64;
    for k in 0..budget {
        let mut stream = rng::substream(seed, &[k as u64]);
        let g = rng::gaussian_vector(n, &mut stream);
        let mut h = g.clone();
        for &r in &row_space {
            let row = v_t.row(r).transpose();
            h -= &row * row.dot(&g);
        }
        let coeffs = d.tr_mul(&h);
        let mut mags: Vec<f64> = coeffs.iter().map(|v| v.abs().powf(q)).collect();
        mags.sort_by(|x, y| y.total_cmp(x));
        let head: f64 = mags[..s].iter().sum();
        let tail: f64 = mags[s..].iter().sum();
        let scale = head + tail;
        if scale <= 0.0 {
            continue;
        }
        if tail <= 1e-14 * scale {
            return Ok(f64::INFINITY);
        }
        theta = theta.max(head / tail);
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn varrho_closed_forms() {
        assert_abs_diff_eq!(varrho(1.0, 1.0), (2.0 / PI).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(varrho(1.0, 2.0), 2.0 * (2.0 / PI).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn beta_direct_evaluation() {
        // evaluated from the closed form with Gamma(1) = 1
        let c = (31.0_f64 / 40.0).powf(0.25);
        assert_abs_diff_eq!(beta(1.0), c * (1.13 + PI.sqrt()), epsilon = 1e-12);
        assert_abs_diff_eq!(beta(1.0), 2.723270294556325, epsilon = 1e-12);
        // the q -> 0 limit is 1.13 (31/40)^{1/4}; at q = 1e-12 the sqrt(q) term is ~2.5e-6
        assert_abs_diff_eq!(beta(1e-12), 1.13 * c, epsilon = 1e-5);
        assert_abs_diff_eq!(1.13 * c, 1.0602, epsilon = 1e-4);
    }

    #[test]
    fn beta_increases_on_grid() {
        let grid: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        for w in grid.windows(2) {
            assert!(beta(w[0]) < beta(w[1]), "{} vs {}", w[0], w[1]);
        }
    }

    #[test]
    fn tolerant_ceiling() {
        let x = (5.0 * 2f64.sqrt()).powi(2);
        assert!(x.ceil() == 51.0 || x == 50.0);
        assert_eq!(ceil_tolerant(x), 50.0);
        assert_eq!(ceil_tolerant(50.2), 51.0);
        assert_eq!(ceil_tolerant(3.0), 3.0);
    }

    #[test]
    fn combinations_are_enumerated_in_order() {
        let mut all = Vec::new();
        for_each_combination(4, 2, |c| all.push(c.to_vec()));
        assert_eq!(
            all,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        let mut count = 0;
        for_each_combination(5, 5, |_| count += 1);
        assert_eq!(count, 1);
        assert_eq!(binomial(10, 3), 120.0);
    }

    #[test]
    fn identity_order_one_is_isometric() {
        let id = DMatrix::<f64>::identity(5, 5);
        for q in [0.3, 0.7, 1.0] {
            let r = estimate_qrip(&id, &id, q, 1, &QripSearch::exhaustive(8, 1)).unwrap();
            assert_abs_diff_eq!(r.delta, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_order_two_reaches_sqrt_two() {
        let id = DMatrix::<f64>::identity(4, 4);
        let r = estimate_qrip(&id, &id, 1.0, 2, &QripSearch::exhaustive(0, 0)).unwrap();
        assert_abs_diff_eq!(r.delta, 2f64.sqrt() - 1.0, epsilon = 1e-12);
        assert_eq!(r.trials, 6 * 3);
        assert!(!r.at_least_one());
    }

    #[test]
    fn sampled_is_bounded_by_exhaustive() {
        let a = MeasurementEnsemble::gaussian(4, 6, 0.5, 9).matrix;
        let d = crate::frames::random_tight_frame(6, 7, 2)
            .unwrap()
            .into_matrix();
        let ex = estimate_qrip(&a, &d, 0.8, 2, &QripSearch::exhaustive(5, 77)).unwrap();
        let sa = estimate_qrip(&a, &d, 0.8, 2, &QripSearch::sampled(10, 5, 77)).unwrap();
        assert!(sa.delta <= ex.delta);
        assert_eq!(sa.method, EstimationMethod::Sampled);
    }

    #[test]
    fn exhaustive_cap_is_enforced() {
        let id = DMatrix::<f64>::identity(30, 30);
        let mut search = QripSearch::exhaustive(10, 0);
        search.max_evaluations = 1000;
        assert!(matches!(
            estimate_qrip(&id, &id, 1.0, 3, &search),
            Err(Error::InvalidParameters(_))
        ));
    }

    #[test]
    fn zero_dictionary_is_degenerate() {
        let a = DMatrix::<f64>::identity(3, 3);
        let d = DMatrix::<f64>::zeros(3, 4);
        assert!(matches!(
            estimate_qrip(&a, &d, 1.0, 2, &QripSearch::exhaustive(2, 0)),
            Err(Error::DegenerateDictionary { .. })
        ));
    }

    #[test]
    fn condition_examples() {
        let ok = check_recovery_condition(0.0, 0.0, 1, 16, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(ok.lhs, 0.25 * (1.0f64 + 1.0 / 16.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(ok.lhs, 0.2577, epsilon = 1e-4);
        assert!(ok.holds);
        assert!(ok.theta < 1.0);

        // rho = 1/4: (1/4)^{1/2} (1/4 + 1)^{1/2} = sqrt(5)/4
        let quarter = check_recovery_condition(0.0, 0.0, 1, 4, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(quarter.lhs, 5f64.sqrt() / 4.0, epsilon = 1e-15);
        assert!(quarter.holds);

        let bad = check_recovery_condition(0.5, 0.0, 1, 2, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(bad.lhs, 1.5 * 0.75f64.sqrt(), epsilon = 1e-15);
        assert!(!bad.holds);
        assert!(bad.theta >= 1.0);

        assert!(matches!(
            check_recovery_condition(0.1, 1.0, 1, 4, 1.0, 1.0),
            Err(Error::ConditionUnevaluable(_))
        ));
        assert!(check_recovery_condition(0.1, 0.1, 4, 4, 1.0, 1.0).is_err());
        assert!(check_recovery_condition(0.1, 0.1, 1, 4, 0.5, 1.0).is_err());
    }

    #[test]
    fn error_constant_examples() {
        let c = error_constants(0.0, 0.25, 1.0, 1.0, 0.3).unwrap();
        assert_abs_diff_eq!(c.c1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.c2, 0.0, epsilon = 1e-15);

        let c1 = error_constants(0.4, 0.3, 0.6, 1.0, 0.1).unwrap().c1;
        let c4 = error_constants(0.4, 0.3, 0.6, 4.0, 0.1).unwrap().c1;
        assert_abs_diff_eq!(c4, c1 / 2.0, epsilon = 1e-12);

        let mut prev = 0.0;
        for k in 0..=90 {
            let theta = k as f64 / 100.0;
            let c = error_constants(theta, 0.3, 0.6, 1.0, 0.1).unwrap().c1;
            assert!(c.is_finite() && c > prev);
            prev = c;
        }
        assert!(matches!(
            error_constants(1.0, 0.3, 0.6, 1.0, 0.1),
            Err(Error::ConditionUnevaluable(_))
        ));
    }

    #[test]
    fn failure_probability_formula() {
        let tail = gaussian_failure_probability(1.0, 0.1, 0.1, 50, 2, 20, 1.0).unwrap();
        assert_abs_diff_eq!(tail.delta, 0.2 / 0.9, epsilon = 1e-15);
        assert_eq!(tail.failure_probability, 1.0);

        // k = 2 -> 4: the log covering term is k ln(3ed/(eps k))
        let b = beta(0.5);
        let expected = |k: f64, m: f64| {
            2f64.ln() + k * (3.0 * E * 30.0 / (0.2 * k)).ln() - 0.25 * m / (2.0 * 0.5 * b * b)
        };
        for k in [2usize, 4] {
            let t = gaussian_failure_probability(0.5, 0.5, 0.2, 4000, k, 30, 1.0).unwrap();
            assert_abs_diff_eq!(
                t.log_failure_bound,
                expected(k as f64, 4000.0),
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(
                t.failure_probability,
                t.log_failure_bound.exp(),
                epsilon = 1e-300
            );
        }

        let mut prev = 1.0;
        for m in [1_000usize, 10_000, 100_000, 1_000_000] {
            let p = gaussian_failure_probability(0.5, 0.5, 0.2, m, 4, 30, 1.0)
                .unwrap()
                .failure_probability;
            assert!(p <= prev);
            prev = p;
        }
        assert!(prev < 1e-100);

        assert!(gaussian_failure_probability(1.0, 0.1, 1.0, 10, 1, 5, 1.0).is_err());
        assert!(gaussian_failure_probability(1.0, 0.1, 0.5, 10, 6, 5, 1.0).is_err());
    }

    #[test]
    fn failure_probability_survives_huge_covering_terms() {
        let t =
            gaussian_failure_probability(0.5, 0.5, 1e-3, 10_000_000, 500, 100_000, 1.0).unwrap();
        assert!(t.log_failure_bound.is_finite());
        assert!((0.0..=1.0).contains(&t.failure_probability));
    }

    #[test]
    fn measurement_bound_at_q_one() {
        // t = ceil((5 sqrt 2)^2) = 50, evaluated independently term by term
        let b2 = beta(1.0).powi(2);
        let (s, d) = (10.0, 1000.0);
        let by_hand = 6.25
            * b2
            * (51.0 * (3f64.ln() - 51f64.ln()) * s + 2f64.ln() + 52.0 * s * (E * d / s).ln())
            + 17.6 * b2 * 51.0 * s;
        let terms = measurement_bound_terms(1.0, 10, 1000, 1.0);
        assert_eq!(terms.t, 50.0);
        assert_abs_diff_eq!(terms.m_min, by_hand, epsilon = 1e-9 * by_hand);
        assert_abs_diff_eq!(
            measurement_bound(1.0, 10, 1000, 1.0),
            by_hand,
            epsilon = 1e-9 * by_hand
        );
    }

    #[test]
    fn measurement_bound_grows_with_d() {
        for q in [0.1, 0.5, 1.0] {
            let mut prev = f64::NEG_INFINITY;
            for d in [10usize, 20, 50, 100, 1000, 10_000] {
                let m = measurement_bound(q, 5, d, 1.0);
                assert!(m > prev);
                prev = m;
            }
        }
    }

    #[test]
    fn log_coefficient_vanishes_with_q() {
        let c = |q| measurement_bound_terms(q, 10, 100, 2.0).log_coefficient;
        assert!(c(1e-6) < 1e-3);
        assert!(c(1e-3) < c(0.1) && c(0.1) < c(0.5) && c(0.5) < c(1.0));
    }

    #[test]
    fn dnsp_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        let theta = estimate_dnsp_theta(&a, &id, 1.0, 1, 5, 0).unwrap();
        assert_abs_diff_eq!(theta, 1.0, epsilon = 1e-12);

        let invertible = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            estimate_dnsp_theta(&invertible, &id, 1.0, 1, 5, 0),
            Err(Error::EmptyKernel)
        ));
    }

    #[test]
    fn dnsp_infinite_when_kernel_is_sparse() {
        // kernel spanned by e3, so h has a single nonzero analysis coefficient
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(
            estimate_dnsp_theta(&a, &id, 0.5, 1, 3, 1).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn dnsp_grows_with_budget() {
        let a = MeasurementEnsemble::gaussian(3, 6, 1.0, 4).matrix;
        let d = crate::frames::random_tight_frame(6, 8, 5)
            .unwrap()
            .into_matrix();
        let mut prev = 0.0;
        for budget in [1usize, 2, 5, 10, 50] {
            let t = estimate_dnsp_theta(&a, &d, 0.7, 2, budget, 13).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }
}

//! Frames for `R^n`: construction, frame bounds, canonical duals, coherence
//! and sparsity utilities.
//!
//! A frame is stored as an `n x d` matrix `D` whose columns are the atoms.
//! Its bounds are the extreme eigenvalues of the `n x n` frame operator
//! `D D*`, so `L ||f||^2 <= ||D* f||^2 <= U ||f||^2` for every `f`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Relative eigenvalue floor of `D D*` below which a matrix is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Largest condition number `U / L` accepted when inverting the frame operator.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// Attempts made by [`cosparse_signal`] before giving up.
pub const COSPARSE_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    matrix: DMatrix<f64>,
    lower: f64,
    upper: f64,
}

impl Frame {
    /// Wraps `matrix` (atoms as columns) after computing its frame bounds.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (lower, upper) = frame_bounds(&matrix)?;
        Ok(Self {
            matrix,
            lower,
            upper,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of atoms `d`.
    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    /// `kappa = U / L`.
    pub fn condition(&self) -> f64 {
        self.upper / self.lower
    }

    /// True when both bounds are within `tol` of 1, i.e. `D D* = I`.
    pub fn is_parseval(&self, tol: f64) -> bool {
        (self.lower - 1.0).abs() <= tol && (self.upper - 1.0).abs() <= tol
    }

    /// Analysis coefficients `D* f`.
    pub fn analyze(&self, f: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(f)
    }

    /// Synthesis `D x`.
    pub fn synthesize(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    /// The frame with its atoms reordered: atom `j` of the result is atom `perm[j]` of `self`.
    pub fn permute_atoms(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::InvalidDimensions(format!(
                "permutation of length {} for {} atoms",
                perm.len(),
                self.len()
            )));
        }
        let matrix = DMatrix::from_fn(self.dim(), self.len(), |i, j| self.matrix[(i, perm[j])]);
        Ok(Self {
            matrix,
            lower: self.lower,
            upper: self.upper,
        })
    }
}

/// Frame bounds `(L, U) = (lambda_min(D D*), lambda_max(D D*))`.
pub fn frame_bounds(matrix: &DMatrix<f64>) -> Result<(f64, f64)> {
    let (n, d) = matrix.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidDimensions(format!("empty {n}x{d} matrix")));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotAFrame("non-finite entries".into()));
    }
    if n > d {
        return Err(Error::NotAFrame(format!("{d} atoms cannot span R^{n}")));
    }
    let gram = matrix * matrix.transpose();
    let eig = SymmetricEigen::new(gram);
    let lower = eig.eigenvalues.min();
    let upper = eig.eigenvalues.max();
    if upper <= 0.0 || lower <= RANK_TOLERANCE * upper {
        return Err(Error::NotAFrame(format!(
            "rank deficient (eigenvalues of D D* in [{lower:.3e}, {upper:.3e}])"
        )));
    }
    Ok((lower, upper))
}

/// Canonical dual frame `D^dag = (D D*)^{-1} D`, with bounds `(1/U, 1/L)`.
pub fn canonical_dual(frame: &Frame) -> Result<Frame> {
    canonical_dual_with_cap(frame, DEFAULT_CONDITION_CAP)
}

pub fn canonical_dual_with_cap(frame: &Frame, condition_cap: f64) -> Result<Frame> {
    let condition = frame.condition();
    if !(condition <= condition_cap) {
        return Err(Error::IllConditioned {
            condition,
            cap: condition_cap,
        });
    }
    let d = frame.matrix();
    let gram = d * d.transpose();
    let chol = gram.cholesky().ok_or(Error::IllConditioned {
        condition,
        cap: condition_cap,
    })?;
    Frame::new(chol.solve(d))
}

/// Random Parseval frame: the rows of a Gaussian `n x d` matrix orthonormalised
/// by a thin QR factorisation, so `D D* = I_n` up to rounding.
pub fn random_tight_frame(n: usize, d: usize, seed: u64) -> Result<Frame> {
    if n == 0 || n > d {
        return Err(Error::InvalidDimensions(format!(
            "random tight frame needs 0 < n <= d, got n={n}, d={d}"
        )));
    }
    let mut rng = rng::stream(seed);
    let gaussian = rng::gaussian_matrix(d, n, 1.0, &mut rng);
    let q = gaussian.qr().q();
    Frame::new(q.transpose())
}

/// Sylvester Hadamard matrix of order `n` (a power of two), entries `+-1`.
pub fn hadamard(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidDimensions(format!(
            "Hadamard order must be a power of two, got {n}"
        )));
    }
    let mut h = DMatrix::from_element(1, 1, 1.0);
    while h.nrows() < n {
        let k = h.nrows();
        let mut next = DMatrix::zeros(2 * k, 2 * k);
        next.view_mut((0, 0), (k, k)).copy_from(&h);
        next.view_mut((0, k), (k, k)).copy_from(&h);
        next.view_mut((k, 0), (k, k)).copy_from(&h);
        next.view_mut((k, k), (k, k)).copy_from(&(-&h));
        h = next;
    }
    Ok(h)
}

/// Orthonormal Hadamard basis `H_n / sqrt(n)` as a Parseval frame.
pub fn hadamard_frame(n: usize) -> Result<Frame> {
    let h = hadamard(n)?;
    Frame::new(h / (n as f64).sqrt())
}

/// Mutual coherence `max_{k != l} max_{i,j} |<d_ki, d_lj>|` between dictionaries.
pub fn mutual_coherence(dicts: &[Frame]) -> Result<f64> {
    if dicts.len() < 2 {
        return Err(Error::InvalidParameters(format!(
            "mutual coherence needs at least two dictionaries, got {}",
            dicts.len()
        )));
    }
    let n = dicts[0].dim();
    if let Some(bad) = dicts.iter().find(|d| d.dim() != n) {
        return Err(Error::InvalidDimensions(format!(
            "dictionaries live in R^{n} and R^{}",
            bad.dim()
        )));
    }
    let mut mu = 0.0_f64;
    for (k, dk) in dicts.iter().enumerate() {
        for dl in &dicts[k + 1..] {
            let cross = dk.matrix().tr_mul(dl.matrix());
            mu = cross.iter().fold(mu, |acc, v| acc.max(v.abs()));
        }
    }
    Ok(mu)
}

/// Best `s`-term approximation `x_[s]` of a coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseApproximation {
    /// Kept indices, ascending.
    pub support: Vec<usize>,
    /// `x[support[k]]` for each `k`.
    pub values: Vec<f64>,
    /// Length of the original vector.
    pub len: usize,
    /// `||x - x_[s]||_q`.
    pub residual_q_norm: f64,
}

impl SparseApproximation {
    pub fn to_dense(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.len);
        for (&i, &v) in self.support.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

/// Keeps the `s` largest-magnitude entries of `x` and reports `||x - x_[s]||_q`.
///
/// Ties in magnitude are broken in favour of the lower index. `s > len` is
/// treated as `s = len`.
pub fn hard_threshold(x: &DVector<f64>, s: usize, q: f64) -> SparseApproximation {
    let len = x.len();
    let s = s.min(len);
    let mut order: Vec<usize> = (0..len).collect();
    // stable sort keeps ascending index among equal magnitudes
    order.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()));

    let mut support = order[..s].to_vec();
    support.sort_unstable();
    let values = support.iter().map(|&i| x[i]).collect();
    let tail = crate::q_norm_pow(order[s..].iter().map(|&i| x[i]), q);

    SparseApproximation {
        support,
        values,
        len,
        residual_q_norm: tail.powf(1.0 / q),
    }
}

/// A unit-norm signal whose analysis coefficients vanish on a random cosupport.
#[derive(Debug, Clone)]
pub struct CosparseSignal {
    pub signal: DVector<f64>,
    /// `D* f`.
    pub coefficients: DVector<f64>,
    /// Indices where `D* f` vanishes, ascending.
    pub cosupport: Vec<usize>,
}

/// Draws `f` with `||D* f||_0 <= s`: a Gaussian vector projected onto the null
/// space of `D_Lambda*` for a uniformly random cosupport `|Lambda| = d - s`,
/// then normalised. A fresh cosupport is drawn when the null space is trivial.
pub fn cosparse_signal(frame: &Frame, s: usize, seed: u64) -> Result<CosparseSignal> {
    let (n, d) = (frame.dim(), frame.len());
    if s > d {
        return Err(Error::InvalidDimensions(format!(
            "sparsity {s} exceeds the number of atoms {d}"
        )));
    }
    let mut rng = rng::stream(seed);
    for _ in 0..COSPARSE_ATTEMPTS {
        let mut cosupport = index::sample(&mut rng, d, d - s).into_vec();
        cosupport.sort_unstable();
        let g = rng::gaussian_vector(n, &mut rng);
        if cosupport.is_empty() {
            let signal = &g / g.norm();
            let coefficients = frame.analyze(&signal);
            return Ok(CosparseSignal {
                signal,
                coefficients,
                cosupport,
            });
        }

        let atoms = frame.matrix().select_columns(&cosupport);
        let svd = atoms.svd(true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&sv| sv > 1e-10 * smax)
            .count();
        if rank >= n {
            continue;
        }
        let mut f = g.clone();
        for (k, &sv) in svd.singular_values.iter().enumerate() {
            if sv > 1e-10 * smax {
                let uk = u.column(k);
                f -= uk * uk.dot(&g);
            }
        }
        let norm = f.norm();
        if norm <= 1e-8 * g.norm() {
            continue;
        }
        let signal = f / norm;
        let coefficients = frame.analyze(&signal);
        return Ok(CosparseSignal {
            signal,
            coefficients,
            cosupport,
        });
    }
    Err(Error::GenerationFailed {
        attempts: COSPARSE_ATTEMPTS,
        reason: format!(
            "no nonzero f in R^{n} is orthogonal to {} of the {d} atoms",
            d - s
        ),
    })
}

//! Recovery of signals that are sparse in a general frame from few linear
//! measurements by nonconvex `l_q`-analysis minimization, `0 < q <= 1`.
//!
//! The crate is organised as
//!
//! * [`frames`]: frame bounds, canonical duals, random tight frames, mutual
//!   coherence, hard thresholding and cosparse test signals;
//! * [`qrip`]: the restricted `q`-isometry property adapted to a dictionary,
//!   the recovery condition and its constants, Gaussian tail formulas and
//!   measurement lower bounds;
//! * [`solvers`]: analysis IRLS and IRL1 for the constrained problem
//!   `min ||D* f||_q^q  s.t.  ||A f - y||_r <= eps`;
//! * [`separation`]: `l_q` split analysis for signals made of components
//!   sparse in several tight frames, plus coherence diagnostics;
//! * [`experiments`]: seeded experiment harness (single-run reproduction,
//!   phase transitions, separation sweeps, bound tables);
//! * [`io`]: CSV matrix files.
//!
//! All linear algebra is dense and uses [`nalgebra`].

pub mod error;
pub mod experiments;
pub mod frames;
pub mod io;
pub mod qrip;
pub mod rng;
pub mod separation;
pub mod solvers;

pub use error::{Error, Result};
pub use frames::{Frame, SparseApproximation};
pub use qrip::{QRipReport, RecoveryConditionVerdict};
pub use separation::{SeparationProblem, SeparationVerdict};
pub use solvers::{LqProblem, ResidualNorm, SolverConfig, SolverResult};

/// `||x||_q^q = sum |x_i|^q`. For `q = 1` this is the `l_1` norm.
pub fn q_norm_pow(values: impl IntoIterator<Item = f64>, q: f64) -> f64 {
    values.into_iter().map(|v| v.abs().powf(q)).sum()
}

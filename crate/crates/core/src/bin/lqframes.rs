use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lqframes::experiments::{
    self, run_bounds_table, run_figure1, run_phase_transition, run_separation_sweep,
    ExperimentSpec, Figure1Config,
};
use lqframes::frames::{canonical_dual, mutual_coherence, Frame};
use lqframes::io::{read_matrix, read_vector, write_matrix};
use lqframes::qrip::{check_recovery_condition, estimate_qrip, QripSearch};
use lqframes::separation::{check_separation_conditions, solve_split_analysis, SeparationProblem};
use lqframes::solvers::{LqProblem, ResidualNorm, SolverConfig, SolverMethod};
use lqframes::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lqframes",
    version,
    about = "Nonconvex l_q-analysis recovery with frames"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Irls,
    Irl1,
}

impl From<Method> for SolverMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Irls => SolverMethod::Irls,
            Method::Irl1 => SolverMethod::Irl1,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    Exhaustive,
    Sampled,
}

#[derive(Subcommand)]
enum Command {
    /// Solve min ||D* f||_q^q s.t. ||A f - y||_r <= eps.
    Solve {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Residual norm r: 2 or inf.
        #[arg(long, default_value = "2")]
        norm: String,
        #[arg(long, value_enum, default_value = "irls")]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split analysis with tight dictionaries.
    Separate {
        /// Comma separated dictionary files.
        #[arg(long, value_delimiter = ',', required = true)]
        dicts: Vec<PathBuf>,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        q: f64,
        /// Sparsity of each component; inferred from the solution when omitted.
        #[arg(long, value_delimiter = ',')]
        sparsities: Option<Vec<usize>>,
        /// Overshoot a > s; defaults to 2s.
        #[arg(long)]
        a: Option<usize>,
        /// RIP constants of A relative to the concatenated dictionary; estimated by sampling when omitted.
        #[arg(long)]
        delta_a: Option<f64>,
        #[arg(long)]
        delta_sa: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate (D^dag, q)-RIP constants of A and check the recovery condition.
    RipEstimate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        s: usize,
        /// With a > s, estimates delta_a and delta_{s+a} and evaluates the condition.
        #[arg(long)]
        a: Option<usize>,
        #[arg(long, value_enum, default_value = "sampled")]
        search: Search,
        /// Supports to sample.
        #[arg(long, default_value_t = 1000)]
        supports: usize,
        /// Random directions per support.
        #[arg(long, default_value_t = 20)]
        directions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate measurement bounds over q.
    Bounds {
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat the n=100, d=110, m=50, q=0.7, s=25 recovery experiment.
    Figure1 {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = experiments::DEFAULT_SUCCESS_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "irls")]
        method: Method,
        /// Write the first trial's signal and estimate as two CSV columns.
        #[arg(long)]
        signal_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recovery phase transition from a JSON spec; CSV output.
    Phase {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spikes plus Hadamard separation sweep from a JSON spec; CSV output.
    SeparateSweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    ExperimentSpec::from_json(&std::fs::read_to_string(path)?)
}

/// Number of coefficients above `1e-6` times the largest one.
fn effective_sparsity(coeffs: &nalgebra::DVector<f64>) -> usize {
    let peak = coeffs.amax();
    coeffs.iter().filter(|c| c.abs() > 1e-6 * peak).count()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve {
            matrix,
            dict,
            obs,
            q,
            eps,
            norm,
            method,
            out,
        } => {
            let problem = LqProblem::new(
                read_matrix(matrix)?,
                read_vector(obs)?,
                Frame::new(read_matrix(dict)?)?,
                q,
            )?
            .with_noise(eps, norm.parse::<ResidualNorm>()?)?;
            let result = SolverMethod::from(method).solve(&problem, &SolverConfig::default())?;
            write_json(out.as_deref(), &result)
        }
        Command::Separate {
            dicts,
            matrix,
            obs,
            q,
            sparsities,
            a,
            delta_a,
            delta_sa,
            seed,
            out,
        } => {
            let frames = dicts
                .iter()
                .map(|p| Frame::new(read_matrix(p)?))
                .collect::<Result<Vec<_>>>()?;
            let iota = frames.len();
            let mu1 = if iota > 1 {
                mutual_coherence(&frames)?
            } else {
                0.0
            };
            let problem =
                SeparationProblem::new(frames, read_matrix(matrix)?, read_vector(obs)?, q)?;
            let solution = solve_split_analysis(&problem, &SolverConfig::default())?;

            let sparsities = match sparsities {
                Some(s) if s.len() == iota => s,
                Some(s) => {
                    return Err(Error::InvalidParameters(format!(
                        "{} sparsities for {iota} dictionaries",
                        s.len()
                    )))
                }
                None => problem
                    .dicts
                    .iter()
                    .zip(&solution.components)
                    .map(|(d, f)| effective_sparsity(&d.analyze(f)))
                    .collect(),
            };
            let s: usize = sparsities.iter().sum();
            let a = a.unwrap_or((2 * s).max(1));
            let d_bar = problem.stacked()?.d_bar;
            let estimate = |order: usize| -> Result<f64> {
                let order = order.min(d_bar.ncols());
                let search = QripSearch::sampled(200, 10, seed);
                Ok(estimate_qrip(&problem.a, &d_bar, q, order, &search)?.delta)
            };
            let delta_a = match delta_a {
                Some(v) => v,
                None => estimate(a)?,
            };
            let delta_sa = match delta_sa {
                Some(v) => v,
                None => estimate(s + a)?,
            };
            let verdict =
                check_separation_conditions(mu1, &sparsities, a, delta_a, delta_sa, q, iota);
            let components: Vec<Vec<f64>> = solution
                .components
                .iter()
                .map(|c| c.iter().copied().collect())
                .collect();
            write_json(
                out.as_deref(),
                &json!({
                    "components": components,
                    "verdict": {
                        "mu1": verdict.mu1,
                        "U": verdict.u,
                        "theta_tilde": verdict.theta_tilde,
                        "thm3_holds": verdict.thm3_holds,
                        "thm4_holds": verdict.thm4_holds,
                    },
                }),
            )
        }
        Command::RipEstimate {
            matrix,
            dict,
            q,
            s,
            a,
            search,
            supports,
            directions,
            seed,
            out,
        } => {
            let a_mat = read_matrix(matrix)?;
            let frame = Frame::new(read_matrix(dict)?)?;
            let dual = canonical_dual(&frame)?;
            let search_for = |_order: usize| match search {
                Search::Exhaustive => QripSearch::exhaustive(directions, seed),
                Search::Sampled => QripSearch::sampled(supports, directions, seed),
            };
            let report = match a {
                None => estimate_qrip(&a_mat, dual.matrix(), q, s, &search_for(s))?,
                Some(a) => {
                    let delta_a = estimate_qrip(&a_mat, dual.matrix(), q, a, &search_for(a))?.delta;
                    let mut report =
                        estimate_qrip(&a_mat, dual.matrix(), q, s + a, &search_for(s + a))?;
                    report.condition =
                        check_recovery_condition(delta_a, report.delta, s, a, frame.condition(), q)
                            .ok()
                            .map(|v| v.summary());
                    report
                }
            };
            write_json(out.as_deref(), &report)
        }
        Command::Bounds {
            q,
            s,
            d,
            kappa,
            out,
        } => {
            let rows = run_bounds_table(&q, s, d, kappa)?;
            experiments::write_bounds_csv(output(out.as_deref())?, &rows)
        }
        Command::Figure1 {
            seed,
            trials,
            threshold,
            method,
            signal_out,
            out,
        } => {
            let config = Figure1Config {
                seed,
                trials,
                success_threshold: threshold,
                method: method.into(),
                ..Figure1Config::default()
            };
            if let Some(path) = signal_out {
                let first = experiments::trial_seed(
                    seed,
                    &experiments::CellParams::Recovery(config.cell),
                    0,
                );
                let trial = experiments::recovery_trial(
                    &config.cell,
                    first,
                    config.sigma,
                    config.method,
                    &SolverConfig::default(),
                )?;
                let columns = nalgebra::DMatrix::from_columns(&[trial.signal, trial.estimate]);
                write_matrix(path, &columns)?;
            }
            write_json(out.as_deref(), &run_figure1(&config)?)
        }
        Command::Phase { spec, out } => {
            let cells = run_phase_transition(&read_spec(&spec)?)?;
            experiments::write_cells_csv(output(out.as_deref())?, &cells)
        }
        Command::SeparateSweep { spec, out } => {
            let cells = run_separation_sweep(&read_spec(&spec)?)?;
            experiments::write_cells_csv(output(out.as_deref())?, &cells)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

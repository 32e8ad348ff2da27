//! Parameter sweeps behind the command-line benchmarks: strong convergence,
//! gradient accuracy against closed-form path gradients, and backward
//! reconstruction.
//!
//! Every sweep cell derives its randomness from the root key and its seed
//! index only, and rows come back in a fixed order regardless of how many
//! worker threads run the cells.

use std::time::Instant;

use rayon::prelude::*;

use crate::adjoint::{adjoint_gradients, as_stratonovich, pipeline_forward};
use crate::brownian::{BrownianMotion, VirtualBrownianTree};
use crate::error::{contract, Result, SdeError};
use crate::prng::{split, split_n, RandomKey};
use crate::solvers::{reconstruct_backward, sdeint, Scheme, SolverConfig, StepControl};
use crate::stats;
use crate::systems::{ito_to_stratonovich, make_example, make_gbm, Example, SdeSystem, WithParams};

/// GBM test problem of the convergence and reconstruction sweeps.
pub const GBM_MU: f64 = 1.0;
pub const GBM_SIGMA: f64 = 0.5;
pub const GBM_X0: f64 = 0.1;

/// Runs `f` on a pool of `jobs` threads (0 uses the global pool).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn seed_key(root: RandomKey, seed: usize, n_seeds: usize) -> Result<RandomKey> {
    split(root, seed as u64, n_seeds.max(1) as u64)
}

/// Mean absolute terminal error of one scheme at one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub scheme: Scheme,
    pub h: f64,
    pub mean_abs_error: f64,
    pub paths: usize,
}

/// Strong error of fixed-step schemes on GBM (`μ = 1`, `σ = 0.5`, `x0 = 0.1`,
/// `T = 1`) against the exact solution driven by the same Brownian path.
pub fn convergence_sweep(schemes: &[Scheme], hs: &[f64], paths: usize, root: RandomKey) -> Result<Vec<ConvergenceRow>> {
    let ito = make_gbm(GBM_MU, GBM_SIGMA);
    let strat = ito_to_stratonovich(make_gbm(GBM_MU, GBM_SIGMA))?;
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let bm = VirtualBrownianTree::new(seed_key(root, p, paths)?, 0.0, 1.0, 1);
            let w = bm.query(1.0)?[0];
            let exact = GBM_X0 * ((GBM_MU - 0.5 * GBM_SIGMA * GBM_SIGMA) + GBM_SIGMA * w).exp();
            let mut errs = Vec::with_capacity(schemes.len() * hs.len());
            for &scheme in schemes {
                let sys: &dyn SdeSystem = if scheme == Scheme::Heun { &strat } else { &ito };
                for &h in hs {
                    let r = sdeint(sys, &[GBM_X0], &[0.0, 1.0], &bm, &SolverConfig::fixed(scheme, h))?;
                    errs.push((r.last()[0] - exact).abs());
                }
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, &scheme) in schemes.iter().enumerate() {
        for (j, &h) in hs.iter().enumerate() {
            let k = i * hs.len() + j;
            let errs: Vec<f64> = per_path.iter().map(|e| e[k]).collect();
            rows.push(ConvergenceRow {
                scheme,
                h,
                mean_abs_error: stats::mean(&errs),
                paths,
            });
        }
    }
    Ok(rows)
}

/// Log-log slope of the error against `h` for one scheme's rows.
pub fn convergence_slope(rows: &[ConvergenceRow], scheme: Scheme) -> f64 {
    let (hs, es): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.scheme == scheme)
        .map(|r| (r.h, r.mean_abs_error))
        .unzip();
    stats::loglog_slope(&hs, &es)
}

/// How gradients are computed in a gradient sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GradMethod {
    /// One forward and one adjoint solve.
    Adjoint,
    /// Central differences of the forward pipeline, two solves per input.
    FiniteDifference,
}

impl GradMethod {
    pub fn name(self) -> &'static str {
        match self {
            GradMethod::Adjoint => "adjoint",
            GradMethod::FiniteDifference => "finite_difference",
        }
    }
}

impl std::str::FromStr for GradMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adjoint" => Ok(GradMethod::Adjoint),
            "finite_difference" | "fd" => Ok(GradMethod::FiniteDifference),
            other => Err(format!("unknown gradient method '{other}'")),
        }
    }
}

/// A step-size or tolerance sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// Fixed steps `h`.
    Steps(Vec<f64>),
    /// Adaptive steps with `rtol = 0` and these absolute tolerances.
    Tolerances(Vec<f64>),
}

impl Sweep {
    pub fn values(&self) -> &[f64] {
        match self {
            Sweep::Steps(v) | Sweep::Tolerances(v) => v,
        }
    }

    /// Name of the swept quantity.
    pub fn label(&self) -> &'static str {
        match self {
            Sweep::Steps(_) => "h",
            Sweep::Tolerances(_) => "atol",
        }
    }

    fn config(&self, scheme: Scheme, value: f64) -> SolverConfig {
        match self {
            Sweep::Steps(_) => SolverConfig::fixed(scheme, value),
            Sweep::Tolerances(_) => SolverConfig {
                step: StepControl::Adaptive {
                    rtol: 0.0,
                    atol: value,
                    h0: None,
                },
                ..SolverConfig::fixed(scheme, 0.01)
            },
        }
    }
}

/// Gradient error against the closed-form path gradient for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    /// Step size or absolute tolerance, per the sweep.
    pub value: f64,
    pub seed: usize,
    pub method: GradMethod,
    pub mse_grad_theta: f64,
    pub mse_grad_z0: f64,
    /// Drift plus diffusion evaluations over all solves of the cell.
    pub nfe: u64,
    pub wall_ms: f64,
}

fn mean_loss_grad(z: &[f64]) -> Vec<f64> {
    vec![1.0 / z.len() as f64; z.len()]
}

fn fd_gradients<B: BrownianMotion + ?Sized>(
    sys: &dyn SdeSystem,
    z0: &[f64],
    bm: &B,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Vec<f64>, u64)> {
    let eps = 1e-6;
    let mut nfe = 0;
    let mut loss = |s: &dyn SdeSystem, z: &[f64]| -> Result<f64> {
        let r = pipeline_forward(s, z, &[0.0, 1.0], bm, cfg)?;
        nfe += r.nfe_drift + r.nfe_diffusion;
        Ok(stats::mean(r.last()))
    };
    let theta = sys.params().to_vec();
    let mut gth = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let (mut a, mut b) = (theta.clone(), theta.clone());
        a[j] += eps;
        b[j] -= eps;
        let up = loss(&WithParams::new(sys, a), z0)?;
        let down = loss(&WithParams::new(sys, b), z0)?;
        gth.push((up - down) / (2.0 * eps));
    }
    let mut gz = Vec::with_capacity(z0.len());
    for i in 0..z0.len() {
        let (mut a, mut b) = (z0.to_vec(), z0.to_vec());
        a[i] += eps;
        b[i] -= eps;
        gz.push((loss(sys, &a)? - loss(sys, &b)?) / (2.0 * eps));
    }
    Ok((gz, gth, nfe))
}

/// Gradients of `L = mean(X_1)` on an analytic test problem versus its
/// closed-form path gradients, for every (sweep value, seed, method).
///
/// Seed `s` draws the problem parameters, initial state and Brownian path.
pub fn gradcheck_sweep(
    kind: Example,
    scheme: Scheme,
    sweep: &Sweep,
    seeds: usize,
    methods: &[GradMethod],
    root: RandomKey,
) -> Result<Vec<GradRow>> {
    if scheme == Scheme::EulerMaruyama && matches!(sweep, Sweep::Tolerances(_)) {
        return Err(contract("adaptive gradient sweeps need the Milstein or Heun scheme"));
    }
    let cells: Vec<(usize, usize, GradMethod)> = (0..sweep.values().len())
        .flat_map(|v| (0..seeds).flat_map(move |s| methods.iter().map(move |&m| (v, s, m))))
        .collect();
    cells
        .into_par_iter()
        .map(|(v, seed, method)| {
            let [k_problem, k_path] = split_n::<2>(seed_key(root, seed, seeds)?);
            let problem = make_example(kind, k_problem);
            let bm = VirtualBrownianTree::new(k_path, 0.0, 1.0, problem.dim());
            let (gx_true, gth_true) = problem.terminal_gradients(1.0, &bm.query(1.0)?);
            let cfg = sweep.config(scheme, sweep.values()[v]);
            let start = Instant::now();
            let (gz, gth, nfe) = match method {
                GradMethod::Adjoint => {
                    let fwd = pipeline_forward(problem.system.as_ref(), &problem.x0, &[0.0, 1.0], &bm, &cfg)?;
                    let strat = as_stratonovich(problem.system.as_ref());
                    let g = mean_loss_grad(fwd.last());
                    let adj = adjoint_gradients(strat.as_ref(), &problem.x0, 0.0, 1.0, &bm, &g, fwd.last(), &cfg)?;
                    let nfe = fwd.nfe_drift + fwd.nfe_diffusion + adj.backward.nfe_drift + adj.backward.nfe_diffusion;
                    (adj.grad_z0, adj.grad_theta, nfe)
                }
                GradMethod::FiniteDifference => fd_gradients(problem.system.as_ref(), &problem.x0, &bm, &cfg)?,
            };
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(GradRow {
                value: sweep.values()[v],
                seed,
                method,
                mse_grad_theta: stats::mse(&gth, &gth_true),
                mse_grad_z0: stats::mse(&gz, &gx_true),
                nfe,
                wall_ms,
            })
        })
        .collect()
}

/// Median of a per-row metric for each sweep value, in sweep order.
pub fn medians_by_value(rows: &[GradRow], values: &[f64], method: GradMethod, metric: impl Fn(&GradRow) -> f64) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == v && r.method == method)
                .map(&metric)
                .collect();
            stats::median(&xs)
        })
        .collect()
}

/// How the backward pass of a reconstruction run is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReconstructMethod {
    /// Heun on the Stratonovich form, backward flow with reflected noise.
    StratonovichHeun,
    /// Euler–Maruyama on the Itô form with drift and diffusion simply negated.
    NaiveItoEuler,
}

impl ReconstructMethod {
    pub fn name(self) -> &'static str {
        match self {
            ReconstructMethod::StratonovichHeun => "stratonovich_heun",
            ReconstructMethod::NaiveItoEuler => "naive_ito_euler",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructRow {
    pub h: f64,
    pub seed: usize,
    pub method: ReconstructMethod,
    /// `|ẑ0 − z0|` after the forward and backward solves.
    pub error: f64,
}

/// Forward-then-backward reconstruction of `z0` on GBM over `[0, 1]`.
pub fn reconstruct_sweep(hs: &[f64], seeds: usize, methods: &[ReconstructMethod], root: RandomKey) -> Result<Vec<ReconstructRow>> {
    let ito = make_gbm(GBM_MU, GBM_SIGMA);
    let strat = ito_to_stratonovich(make_gbm(GBM_MU, GBM_SIGMA))?;
    let cells: Vec<(usize, usize, ReconstructMethod)> = (0..hs.len())
        .flat_map(|v| (0..seeds).flat_map(move |s| methods.iter().map(move |&m| (v, s, m))))
        .collect();
    cells
        .into_par_iter()
        .map(|(v, seed, method)| {
            let h = hs[v];
            let bm = VirtualBrownianTree::new(seed_key(root, seed, seeds)?, 0.0, 1.0, 1);
            let z0 = [GBM_X0];
            let back = match method {
                ReconstructMethod::StratonovichHeun => {
                    let cfg = SolverConfig::fixed(Scheme::Heun, h);
                    let fwd = sdeint(&strat, &z0, &[0.0, 1.0], &bm, &cfg)?;
                    reconstruct_backward(&strat, fwd.last(), &[1.0, 0.0], &bm, &cfg)?
                }
                ReconstructMethod::NaiveItoEuler => {
                    let cfg = SolverConfig::fixed(Scheme::EulerMaruyama, h);
                    let fwd = sdeint(&ito, &z0, &[0.0, 1.0], &bm, &cfg)?;
                    sdeint(&ito, fwd.last(), &[1.0, 0.0], &bm, &cfg.backward())?
                }
            };
            Ok(ReconstructRow {
                h,
                seed,
                method,
                error: (back.last()[0] - z0[0]).abs(),
            })
        })
        .collect()
}

/// Parses `2^-3..2^-9` (every integer exponent in between), `a,b,c`, or a
/// single number.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let bad = || SdeError::Contract(format!("cannot parse sweep '{text}'"));
    let pow = |s: &str| -> Result<i32> {
        s.trim().strip_prefix("2^").ok_or_else(bad)?.parse::<i32>().map_err(|_| bad())
    };
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (pow(a)?, pow(b)?);
        let exps: Vec<i32> = if a <= b { (a..=b).collect() } else { (b..=a).rev().collect() };
        return Ok(exps.into_iter().map(|e| 2f64.powi(e)).collect());
    }
    text.split(',')
        .map(|s| {
            let s = s.trim();
            match pow(s) {
                Ok(e) => Ok(2f64.powi(e)),
                Err(_) => s.parse::<f64>().map_err(|_| bad()),
            }
        })
        .collect()
}

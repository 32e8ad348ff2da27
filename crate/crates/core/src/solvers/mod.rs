//! Fixed-step and adaptive SDE integration driven by a queryable Brownian path.
//!
//! Increments are always differences of path queries, so a backward solve over
//! the reflected path sees exactly the noise of the forward solve. States at
//! requested times are mesh points: each interval between consecutive output
//! times carries its own mesh.

mod dynamics;
mod stepper;

use std::fmt;
use std::str::FromStr;

pub(crate) use dynamics::{Dynamics, SystemDynamics};
pub(crate) use stepper::{integrate_adaptive, integrate_fixed, Controller, Stats, Workspace};

use crate::brownian::{BrownianMotion, Reflected};
use crate::error::{contract, Result, SdeError};
use crate::systems::{Interpretation, NoiseKind, ParamRegistry, SdeSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Euler–Maruyama, strong order ½. Itô systems.
    EulerMaruyama,
    /// Milstein for diagonal commutative noise, strong order 1. Either
    /// interpretation.
    Milstein,
    /// Stratonovich Heun predictor–corrector. Stratonovich systems.
    Heun,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler",
            Scheme::Milstein => "milstein",
            Scheme::Heun => "heun",
        }
    }

    /// Drift evaluations per step.
    pub fn evals_per_step(self) -> u64 {
        match self {
            Scheme::Heun => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "euler" | "euler_maruyama" => Ok(Scheme::EulerMaruyama),
            "milstein" => Ok(Scheme::Milstein),
            "heun" => Ok(Scheme::Heun),
            other => Err(format!("unknown scheme '{other}' (expected euler, milstein or heun)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepControl {
    Fixed { h: f64 },
    /// Step doubling with a PI controller. `h0` defaults to 1% of the horizon.
    Adaptive { rtol: f64, atol: f64, h0: Option<f64> },
}

/// Whether output times run forward, or backward in wall time.
///
/// A backward solve integrates the time-reversed system (drift and diffusion
/// negated) against the reflected path `s -> -W(-s)`; on a fixed mesh it visits
/// the same points as a forward solve over the same interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub step: StepControl,
    pub direction: Direction,
}

impl SolverConfig {
    pub fn fixed(scheme: Scheme, h: f64) -> Self {
        Self {
            scheme,
            step: StepControl::Fixed { h },
            direction: Direction::Forward,
        }
    }

    pub fn adaptive(scheme: Scheme, rtol: f64, atol: f64) -> Self {
        Self {
            scheme,
            step: StepControl::Adaptive { rtol, atol, h0: None },
            direction: Direction::Forward,
        }
    }

    pub fn backward(mut self) -> Self {
        self.direction = Direction::Backward;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.step {
            StepControl::Fixed { h } if !(h > 0.0 && h.is_finite()) => Err(contract(format!("step size {h} must be positive"))),
            StepControl::Adaptive { rtol, atol, h0 } => {
                if !(rtol >= 0.0 && atol >= 0.0) || rtol + atol <= 0.0 {
                    return Err(contract(format!("tolerances rtol={rtol}, atol={atol} must be non-negative and not both zero")));
                }
                if let Some(h0) = h0 {
                    if !(h0 > 0.0) {
                        return Err(contract(format!("initial step {h0} must be positive")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub nfe_drift: u64,
    pub nfe_diffusion: u64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    /// Largest normalized local error estimate over accepted adaptive steps
    /// (0 for fixed steps).
    pub max_error_ratio: f64,
}

impl SolveResult {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("at least one state")
    }
}

/// The system run backwards in time: `t -> -t` with drift and diffusion negated.
#[derive(Debug, Clone)]
pub struct TimeReversed<S>(pub S);

impl<S: SdeSystem> SdeSystem for TimeReversed<S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn params(&self) -> &[f64] {
        self.0.params()
    }
    fn interpretation(&self) -> Interpretation {
        self.0.interpretation()
    }
    fn noise(&self) -> NoiseKind {
        self.0.noise()
    }
    fn registry(&self) -> ParamRegistry {
        self.0.registry()
    }
    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.0.drift(-t, z, theta, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.0.diffusion(-t, z, theta, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        self.0.drift_vjp(-t, z, theta, &neg, gz, gtheta)
    }
    fn diffusion_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        self.0.diffusion_vjp(-t, z, theta, &neg, gz, gtheta)
    }
    fn diffusion_dz_diag(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.0.diffusion_dz_diag(-t, z, theta, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
    fn diffusion_dz_diag_vjp(&self, t: f64, z: &[f64], theta: &[f64], c: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        self.0.diffusion_dz_diag_vjp(-t, z, theta, &neg, gz, gtheta)
    }
    fn sigma_dsigma(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.0.sigma_dsigma(-t, z, theta, out)
    }
}

pub(crate) fn check_scheme(scheme: Scheme, interpretation: Interpretation, noise: NoiseKind) -> Result<()> {
    let required = match scheme {
        Scheme::EulerMaruyama => Some(Interpretation::Ito),
        Scheme::Heun => Some(Interpretation::Stratonovich),
        Scheme::Milstein => None,
    };
    if let Some(expected) = required {
        if expected != interpretation {
            return Err(SdeError::Interpretation {
                scheme: scheme.name(),
                expected,
                found: interpretation,
            });
        }
    }
    if scheme == Scheme::Milstein && noise != NoiseKind::Diagonal {
        return Err(SdeError::Unsupported(
            "Milstein needs commutative diagonal noise (σ_i depending on z_i only)".into(),
        ));
    }
    Ok(())
}

/// Integrates `dy` through the ascending times `ts`, calling `at(k, y)` at each
/// output time (including `ts[0]`).
pub(crate) fn run<D: Dynamics + ?Sized, B: BrownianMotion + ?Sized>(
    dy: &D,
    y: &mut [f64],
    ts: &[f64],
    bm: &B,
    cfg: &SolverConfig,
    mirrored: bool,
    stats: &mut Stats,
    mut at: impl FnMut(usize, &mut [f64]) -> Result<()>,
) -> Result<()> {
    let mut ws = Workspace::new(dy.dim(), dy.noise_dim());
    let horizon = ts[ts.len() - 1] - ts[0];
    let mut ctrl = match cfg.step {
        StepControl::Adaptive { h0, .. } => Controller {
            h: h0.unwrap_or(0.01 * horizon),
            err_prev: 1.0,
        },
        StepControl::Fixed { h } => Controller { h, err_prev: 1.0 },
    };
    at(0, y)?;
    for k in 1..ts.len() {
        let (a, b) = (ts[k - 1], ts[k]);
        match cfg.step {
            StepControl::Fixed { h } => integrate_fixed(dy, cfg.scheme, y, a, b, h, mirrored, bm, &mut ws, stats)?,
            StepControl::Adaptive { rtol, atol, .. } => integrate_adaptive(
                dy,
                cfg.scheme,
                y,
                a,
                b,
                rtol,
                atol,
                1e-12 * horizon,
                &mut ctrl,
                bm,
                &mut ws,
                stats,
            )?,
        }
        at(k, y)?;
    }
    Ok(())
}

fn check_times(ts: &[f64], descending: bool, lo: f64, hi: f64) -> Result<()> {
    if ts.is_empty() {
        return Err(contract("at least one output time is required"));
    }
    let ordered = ts.windows(2).all(|w| if descending { w[1] <= w[0] } else { w[1] >= w[0] });
    if !ordered {
        let which = if descending { "descending" } else { "ascending" };
        return Err(contract(format!("output times must be {which}")));
    }
    for &t in [ts[0], ts[ts.len() - 1]].iter() {
        if !(t >= lo && t <= hi) {
            return Err(SdeError::OutOfRange { t, lo, hi });
        }
    }
    Ok(())
}

/// Solves the system from `z0 = z(ts[0])` and reports the state at every time
/// in `ts`.
///
/// Forward solves need ascending `ts`; [`Direction::Backward`] solves need
/// descending `ts`.
pub fn sdeint<S, B>(sys: &S, z0: &[f64], ts: &[f64], bm: &B, cfg: &SolverConfig) -> Result<SolveResult>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    cfg.validate()?;
    check_scheme(cfg.scheme, sys.interpretation(), sys.noise())?;
    if z0.len() != sys.dim() || bm.dim() != sys.dim() {
        return Err(contract(format!(
            "dimension mismatch: system {}, state {}, Brownian path {}",
            sys.dim(),
            z0.len(),
            bm.dim()
        )));
    }
    let backward = cfg.direction == Direction::Backward;
    check_times(ts, backward, bm.t_start(), bm.t_end())?;

    let mut stats = Stats::default();
    let mut y = z0.to_vec();
    let mut states = Vec::with_capacity(ts.len());
    let record = |_: usize, y: &mut [f64]| {
        states.push(y.to_vec());
        Ok(())
    };
    if backward {
        let rev = TimeReversed(sys);
        let s: Vec<f64> = ts.iter().map(|t| -t).collect();
        run(&SystemDynamics::new(&rev), &mut y, &s, &Reflected(bm), cfg, true, &mut stats, record).map_err(
            |e| match e {
                SdeError::Divergence { t } => SdeError::Divergence { t: -t },
                SdeError::StepUnderflow { t, h } => SdeError::StepUnderflow { t: -t, h },
                other => other,
            },
        )?;
    } else {
        run(&SystemDynamics::new(sys), &mut y, ts, bm, cfg, false, &mut stats, record)?;
    }
    Ok(SolveResult {
        times: ts.to_vec(),
        states,
        nfe_drift: stats.nfe_drift,
        nfe_diffusion: stats.nfe_diffusion,
        steps_accepted: stats.accepted,
        steps_rejected: stats.rejected,
        max_error_ratio: stats.max_error_ratio,
    })
}

/// [`sdeint`] with an adaptive step controller; `cfg.step` must be
/// [`StepControl::Adaptive`].
pub fn sdeint_adaptive<S, B>(sys: &S, z0: &[f64], ts: &[f64], bm: &B, cfg: &SolverConfig) -> Result<SolveResult>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    if !matches!(cfg.step, StepControl::Adaptive { .. }) {
        return Err(contract("sdeint_adaptive needs an adaptive step control"));
    }
    sdeint(sys, z0, ts, bm, cfg)
}

/// Recovers earlier states from `zT` by solving the backward flow over the
/// descending times `ts_reversed`. Only Stratonovich systems have a backward
/// flow of this form.
pub fn reconstruct_backward<S, B>(
    sys: &S,
    z_t: &[f64],
    ts_reversed: &[f64],
    bm: &B,
    cfg: &SolverConfig,
) -> Result<SolveResult>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    if sys.interpretation() != Interpretation::Stratonovich {
        return Err(SdeError::Interpretation {
            scheme: "backward reconstruction",
            expected: Interpretation::Stratonovich,
            found: sys.interpretation(),
        });
    }
    sdeint(sys, z_t, ts_reversed, bm, &cfg.backward())
}

//! Gradients of losses on SDE states by the stochastic adjoint method.
//!
//! The backward pass solves the augmented Stratonovich system for
//! `(z, a_z, a_θ)` in reflected time, using only vector-Jacobian products of
//! the drift and diffusion. The state `z` is reconstructed alongside the
//! adjoint, so nothing from the forward trajectory is stored beyond its final
//! value. Loss cotangents at intermediate observation times are added to `a_z`
//! at segment boundaries.

mod augmented;
mod jacobian;

pub use augmented::{check_commutativity, CommutativityReport};
pub use jacobian::{jacobian_flow_solve, JacobianFlow};

pub(crate) use augmented::{Augmented, RunningCost};

use crate::brownian::{BrownianMotion, Reflected};
use crate::error::{contract, Result, SdeError};
use crate::solvers::{run, Scheme, SolveResult, SolverConfig, Stats, SystemDynamics};
use crate::systems::{ito_to_stratonovich, Interpretation, NoiseKind, SdeSystem};

/// Output of a backward adjoint solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointResult {
    /// `∂L/∂z(t0)`.
    pub grad_z0: Vec<f64>,
    /// `∂L/∂θ`.
    pub grad_theta: Vec<f64>,
    /// Reconstructed states at the output times, last to first, with the
    /// backward solve's counters.
    pub backward: SolveResult,
}

impl AdjointResult {
    /// The reconstructed initial state.
    pub fn z0_reconstructed(&self) -> &[f64] {
        self.backward.last()
    }
}

/// Gradients of a loss `L(z(t1))` for a Stratonovich system.
///
/// `z_t` must be the forward solution at `t1` driven by `bm`; `z0` is only used
/// to check shapes and is otherwise available to the caller through
/// [`AdjointResult::z0_reconstructed`].
#[allow(clippy::too_many_arguments)]
pub fn adjoint_gradients<S, B>(
    sys: &S,
    z0: &[f64],
    t0: f64,
    t1: f64,
    bm: &B,
    loss_grad: &[f64],
    z_t: &[f64],
    cfg: &SolverConfig,
) -> Result<AdjointResult>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    if z0.len() != sys.dim() {
        return Err(contract("initial state has the wrong dimension"));
    }
    let zero = vec![0.0; sys.dim()];
    adjoint_at_times(sys, &[t0, t1], z_t, &[&zero, loss_grad], bm, cfg)
}

/// Gradients of a loss depending on the states at the ascending times `ts`.
///
/// `cotangents[k]` is `∂L/∂z(ts[k])` and `z_end` the forward state at the last
/// time.
pub fn adjoint_at_times<S, B>(
    sys: &S,
    ts: &[f64],
    z_end: &[f64],
    cotangents: &[&[f64]],
    bm: &B,
    cfg: &SolverConfig,
) -> Result<AdjointResult>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    adjoint_core(sys, ts, z_end, cotangents, bm, cfg, None)
}

pub(crate) fn adjoint_core<S, B>(
    sys: &S,
    ts: &[f64],
    z_end: &[f64],
    cotangents: &[&[f64]],
    bm: &B,
    cfg: &SolverConfig,
    cost: Option<(&dyn RunningCost, f64)>,
) -> Result<AdjointResult>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    cfg.validate()?;
    if sys.interpretation() != Interpretation::Stratonovich {
        return Err(SdeError::Interpretation {
            scheme: "adjoint",
            expected: Interpretation::Stratonovich,
            found: sys.interpretation(),
        });
    }
    let d = sys.dim();
    if ts.is_empty() || cotangents.len() != ts.len() {
        return Err(contract("one cotangent per output time is required"));
    }
    if z_end.len() != d || bm.dim() != d || cotangents.iter().any(|c| c.len() != d) {
        return Err(contract("state, cotangent and Brownian dimensions must match the system"));
    }
    if ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(contract("output times must be ascending"));
    }
    let (lo, hi) = (ts[0], ts[ts.len() - 1]);
    for t in [lo, hi] {
        if !(t >= bm.t_start() && t <= bm.t_end()) {
            return Err(SdeError::OutOfRange {
                t,
                lo: bm.t_start(),
                hi: bm.t_end(),
            });
        }
    }

    let aug = Augmented::new(sys, cost);
    if cfg.scheme == Scheme::Milstein {
        if sys.noise() != NoiseKind::Diagonal {
            return Err(SdeError::Unsupported("Milstein adjoint needs diagonal noise".into()));
        }
        let report = augmented::commutativity_of(&aug, 1);
        if !report.commutative {
            return Err(SdeError::Unsupported(format!(
                "augmented diffusion is not commutative (violation {:e})",
                report.max_violation
            )));
        }
    }

    let p = sys.params().len();
    let n = ts.len();
    let mut y = vec![0.0; 2 * d + p];
    y[..d].copy_from_slice(z_end);
    let s_ts: Vec<f64> = ts.iter().rev().map(|t| -t).collect();
    let mut states = Vec::with_capacity(n);
    let mut stats = Stats::default();
    run(&aug, &mut y, &s_ts, &Reflected(bm), cfg, true, &mut stats, |k, y| {
        let cot = cotangents[n - 1 - k];
        y[d..2 * d].iter_mut().zip(cot).for_each(|(a, c)| *a += c);
        states.push(y[..d].to_vec());
        Ok(())
    })
    .map_err(|e| match e {
        SdeError::Divergence { t } => SdeError::Divergence { t: -t },
        SdeError::StepUnderflow { t, h } => SdeError::StepUnderflow { t: -t, h },
        other => other,
    })?;

    Ok(AdjointResult {
        grad_z0: y[d..2 * d].to_vec(),
        grad_theta: y[2 * d..].to_vec(),
        backward: SolveResult {
            times: ts.iter().rev().copied().collect(),
            states,
            nfe_drift: stats.nfe_drift,
            nfe_diffusion: stats.nfe_diffusion,
            steps_accepted: stats.accepted,
            steps_rejected: stats.rejected,
            max_error_ratio: stats.max_error_ratio,
        },
    })
}

/// The Stratonovich form of a system, converting Itô systems.
pub fn as_stratonovich<'a, S: SdeSystem + ?Sized>(sys: &'a S) -> Box<dyn SdeSystem + 'a> {
    match sys.interpretation() {
        Interpretation::Stratonovich => Box::new(sys),
        Interpretation::Ito => Box::new(ito_to_stratonovich(sys).expect("interpretation checked")),
    }
}

/// Forward solve of the Stratonovich form of `sys` with the scheme the adjoint
/// pairs with: Milstein and Heun act on the Stratonovich system directly, and
/// Euler–Maruyama on its Itô drift.
pub fn pipeline_forward<S, B>(sys: &S, z0: &[f64], ts: &[f64], bm: &B, cfg: &SolverConfig) -> Result<SolveResult>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    cfg.validate()?;
    let strat = as_stratonovich(sys);
    if cfg.scheme == Scheme::Milstein && strat.noise() != NoiseKind::Diagonal {
        return Err(SdeError::Unsupported("Milstein needs diagonal noise".into()));
    }
    if z0.len() != sys.dim() || bm.dim() != sys.dim() {
        return Err(contract("state and Brownian dimensions must match the system"));
    }
    if ts.is_empty() || ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(contract("output times must be ascending"));
    }
    let mut y = z0.to_vec();
    let mut states = Vec::with_capacity(ts.len());
    let mut stats = Stats::default();
    run(&SystemDynamics::new(strat.as_ref()), &mut y, ts, bm, cfg, false, &mut stats, |_, y| {
        states.push(y.to_vec());
        Ok(())
    })?;
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

/// Forward solve followed by the adjoint pass for a loss of the terminal state.
///
/// Itô systems are converted to Stratonovich form first; the conversion's drift
/// correction takes part in the vector-Jacobian products, so gradients refer to
/// the original parameters.
pub fn sde_gradients<S, B>(
    sys: &S,
    z0: &[f64],
    t0: f64,
    t1: f64,
    bm: &B,
    cfg: &SolverConfig,
    loss_grad: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Result<(SolveResult, AdjointResult)>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    let forward = pipeline_forward(sys, z0, &[t0, t1], bm, cfg)?;
    let g = loss_grad(forward.last());
    let strat = as_stratonovich(sys);
    let adj = adjoint_gradients(strat.as_ref(), z0, t0, t1, bm, &g, forward.last(), cfg)?;
    Ok((forward, adj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::{Recording, VirtualBrownianTree};
    use crate::prng::RandomKey;
    use crate::solvers::sdeint;
    use crate::stats;
    use crate::systems::{make_example, make_gbm, Example, LinearSde, NeuralSde, WithParams};

    fn tree(seed: u64, dim: usize) -> VirtualBrownianTree {
        VirtualBrownianTree::new(RandomKey::from_seed(seed), 0.0, 1.0, dim)
    }

    #[test]
    fn deterministic_exponential_growth() {
        let sys = LinearSde::new(1, vec![0.5], vec![0.0], vec![0.0], Interpretation::Stratonovich);
        let bm = tree(1, 1);
        let cfg = SolverConfig::fixed(Scheme::Heun, 1e-4);
        let zt = sdeint(&sys, &[1.0], &[0.0, 1.0], &bm, &cfg).unwrap();
        let r = adjoint_gradients(&sys, &[1.0], 0.0, 1.0, &bm, &[1.0], zt.last(), &cfg).unwrap();
        let e = 0.5f64.exp();
        assert!((r.grad_z0[0] - e).abs() < 1e-3);
        // θ = [A, s, c]; only A matters for the deterministic growth
        assert!((r.grad_theta[0] - e).abs() < 1e-3);
        assert!((r.z0_reconstructed()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let p = make_example(Example::One, RandomKey::from_seed(2));
        let bm = tree(3, 10);
        let cfg = SolverConfig::fixed(Scheme::Milstein, 1.0 / 64.0);
        let (fwd, _) = sde_gradients(p.system.as_ref(), &p.x0, 0.0, 1.0, &bm, &cfg, |z| vec![0.0; z.len()]).unwrap();
        let strat = as_stratonovich(p.system.as_ref());
        let r = adjoint_gradients(strat.as_ref(), &p.x0, 0.0, 1.0, &bm, &[0.0; 10], fwd.last(), &cfg).unwrap();
        assert!(r.grad_z0.iter().chain(&r.grad_theta).all(|&g| g == 0.0));
    }

    #[test]
    fn ito_input_is_rejected() {
        let g = make_gbm(1.0, 0.5);
        let bm = tree(1, 1);
        let cfg = SolverConfig::fixed(Scheme::Milstein, 0.1);
        let err = adjoint_gradients(&g, &[1.0], 0.0, 1.0, &bm, &[1.0], &[1.0], &cfg).unwrap_err();
        assert!(matches!(err, SdeError::Interpretation { .. }));
    }

    #[test]
    fn mismatched_interval_is_rejected() {
        let g = as_stratonovich(&make_gbm(1.0, 0.5)).params().to_vec();
        assert_eq!(g.len(), 2);
        let sys = ito_to_stratonovich(make_gbm(1.0, 0.5)).unwrap();
        let bm = tree(1, 1);
        let cfg = SolverConfig::fixed(Scheme::Heun, 0.1);
        assert!(adjoint_gradients(&sys, &[1.0], 0.0, 2.0, &bm, &[1.0], &[1.0], &cfg).is_err());
    }

    #[test]
    fn gbm_gradients_match_closed_form() {
        let (mu, s, x0) = (1.0, 0.5, 0.7);
        let g = make_gbm(mu, s);
        let bm = tree(12, 1);
        let cfg = SolverConfig::fixed(Scheme::Milstein, 2f64.powi(-12));
        let (_, r) = sde_gradients(&g, &[x0], 0.0, 1.0, &bm, &cfg, |_| vec![1.0]).unwrap();
        let w = bm.query(1.0).unwrap()[0];
        let x = x0 * ((mu - 0.5 * s * s) + s * w).exp();
        let expected = [x * 1.0, x * (w - s)];
        assert!(stats::relative_error(&r.grad_theta, &expected) < 1e-3, "{:?} vs {expected:?}", r.grad_theta);
        assert!((r.grad_z0[0] - x / x0).abs() < 1e-3 * x / x0);
    }

    fn fd_gradient(sys: &dyn SdeSystem, z0: &[f64], bm: &VirtualBrownianTree, cfg: &SolverConfig) -> (Vec<f64>, Vec<f64>) {
        let loss = |s: &dyn SdeSystem, z0: &[f64]| pipeline_forward(s, z0, &[0.0, 1.0], bm, cfg).unwrap().last().iter().sum::<f64>();
        let eps = 1e-6;
        let theta = sys.params().to_vec();
        let gth = (0..theta.len())
            .map(|j| {
                let (mut a, mut b) = (theta.clone(), theta.clone());
                a[j] += eps;
                b[j] -= eps;
                (loss(&WithParams::new(sys, a), z0) - loss(&WithParams::new(sys, b), z0)) / (2.0 * eps)
            })
            .collect();
        let gz = (0..z0.len())
            .map(|i| {
                let (mut a, mut b) = (z0.to_vec(), z0.to_vec());
                a[i] += eps;
                b[i] -= eps;
                (loss(sys, &a) - loss(sys, &b)) / (2.0 * eps)
            })
            .collect();
        (gz, gth)
    }

    #[test]
    fn neural_gradients_match_finite_differences() {
        let sys = NeuralSde::new(2, 2, Interpretation::Stratonovich, RandomKey::from_seed(5));
        let bm = tree(8, 2);
        let z0 = [0.3, -0.4];
        for scheme in [Scheme::Milstein, Scheme::Heun] {
            let cfg = SolverConfig::fixed(scheme, 2f64.powi(-11));
            let (_, r) = sde_gradients(&sys, &z0, 0.0, 1.0, &bm, &cfg, |z| vec![1.0; z.len()]).unwrap();
            let (gz, gth) = fd_gradient(&sys, &z0, &bm, &cfg);
            assert!(stats::relative_error(&r.grad_theta, &gth) < 1e-3, "{scheme}: theta");
            assert!(stats::relative_error(&r.grad_z0, &gz) < 1e-3, "{scheme}: z0");
        }
    }

    #[test]
    fn backward_queries_hit_forward_times() {
        let p = make_example(Example::Two, RandomKey::from_seed(4));
        let bm = Recording::new(tree(9, 10));
        let cfg = SolverConfig::fixed(Scheme::Milstein, 0.01);
        let fwd = pipeline_forward(p.system.as_ref(), &p.x0, &[0.0, 0.5, 1.0], &bm, &cfg).unwrap();
        let mut f_log = bm.take_log();
        let strat = as_stratonovich(p.system.as_ref());
        let ones = [1.0; 10];
        let zero = [0.0; 10];
        adjoint_at_times(strat.as_ref(), &[0.0, 0.5, 1.0], fwd.last(), &[&zero, &ones, &ones], &bm, &cfg).unwrap();
        let mut b_log = bm.take_log();
        for log in [&mut f_log, &mut b_log] {
            log.sort_by(f64::total_cmp);
            log.dedup();
        }
        assert_eq!(f_log, b_log);
    }

    #[test]
    fn intermediate_cotangents_accumulate() {
        // L = sum z(0.5) + sum z(1): gradient is the sum of the two single-time gradients
        let sys = ito_to_stratonovich(make_gbm(0.8, 0.3)).unwrap();
        let bm = tree(10, 1);
        let cfg = SolverConfig::fixed(Scheme::Milstein, 1.0 / 256.0);
        let fwd = pipeline_forward(&sys, &[1.0], &[0.0, 0.5, 1.0], &bm, &cfg).unwrap();
        let both = adjoint_at_times(&sys, &[0.0, 0.5, 1.0], fwd.last(), &[&[0.0], &[1.0], &[1.0]], &bm, &cfg).unwrap();
        let late = adjoint_at_times(&sys, &[0.0, 0.5, 1.0], fwd.last(), &[&[0.0], &[0.0], &[1.0]], &bm, &cfg).unwrap();
        let mid = adjoint_gradients(&sys, &[1.0], 0.0, 0.5, &bm, &[1.0], &fwd.states[1], &cfg).unwrap();
        for i in 0..2 {
            let sum = late.grad_theta[i] + mid.grad_theta[i];
            assert!((both.grad_theta[i] - sum).abs() < 1e-3 * sum.abs().max(1.0));
        }
        assert_eq!(both.backward.states.len(), 3);
    }
}

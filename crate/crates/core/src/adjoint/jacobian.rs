use super::as_stratonovich;
use crate::brownian::{BrownianMotion, Reflected};
use crate::error::{contract, Result, SdeError};
use crate::solvers::{run, Dynamics, Scheme, SolverConfig, Stats};
use crate::systems::{Interpretation, SdeSystem};

/// Jacobians of the stochastic flow between `t0` and `t1`, row-major `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianFlow {
    /// `∂z(t0)/∂z(t1)` along the reconstructed backward flow.
    pub j: Vec<f64>,
    /// `∂z(t1)/∂z(t0)`, the inverse of `j`.
    pub k: Vec<f64>,
    /// The reconstructed `z(t0)`.
    pub z: Vec<f64>,
    pub dim: usize,
}

impl JacobianFlow {
    /// `‖J·K − I‖_∞` (maximum absolute entry).
    pub fn identity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let v: f64 = (0..d).map(|i| self.j[r * d + i] * self.k[i * d + c]).sum();
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// The adjoint row vector `∇L · K` for a loss gradient at `t1`.
    pub fn pull_back(&self, loss_grad: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|c| (0..d).map(|r| loss_grad[r] * self.k[r * d + c]).sum()).collect()
    }
}

/// Backward dynamics for `[z, J, K]` in reflected time:
/// `dJ = -∇b J ds - (∇σ ⊙ dW̄) J` and `dK = K ∇b ds + K (∇σ ⊙ dW̄)`.
struct Flow<'a> {
    sys: &'a dyn SdeSystem,
    theta: &'a [f64],
    d: usize,
}

impl Flow<'_> {
    /// Row-major `∂f/∂z` from vjps against unit vectors.
    fn jacobian(&self, t: f64, z: &[f64], diffusion: bool) -> Vec<f64> {
        let d = self.d;
        let mut jac = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        let mut gth = vec![0.0; self.theta.len()];
        for r in 0..d {
            e[r] = 1.0;
            let row = &mut jac[r * d..(r + 1) * d];
            if diffusion {
                self.sys.diffusion_vjp(t, z, self.theta, &e, row, &mut gth);
            } else {
                self.sys.drift_vjp(t, z, self.theta, &e, row, &mut gth);
            }
            e[r] = 0.0;
        }
        jac
    }

    /// Writes `(-M J, K M)` into the matrix blocks of `out`.
    fn propagate(&self, m: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.d;
        let (j, k) = (&y[d..d + d * d], &y[d + d * d..]);
        let (oj, ok) = out[d..].split_at_mut(d * d);
        for r in 0..d {
            for c in 0..d {
                oj[r * d + c] = -(0..d).map(|i| m[r * d + i] * j[i * d + c]).sum::<f64>();
                ok[r * d + c] = (0..d).map(|i| k[r * d + i] * m[i * d + c]).sum::<f64>();
            }
        }
    }
}

impl Dynamics for Flow<'_> {
    fn dim(&self) -> usize {
        self.d + 2 * self.d * self.d
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Stratonovich
    }
    fn drift(&self, s: f64, y: &[f64], out: &mut [f64]) {
        let (d, t) = (self.d, -s);
        let z = &y[..d];
        self.sys.drift(t, z, self.theta, &mut out[..d]);
        out[..d].iter_mut().for_each(|v| *v = -*v);
        let m = self.jacobian(t, z, false);
        self.propagate(&m, y, out);
    }
    fn noise(&self, s: f64, y: &[f64], dw: &[f64], out: &mut [f64]) {
        let (d, t) = (self.d, -s);
        let z = &y[..d];
        self.sys.diffusion(t, z, self.theta, &mut out[..d]);
        out[..d].iter_mut().zip(dw).for_each(|(o, w)| *o = -*o * w);
        let mut m = self.jacobian(t, z, true);
        for r in 0..d {
            m[r * d..(r + 1) * d].iter_mut().for_each(|v| *v *= dw[r]);
        }
        self.propagate(&m, y, out);
    }
    fn noise_with_square(&self, _: f64, _: &[f64], _: &[f64], _: &[f64], _: &mut [f64], _: &mut [f64]) {
        unreachable!("the Jacobian flow is integrated with Heun steps")
    }
}

/// Integrates the Jacobian flow of the Stratonovich form of `sys` backward
/// from `z(t1) = z_t` to `t0`, driven by the same noise as the forward solve.
///
/// Only Heun stepping is supported, and `d ≤ 4`.
pub fn jacobian_flow_solve<S, B>(
    sys: &S,
    z_t: &[f64],
    t0: f64,
    t1: f64,
    bm: &B,
    cfg: &SolverConfig,
) -> Result<JacobianFlow>
where
    S: SdeSystem + ?Sized,
    B: BrownianMotion + ?Sized,
{
    cfg.validate()?;
    if cfg.scheme != Scheme::Heun {
        return Err(SdeError::Unsupported("the Jacobian flow is integrated with Heun only".into()));
    }
    let d = sys.dim();
    if d > 4 {
        return Err(contract("the Jacobian flow is limited to d <= 4"));
    }
    if z_t.len() != d || bm.dim() != d {
        return Err(contract("state and Brownian dimensions must match the system"));
    }
    if t1 < t0 {
        return Err(contract("t0 must not exceed t1"));
    }
    for t in [t0, t1] {
        if !(t >= bm.t_start() && t <= bm.t_end()) {
            return Err(SdeError::OutOfRange {
                t,
                lo: bm.t_start(),
                hi: bm.t_end(),
            });
        }
    }
    let strat = as_stratonovich(sys);
    let flow = Flow {
        sys: strat.as_ref(),
        theta: strat.params(),
        d,
    };
    let mut y = vec![0.0; flow.dim()];
    y[..d].copy_from_slice(z_t);
    for i in 0..d {
        y[d + i * d + i] = 1.0;
        y[d + d * d + i * d + i] = 1.0;
    }
    let mut stats = Stats::default();
    run(&flow, &mut y, &[-t1, -t0], &Reflected(bm), cfg, true, &mut stats, |_, _| Ok(())).map_err(|e| match e {
        SdeError::Divergence { t } => SdeError::Divergence { t: -t },
        SdeError::StepUnderflow { t, h } => SdeError::StepUnderflow { t: -t, h },
        other => other,
    })?;
    Ok(JacobianFlow {
        z: y[..d].to_vec(),
        j: y[d..d + d * d].to_vec(),
        k: y[d + d * d..].to_vec(),
        dim: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{adjoint_gradients, pipeline_forward};
    use crate::brownian::VirtualBrownianTree;
    use crate::prng::RandomKey;
    use crate::stats;
    use crate::systems::{make_gbm, ito_to_stratonovich, Gbm, LinearSde};

    fn tree(seed: u64, dim: usize) -> VirtualBrownianTree {
        VirtualBrownianTree::new(RandomKey::from_seed(seed), 0.0, 1.0, dim)
    }

    /// `exp(M)` by scaling and squaring of a truncated Taylor series.
    fn expm(m: &[f64], d: usize) -> Vec<f64> {
        let scale = 1.0 / 1024.0;
        let mut term: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let mut sum = term.clone();
        for n in 1..20 {
            let mut next = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    next[r * d + c] = (0..d).map(|i| term[r * d + i] * m[i * d + c]).sum::<f64>() * scale / n as f64;
                }
            }
            term = next;
            sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
        }
        for _ in 0..10 {
            let mut sq = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    sq[r * d + c] = (0..d).map(|i| sum[r * d + i] * sum[i * d + c]).sum();
                }
            }
            sum = sq;
        }
        sum
    }

    #[test]
    fn linear_drift_matches_matrix_exponential() {
        let a = vec![-0.3, 0.8, 0.1, -0.5, 0.2, 0.0, 0.4, -0.1, 0.6];
        let sys = LinearSde::new(3, a.clone(), vec![0.0; 3], vec![0.0; 3], Interpretation::Stratonovich);
        let bm = tree(1, 3);
        let cfg = SolverConfig::fixed(Scheme::Heun, 1e-3);
        let flow = jacobian_flow_solve(&sys, &[1.0, -1.0, 0.5], 0.0, 1.0, &bm, &cfg).unwrap();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let expected = expm(&neg, 3);
        for (x, y) in flow.j.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
        assert!(flow.identity_error() < 1e-6);
    }

    #[test]
    fn gbm_flow_inverts() {
        let g = Gbm::new(vec![1.0, -0.5], vec![0.5, 0.3]);
        let bm = tree(2, 2);
        let cfg = SolverConfig::fixed(Scheme::Heun, 1e-4);
        let fwd = pipeline_forward(&g, &[0.7, 1.2], &[0.0, 1.0], &bm, &cfg).unwrap();
        let flow = jacobian_flow_solve(&g, fwd.last(), 0.0, 1.0, &bm, &cfg).unwrap();
        assert!(flow.identity_error() <= 1e-4, "{}", flow.identity_error());
        assert!(stats::relative_error(&flow.z, &[0.7, 1.2]) < 1e-4);
    }

    #[test]
    fn pulled_back_loss_matches_adjoint() {
        let g = Gbm::new(vec![0.4, -0.2], vec![0.6, 0.3]);
        let sys = ito_to_stratonovich(g).unwrap();
        let bm = tree(3, 2);
        let cfg = SolverConfig::fixed(Scheme::Heun, 1e-3);
        let fwd = pipeline_forward(&sys, &[0.5, 0.9], &[0.0, 1.0], &bm, &cfg).unwrap();
        let loss_grad = [1.0, -2.0];
        let adj = adjoint_gradients(&sys, &[0.5, 0.9], 0.0, 1.0, &bm, &loss_grad, fwd.last(), &cfg).unwrap();
        let flow = jacobian_flow_solve(&sys, fwd.last(), 0.0, 1.0, &bm, &cfg).unwrap();
        assert!(stats::relative_error(&adj.grad_z0, &flow.pull_back(&loss_grad)) < 1e-3);
    }

    #[test]
    fn rejects_other_schemes_and_large_systems() {
        let bm = tree(4, 1);
        let cfg = SolverConfig::fixed(Scheme::Milstein, 0.1);
        assert!(jacobian_flow_solve(&make_gbm(1.0, 0.5), &[1.0], 0.0, 1.0, &bm, &cfg).is_err());
        let big = LinearSde::new(5, vec![0.0; 25], vec![0.0; 5], vec![0.0; 5], Interpretation::Stratonovich);
        let cfg = SolverConfig::fixed(Scheme::Heun, 0.1);
        assert!(jacobian_flow_solve(&big, &[0.0; 5], 0.0, 1.0, &tree(5, 5), &cfg).is_err());
    }
}

use crate::prng::{split, standard_normal, RandomKey};
use crate::solvers::Dynamics;
use crate::systems::{Interpretation, SdeSystem};

/// An integrand `ℓ(z, t, θ)` added to the loss as `weight · ∫ ℓ dt`.
pub(crate) trait RunningCost: Sync {
    /// Adds `weight · ∂ℓ/∂z` to `gz` and `weight · ∂ℓ/∂θ` to `gtheta`.
    fn vjp(&self, t: f64, z: &[f64], theta: &[f64], weight: f64, gz: &mut [f64], gtheta: &mut [f64]);
}

/// The backward system for `y = [z, a_z, a_θ]` in reflected time `s = -t`:
///
/// ```text
/// dz   = -b ds          - σ ⊙ dW̄
/// da_z =  a·∂b/∂z ds    + (a ⊙ dW̄)·∂σ/∂z
/// da_θ =  a·∂b/∂θ ds    + (a ⊙ dW̄)·∂σ/∂θ
/// ```
///
/// Noise column `j` moves only `z_j`, `a_j` and `a_θ`, and depends only on
/// `z_j` and `a_j`, so columns commute and the Milstein correction reduces to
/// per-column terms.
pub(crate) struct Augmented<'a, S: ?Sized> {
    sys: &'a S,
    theta: &'a [f64],
    d: usize,
    cost: Option<(&'a dyn RunningCost, f64)>,
}

impl<'a, S: SdeSystem + ?Sized> Augmented<'a, S> {
    pub fn new(sys: &'a S, cost: Option<(&'a dyn RunningCost, f64)>) -> Self {
        Self {
            sys,
            theta: sys.params(),
            d: sys.dim(),
            cost,
        }
    }
}

impl<S: SdeSystem + ?Sized> Dynamics for Augmented<'_, S> {
    fn dim(&self) -> usize {
        2 * self.d + self.theta.len()
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Stratonovich
    }

    fn drift(&self, s: f64, y: &[f64], out: &mut [f64]) {
        let (d, t) = (self.d, -s);
        let (z, a) = (&y[..d], &y[d..2 * d]);
        let (oz, rest) = out.split_at_mut(d);
        self.sys.drift(t, z, self.theta, oz);
        oz.iter_mut().for_each(|v| *v = -*v);
        rest.fill(0.0);
        let (oa, oth) = rest.split_at_mut(d);
        self.sys.drift_vjp(t, z, self.theta, a, oa, oth);
        if let Some((cost, w)) = self.cost {
            cost.vjp(t, z, self.theta, w, oa, oth);
        }
    }

    fn noise(&self, s: f64, y: &[f64], dw: &[f64], out: &mut [f64]) {
        let (d, t) = (self.d, -s);
        let (z, a) = (&y[..d], &y[d..2 * d]);
        let c: Vec<f64> = a.iter().zip(dw).map(|(a, w)| a * w).collect();
        let (oz, rest) = out.split_at_mut(d);
        self.sys.diffusion(t, z, self.theta, oz);
        oz.iter_mut().zip(dw).for_each(|(o, w)| *o = -*o * w);
        rest.fill(0.0);
        let (oa, oth) = rest.split_at_mut(d);
        self.sys.diffusion_vjp(t, z, self.theta, &c, oa, oth);
    }

    fn noise_with_square(&self, s: f64, y: &[f64], dw: &[f64], w: &[f64], out: &mut [f64], sq: &mut [f64]) {
        let (d, t) = (self.d, -s);
        let (z, a) = (&y[..d], &y[d..2 * d]);
        let (oz, rest) = out.split_at_mut(d);
        let (sz, sq_rest) = sq.split_at_mut(d);
        self.sys.diffusion(t, z, self.theta, oz);
        self.sys.diffusion_dz_diag(t, z, self.theta, sz);
        let mut c_noise = vec![0.0; d];
        let mut c_sigma = vec![0.0; d];
        let mut c_dsigma = vec![0.0; d];
        for i in 0..d {
            let (sigma, dsigma) = (oz[i], sz[i]);
            c_noise[i] = a[i] * dw[i];
            c_sigma[i] = w[i] * a[i] * dsigma;
            c_dsigma[i] = -w[i] * a[i] * sigma;
            sz[i] = sigma * dsigma * w[i];
            oz[i] = -sigma * dw[i];
        }
        rest.fill(0.0);
        let (oa, oth) = rest.split_at_mut(d);
        self.sys.diffusion_vjp(t, z, self.theta, &c_noise, oa, oth);
        sq_rest.fill(0.0);
        let (qa, qth) = sq_rest.split_at_mut(d);
        self.sys.diffusion_vjp(t, z, self.theta, &c_sigma, qa, qth);
        self.sys.diffusion_dz_diag_vjp(t, z, self.theta, &c_dsigma, qa, qth);
    }
}

/// Largest violation of the commutativity condition found by
/// [`check_commutativity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommutativityReport {
    pub max_violation: f64,
    /// `max_violation <= 1e-8`.
    pub commutative: bool,
}

const COMMUTATIVITY_TOLERANCE: f64 = 1e-8;
const PROBE_SEED: u64 = 0x5eed_c0de;

/// Checks numerically whether the noise columns `G_j` of the system's
/// augmented adjoint diffusion commute, `(∇G_i) G_j = (∇G_j) G_i`, at 100
/// random states. Directional derivatives use central differences.
pub fn check_commutativity<S: SdeSystem + ?Sized>(sys: &S) -> CommutativityReport {
    commutativity_of(&Augmented::new(sys, None), 100)
}

pub(crate) fn commutativity_of<D: Dynamics + ?Sized>(dy: &D, probes: u64) -> CommutativityReport {
    let (n, m) = (dy.dim(), dy.noise_dim());
    let eps = 1e-6;
    let root = RandomKey::from_seed(PROBE_SEED);
    let mut worst: f64 = 0.0;
    let mut unit = vec![0.0; m];
    let column = |y: &[f64], j: usize, unit: &mut [f64], out: &mut [f64]| {
        unit[j] = 1.0;
        dy.noise(-0.5, y, unit, out);
        unit[j] = 0.0;
    };
    let directional = |y: &[f64], j: usize, v: &[f64], unit: &mut [f64]| -> Vec<f64> {
        let plus: Vec<f64> = y.iter().zip(v).map(|(y, v)| y + eps * v).collect();
        let minus: Vec<f64> = y.iter().zip(v).map(|(y, v)| y - eps * v).collect();
        let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
        column(&plus, j, unit, &mut gp);
        column(&minus, j, unit, &mut gm);
        gp.iter().zip(&gm).map(|(p, q)| (p - q) / (2.0 * eps)).collect()
    };
    for probe in 0..probes {
        let y = standard_normal(split(root, probe, probes).expect("probe index in range"), n);
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut g = vec![0.0; n];
                column(&y, j, &mut unit, &mut g);
                g
            })
            .collect();
        for j1 in 0..m {
            for j2 in j1 + 1..m {
                let lhs = directional(&y, j1, &cols[j2], &mut unit);
                let rhs = directional(&y, j2, &cols[j1], &mut unit);
                for (l, r) in lhs.iter().zip(&rhs) {
                    worst = worst.max((l - r).abs());
                }
            }
        }
    }
    CommutativityReport {
        max_violation: worst,
        commutative: worst <= COMMUTATIVITY_TOLERANCE,
    }
}

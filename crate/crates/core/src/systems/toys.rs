use super::{Interpretation, NoiseKind, ParamRegistry, SdeSystem};

/// Geometric Brownian motion per component: `dz_i = μ_i z_i dt + s_i z_i dW_i`
/// (Itô). Parameters: `[μ_1..μ_d, s_1..s_d]`.
#[derive(Debug, Clone)]
pub struct Gbm {
    dim: usize,
    theta: Vec<f64>,
}

impl Gbm {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        assert_eq!(mu.len(), sigma.len());
        let dim = mu.len();
        Self {
            dim,
            theta: mu.into_iter().chain(sigma).collect(),
        }
    }
}

pub fn make_gbm(mu: f64, sigma: f64) -> Gbm {
    Gbm::new(vec![mu], vec![sigma])
}

impl SdeSystem for Gbm {
    fn dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Ito
    }
    fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("mu", self.dim);
        r.push("sigma", self.dim);
        r
    }
    fn drift(&self, _t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = theta[i] * z[i];
        }
    }
    fn diffusion(&self, _t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = theta[self.dim + i] * z[i];
        }
    }
    fn drift_vjp(&self, _t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        for i in 0..self.dim {
            gz[i] += a[i] * theta[i];
            gtheta[i] += a[i] * z[i];
        }
    }
    fn diffusion_vjp(&self, _t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            gz[i] += a[i] * theta[d + i];
            gtheta[d + i] += a[i] * z[i];
        }
    }
    fn diffusion_dz_diag(&self, _t: f64, _z: &[f64], theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&theta[self.dim..]);
    }
    fn diffusion_dz_diag_vjp(&self, _t: f64, _z: &[f64], _theta: &[f64], c: &[f64], _gz: &mut [f64], gtheta: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            gtheta[d + i] += c[i];
        }
    }
}

/// Lorenz system with additive diagonal noise. Parameters:
/// `[σ, ρ, β, α_x, α_y, α_z]`.
#[derive(Debug, Clone)]
pub struct StochasticLorenz {
    theta: Vec<f64>,
}

pub fn make_stochastic_lorenz(sigma: f64, rho: f64, beta: f64, alpha: [f64; 3]) -> StochasticLorenz {
    StochasticLorenz {
        theta: vec![sigma, rho, beta, alpha[0], alpha[1], alpha[2]],
    }
}

impl SdeSystem for StochasticLorenz {
    fn dim(&self) -> usize {
        3
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Ito
    }
    fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        for name in ["sigma", "rho", "beta", "alpha_x", "alpha_y", "alpha_z"] {
            r.push(name, 1);
        }
        r
    }
    fn drift(&self, _t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        let (x, y, w) = (z[0], z[1], z[2]);
        out[0] = th[0] * (y - x);
        out[1] = x * (th[1] - w) - y;
        out[2] = x * y - th[2] * w;
    }
    fn diffusion(&self, _t: f64, _z: &[f64], th: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&th[3..6]);
    }
    fn drift_vjp(&self, _t: f64, z: &[f64], th: &[f64], a: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        let (x, y, w) = (z[0], z[1], z[2]);
        gz[0] += -a[0] * th[0] + a[1] * (th[1] - w) + a[2] * y;
        gz[1] += a[0] * th[0] - a[1] + a[2] * x;
        gz[2] += -a[1] * x - a[2] * th[2];
        gth[0] += a[0] * (y - x);
        gth[1] += a[1] * x;
        gth[2] += -a[2] * w;
    }
    fn diffusion_vjp(&self, _t: f64, _z: &[f64], _th: &[f64], a: &[f64], _gz: &mut [f64], gth: &mut [f64]) {
        for i in 0..3 {
            gth[3 + i] += a[i];
        }
    }
    fn diffusion_dz_diag(&self, _t: f64, _z: &[f64], _th: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion_dz_diag_vjp(&self, _t: f64, _z: &[f64], _th: &[f64], _c: &[f64], _gz: &mut [f64], _gth: &mut [f64]) {}
}

/// Linear drift with affine diagonal diffusion:
/// `dz = A z dt + (s ⊙ z + c) dW`. Parameters: `[A (row-major), s, c]`.
#[derive(Debug, Clone)]
pub struct LinearSde {
    dim: usize,
    theta: Vec<f64>,
    interpretation: Interpretation,
}

impl LinearSde {
    pub fn new(dim: usize, a: Vec<f64>, s: Vec<f64>, c: Vec<f64>, interpretation: Interpretation) -> Self {
        assert_eq!(a.len(), dim * dim);
        assert_eq!(s.len(), dim);
        assert_eq!(c.len(), dim);
        Self {
            dim,
            theta: a.into_iter().chain(s).chain(c).collect(),
            interpretation,
        }
    }
}

impl SdeSystem for LinearSde {
    fn dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        self.interpretation
    }
    fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("A", self.dim * self.dim);
        r.push("s", self.dim);
        r.push("c", self.dim);
        r
    }
    fn drift(&self, _t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = (0..d).map(|j| th[i * d + j] * z[j]).sum();
        }
    }
    fn diffusion(&self, _t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = th[d * d + i] * z[i] + th[d * d + d + i];
        }
    }
    fn drift_vjp(&self, _t: f64, z: &[f64], th: &[f64], a: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                gz[j] += a[i] * th[i * d + j];
                gth[i * d + j] += a[i] * z[j];
            }
        }
    }
    fn diffusion_vjp(&self, _t: f64, z: &[f64], th: &[f64], a: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            gz[i] += a[i] * th[d * d + i];
            gth[d * d + i] += a[i] * z[i];
            gth[d * d + d + i] += a[i];
        }
    }
    fn diffusion_dz_diag(&self, _t: f64, _z: &[f64], th: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.copy_from_slice(&th[d * d..d * d + d]);
    }
    fn diffusion_dz_diag_vjp(&self, _t: f64, _z: &[f64], _th: &[f64], c: &[f64], _gz: &mut [f64], gth: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            gth[d * d + i] += c[i];
        }
    }
}

/// Two-dimensional system whose noise coefficients are swapped across
/// components, `σ_1 = s z_2`, `σ_2 = s z_1`, with drift `-z`. Its noise is not
/// commutative.
#[derive(Debug, Clone)]
pub struct CrossDiffusion {
    theta: Vec<f64>,
    interpretation: Interpretation,
}

impl CrossDiffusion {
    pub fn new(s: f64, interpretation: Interpretation) -> Self {
        Self {
            theta: vec![s],
            interpretation,
        }
    }
}

impl SdeSystem for CrossDiffusion {
    fn dim(&self) -> usize {
        2
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        self.interpretation
    }
    fn noise(&self) -> NoiseKind {
        NoiseKind::DiagonalCoupled
    }
    fn drift(&self, _t: f64, z: &[f64], _th: &[f64], out: &mut [f64]) {
        out[0] = -z[0];
        out[1] = -z[1];
    }
    fn diffusion(&self, _t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] * z[1];
        out[1] = th[0] * z[0];
    }
    fn drift_vjp(&self, _t: f64, _z: &[f64], _th: &[f64], a: &[f64], gz: &mut [f64], _gth: &mut [f64]) {
        gz[0] -= a[0];
        gz[1] -= a[1];
    }
    fn diffusion_vjp(&self, _t: f64, z: &[f64], th: &[f64], a: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        gz[1] += a[0] * th[0];
        gz[0] += a[1] * th[0];
        gth[0] += a[0] * z[1] + a[1] * z[0];
    }
    fn diffusion_dz_diag(&self, _t: f64, _z: &[f64], _th: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion_dz_diag_vjp(&self, _t: f64, _z: &[f64], _th: &[f64], _c: &[f64], _gz: &mut [f64], _gth: &mut [f64]) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::{standard_normal, RandomKey};
    use crate::systems::vjp_fd_error;

    fn probes(sys: &dyn SdeSystem, seed: u64) {
        let d = sys.dim();
        for k in 0..20 {
            let r = standard_normal(RandomKey::from_seed(seed * 100 + k), 2 * d);
            let err = vjp_fd_error(sys, 0.37, &r[..d], &r[d..], 1e-6);
            assert!(err < 1e-4, "probe {k}: relative error {err}");
        }
    }

    #[test]
    fn gbm_vjps() {
        probes(&Gbm::new(vec![1.0, -0.3], vec![0.5, 0.2]), 1);
    }

    #[test]
    fn lorenz_vjps() {
        probes(&make_stochastic_lorenz(10.0, 28.0, 8.0 / 3.0, [0.15; 3]), 2);
    }

    #[test]
    fn linear_vjps() {
        probes(
            &LinearSde::new(2, vec![0.1, -0.4, 0.3, -0.2], vec![0.2, 0.1], vec![0.3, -0.1], Interpretation::Ito),
            3,
        );
    }

    #[test]
    fn cross_vjps() {
        probes(&CrossDiffusion::new(0.8, Interpretation::Stratonovich), 4);
    }
}

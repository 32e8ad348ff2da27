use super::{Interpretation, NoiseKind, ParamRegistry, SdeSystem};
use crate::error::{Result, SdeError};

/// A system reinterpreted under the other stochastic calculus.
///
/// For diagonal noise the two drifts differ by `½ σ_i ∂σ_i/∂z_i` per component;
/// the diffusion is unchanged. The correction term takes part in the drift's
/// vector-Jacobian products.
#[derive(Debug, Clone)]
pub struct Converted<S> {
    inner: S,
    target: Interpretation,
    sign: f64,
}

impl<S: SdeSystem> Converted<S> {
    pub fn inner(&self) -> &S {
        &self.inner
    }
}

/// `b_strat = b_ito - ½ σ ∂σ/∂z` (componentwise).
pub fn ito_to_stratonovich<S: SdeSystem>(sys: S) -> Result<Converted<S>> {
    convert(sys, Interpretation::Ito, Interpretation::Stratonovich, -0.5)
}

/// `b_ito = b_strat + ½ σ ∂σ/∂z` (componentwise).
pub fn stratonovich_to_ito<S: SdeSystem>(sys: S) -> Result<Converted<S>> {
    convert(sys, Interpretation::Stratonovich, Interpretation::Ito, 0.5)
}

fn convert<S: SdeSystem>(sys: S, from: Interpretation, to: Interpretation, sign: f64) -> Result<Converted<S>> {
    if sys.interpretation() != from {
        return Err(SdeError::Interpretation {
            scheme: "conversion",
            expected: from,
            found: sys.interpretation(),
        });
    }
    Ok(Converted {
        inner: sys,
        target: to,
        sign,
    })
}

impl<S: SdeSystem> SdeSystem for Converted<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn params(&self) -> &[f64] {
        self.inner.params()
    }
    fn interpretation(&self) -> Interpretation {
        self.target
    }
    fn noise(&self) -> NoiseKind {
        self.inner.noise()
    }
    fn registry(&self) -> ParamRegistry {
        self.inner.registry()
    }

    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        let mut corr = vec![0.0; self.dim()];
        self.inner.drift(t, z, theta, out);
        self.inner.sigma_dsigma(t, z, theta, &mut corr);
        out.iter_mut().zip(&corr).for_each(|(o, c)| *o += self.sign * c);
    }

    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let d = self.dim();
        self.inner.drift_vjp(t, z, theta, a, gz, gtheta);
        // d(σ σ') = σ' dσ + σ dσ'
        let mut sigma = vec![0.0; d];
        let mut dsigma = vec![0.0; d];
        self.inner.diffusion(t, z, theta, &mut sigma);
        self.inner.diffusion_dz_diag(t, z, theta, &mut dsigma);
        let c1: Vec<f64> = (0..d).map(|i| self.sign * a[i] * dsigma[i]).collect();
        let c2: Vec<f64> = (0..d).map(|i| self.sign * a[i] * sigma[i]).collect();
        self.inner.diffusion_vjp(t, z, theta, &c1, gz, gtheta);
        self.inner.diffusion_dz_diag_vjp(t, z, theta, &c2, gz, gtheta);
    }

    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.inner.diffusion(t, z, theta, out)
    }
    fn diffusion_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        self.inner.diffusion_vjp(t, z, theta, a, gz, gtheta)
    }
    fn diffusion_dz_diag(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.inner.diffusion_dz_diag(t, z, theta, out)
    }
    fn diffusion_dz_diag_vjp(&self, t: f64, z: &[f64], theta: &[f64], c: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        self.inner.diffusion_dz_diag_vjp(t, z, theta, c, gz, gtheta)
    }
    fn sigma_dsigma(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.inner.sigma_dsigma(t, z, theta, out)
    }
}

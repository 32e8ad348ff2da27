//! SDE systems with diagonal noise and their derivative contracts.
//!
//! A system supplies drift `b(z, t, θ)` and diagonal diffusion `σ(z, t, θ)`
//! (component `i` of the state is driven by Wiener component `i` with
//! coefficient `σ_i`). The adjoint needs only vector-Jacobian products of these
//! callables plus the diagonal derivative `σ'_i = ∂σ_i/∂z_i` and its own
//! vector-Jacobian product, which is what Milstein steps and the Itô ↔
//! Stratonovich drift correction consume.
//!
//! All `*_vjp` methods **accumulate** into their gradient buffers.

mod convert;
pub mod dense;
mod neural;
mod problems;
mod toys;

pub use convert::{ito_to_stratonovich, stratonovich_to_ito, Converted};
pub use dense::{Activation, DenseNet};
pub use neural::NeuralSde;
pub use problems::{make_example, AnalyticProblem, Example};
pub use toys::{make_gbm, make_stochastic_lorenz, CrossDiffusion, Gbm, LinearSde, StochasticLorenz};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interpretation {
    Ito,
    Stratonovich,
}

impl std::fmt::Display for Interpretation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpretation::Ito => "ito",
            Interpretation::Stratonovich => "stratonovich",
        })
    }
}

/// Structure of the diagonal diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// `σ_i` depends on the state only through `z_i`. The noise is commutative
    /// and so is the noise of the adjoint system.
    Diagonal,
    /// One channel per component, but `σ_i` may depend on other components.
    /// Milstein-type schemes are not valid for such systems.
    DiagonalCoupled,
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamRegistry {
    blocks: Vec<ParamBlock>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.len();
        self.blocks.push(ParamBlock {
            name: name.into(),
            offset,
            len,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn slice<'a>(&self, name: &str, theta: &'a [f64]) -> Option<&'a [f64]> {
        self.get(name).map(|b| &theta[b.offset..b.offset + b.len])
    }
}

/// A diagonal-noise SDE `dz = b(z,t,θ) dt + σ(z,t,θ) ∘/· dW`.
///
/// Callables take the parameter vector explicitly so the same system can be
/// evaluated at perturbed parameters; [`SdeSystem::params`] holds the nominal
/// values.
pub trait SdeSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn interpretation(&self) -> Interpretation;

    fn noise(&self) -> NoiseKind {
        NoiseKind::Diagonal
    }

    fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("theta", self.params().len());
        r
    }

    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]);

    /// Adds `a·∂b/∂z` to `gz` and `a·∂b/∂θ` to `gtheta`.
    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]);

    /// Adds `a·∂σ/∂z` to `gz` and `a·∂σ/∂θ` to `gtheta`.
    fn diffusion_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]);

    /// Writes `σ'_i = ∂σ_i/∂z_i`.
    fn diffusion_dz_diag(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]);

    /// Adds `c·∂σ'/∂z` to `gz` and `c·∂σ'/∂θ` to `gtheta`.
    fn diffusion_dz_diag_vjp(
        &self,
        t: f64,
        z: &[f64],
        theta: &[f64],
        c: &[f64],
        gz: &mut [f64],
        gtheta: &mut [f64],
    );

    /// Writes `σ_i ∂σ_i/∂z_i`, the Milstein and Itô-correction term.
    fn sigma_dsigma(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        let mut dsigma = vec![0.0; self.dim()];
        self.diffusion(t, z, theta, out);
        self.diffusion_dz_diag(t, z, theta, &mut dsigma);
        out.iter_mut().zip(&dsigma).for_each(|(o, d)| *o *= d);
    }
}

impl<S: SdeSystem + ?Sized> SdeSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn params(&self) -> &[f64] {
        (**self).params()
    }
    fn interpretation(&self) -> Interpretation {
        (**self).interpretation()
    }
    fn noise(&self) -> NoiseKind {
        (**self).noise()
    }
    fn registry(&self) -> ParamRegistry {
        (**self).registry()
    }
    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).drift(t, z, theta, out)
    }
    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).diffusion(t, z, theta, out)
    }
    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        (**self).drift_vjp(t, z, theta, a, gz, gtheta)
    }
    fn diffusion_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        (**self).diffusion_vjp(t, z, theta, a, gz, gtheta)
    }
    fn diffusion_dz_diag(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).diffusion_dz_diag(t, z, theta, out)
    }
    fn diffusion_dz_diag_vjp(&self, t: f64, z: &[f64], theta: &[f64], c: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        (**self).diffusion_dz_diag_vjp(t, z, theta, c, gz, gtheta)
    }
    fn sigma_dsigma(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).sigma_dsigma(t, z, theta, out)
    }
}

impl<S: SdeSystem + ?Sized> SdeSystem for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn params(&self) -> &[f64] {
        (**self).params()
    }
    fn interpretation(&self) -> Interpretation {
        (**self).interpretation()
    }
    fn noise(&self) -> NoiseKind {
        (**self).noise()
    }
    fn registry(&self) -> ParamRegistry {
        (**self).registry()
    }
    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).drift(t, z, theta, out)
    }
    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).diffusion(t, z, theta, out)
    }
    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        (**self).drift_vjp(t, z, theta, a, gz, gtheta)
    }
    fn diffusion_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        (**self).diffusion_vjp(t, z, theta, a, gz, gtheta)
    }
    fn diffusion_dz_diag(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).diffusion_dz_diag(t, z, theta, out)
    }
    fn diffusion_dz_diag_vjp(&self, t: f64, z: &[f64], theta: &[f64], c: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        (**self).diffusion_dz_diag_vjp(t, z, theta, c, gz, gtheta)
    }
    fn sigma_dsigma(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).sigma_dsigma(t, z, theta, out)
    }
}

/// A system evaluated at replacement parameters.
pub struct WithParams<S> {
    pub inner: S,
    pub theta: Vec<f64>,
}

impl<S: SdeSystem> WithParams<S> {
    pub fn new(inner: S, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), inner.params().len(), "parameter length mismatch");
        Self { inner, theta }
    }
}

impl<S: SdeSystem> SdeSystem for WithParams<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        self.inner.interpretation()
    }
    fn noise(&self) -> NoiseKind {
        self.inner.noise()
    }
    fn registry(&self) -> ParamRegistry {
        self.inner.registry()
    }
    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.inner.drift(t, z, theta, out)
    }
    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.inner.diffusion(t, z, theta, out)
    }
    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        self.inner.drift_vjp(t, z, theta, a, gz, gtheta)
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

/// Central finite-difference checks of a system's derivative callables.
///
/// Returns the largest relative error (Euclidean, per probe) over the three
/// vector-Jacobian products.
pub fn vjp_fd_error(sys: &dyn SdeSystem, t: f64, z: &[f64], a: &[f64], step: f64) -> f64 {
    let d = sys.dim();
    let theta = sys.params().to_vec();
    let p = theta.len();
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let eval = |z: &[f64], th: &[f64], out: &mut [f64]| match k {
            0 => sys.drift(t, z, th, out),
            1 => sys.diffusion(t, z, th, out),
            _ => sys.diffusion_dz_diag(t, z, th, out),
        };
        let mut gz = vec![0.0; d];
        let mut gth = vec![0.0; p];
        match k {
            0 => sys.drift_vjp(t, z, &theta, a, &mut gz, &mut gth),
            1 => sys.diffusion_vjp(t, z, &theta, a, &mut gz, &mut gth),
            _ => sys.diffusion_dz_diag_vjp(t, z, &theta, a, &mut gz, &mut gth),
        }
        let dot = |z: &[f64], th: &[f64]| {
            let mut out = vec![0.0; d];
            eval(z, th, &mut out);
            out.iter().zip(a).map(|(o, a)| o * a).sum::<f64>()
        };
        let mut numeric = Vec::with_capacity(d + p);
        for i in 0..d {
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[i] += step;
            zm[i] -= step;
            numeric.push((dot(&zp, &theta) - dot(&zm, &theta)) / (2.0 * step));
        }
        for j in 0..p {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[j] += step;
            tm[j] -= step;
            numeric.push((dot(z, &tp) - dot(z, &tm)) / (2.0 * step));
        }
        let analytic: Vec<f64> = gz.into_iter().chain(gth).collect();
        let scale = numeric.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        let diff = analytic.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(diff / scale);
    }
    worst
}

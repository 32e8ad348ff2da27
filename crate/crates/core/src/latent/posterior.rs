use std::cell::Cell;
use std::ops::Range;

use super::LatentSdeModel;
use crate::adjoint::RunningCost;
use crate::solvers::Dynamics;
use crate::systems::{Interpretation, NoiseKind, ParamRegistry, SdeSystem};

/// Singular diffusion values below this bound make `u` undefined.
pub(crate) const SIGMA_FLOOR: f64 = 1e-8;

/// Which drift network moves the latent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DriftSide {
    Posterior,
    Prior,
}

/// The latent SDE as a diagonal-noise system.
///
/// Parameters are the posterior drift, prior drift and diffusion networks of
/// the model followed by the encoder context, so that one adjoint pass yields
/// gradients for all of them. The context enters only the posterior drift.
pub(crate) struct LatentSystem<'a> {
    pub model: &'a LatentSdeModel,
    pub theta: Vec<f64>,
    pub side: DriftSide,
}

impl<'a> LatentSystem<'a> {
    pub fn new(model: &'a LatentSdeModel, context: &[f64], side: DriftSide) -> Self {
        let mut theta = model.params[model.layout.sde.clone()].to_vec();
        theta.extend_from_slice(context);
        Self { model, theta, side }
    }

    fn post(&self) -> Range<usize> {
        let n = self.model.post_drift.n_params();
        0..n
    }

    fn prior(&self) -> Range<usize> {
        let s = self.post().end;
        s..s + self.model.prior_drift.n_params()
    }

    fn diff(&self, i: usize) -> Range<usize> {
        let n = self.model.diff_net.n_params();
        let s = self.prior().end + i * n;
        s..s + n
    }

    fn ctx(&self) -> Range<usize> {
        let s = self.diff(self.model.config.latent_dim).start;
        s..s + self.model.config.context_dim
    }

    fn post_input(&self, t: f64, z: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        x.push(t);
        x.extend_from_slice(&theta[self.ctx()]);
        x
    }

    fn prior_input(t: f64, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        x.push(t);
        x
    }

    fn post_drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        let x = self.post_input(t, z, theta);
        self.model.post_drift.forward(&theta[self.post()], &x, out);
    }

    fn prior_drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.model.prior_drift.forward(&theta[self.prior()], &Self::prior_input(t, z), out);
    }

    fn post_drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let d = z.len();
        let x = self.post_input(t, z, theta);
        let mut gx = vec![0.0; x.len()];
        self.model.post_drift.vjp(&theta[self.post()], &x, a, &mut gx, &mut gtheta[self.post()]);
        gz.iter_mut().zip(&gx).for_each(|(g, v)| *g += v);
        gtheta[self.ctx()].iter_mut().zip(&gx[d + 1..]).for_each(|(g, v)| *g += v);
    }

    fn prior_drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let x = Self::prior_input(t, z);
        let mut gx = vec![0.0; x.len()];
        self.model.prior_drift.vjp(&theta[self.prior()], &x, a, &mut gx, &mut gtheta[self.prior()]);
        gz.iter_mut().zip(&gx).for_each(|(g, v)| *g += v);
    }

    /// `u = (h_φ − h_θ)/σ` and `σ`, or the first component with `σ_i` below
    /// the floor.
    pub fn u(&self, t: f64, z: &[f64], theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), (usize, f64)> {
        let d = z.len();
        let (mut hp, mut hq, mut s) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        self.post_drift(t, z, theta, &mut hp);
        self.prior_drift(t, z, theta, &mut hq);
        self.diffusion(t, z, theta, &mut s);
        if let Some(i) = s.iter().position(|&v| !(v >= SIGMA_FLOOR)) {
            return Err((i, s[i]));
        }
        let u = (0..d).map(|i| (hp[i] - hq[i]) / s[i]).collect();
        Ok((u, s))
    }
}

impl SdeSystem for LatentSystem<'_> {
    fn dim(&self) -> usize {
        self.model.config.latent_dim
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Stratonovich
    }
    fn noise(&self) -> NoiseKind {
        NoiseKind::Diagonal
    }
    fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("posterior_drift", self.post().len());
        r.push("prior_drift", self.prior().len());
        for i in 0..self.dim() {
            r.push(format!("diffusion_{i}"), self.diff(i).len());
        }
        r.push("context", self.ctx().len());
        r
    }
    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        match self.side {
            DriftSide::Posterior => self.post_drift(t, z, theta, out),
            DriftSide::Prior => self.prior_drift(t, z, theta, out),
        }
    }
    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        for i in 0..z.len() {
            self.model.diff_net.forward(&theta[self.diff(i)], &[z[i], t], &mut out[i..i + 1]);
        }
    }
    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        match self.side {
            DriftSide::Posterior => self.post_drift_vjp(t, z, theta, a, gz, gtheta),
            DriftSide::Prior => self.prior_drift_vjp(t, z, theta, a, gz, gtheta),
        }
    }
    fn diffusion_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        for i in 0..z.len() {
            let r = self.diff(i);
            let mut gx = [0.0; 2];
            self.model.diff_net.vjp(&theta[r.clone()], &[z[i], t], &a[i..i + 1], &mut gx, &mut gtheta[r]);
            gz[i] += gx[0];
        }
    }
    fn diffusion_dz_diag(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        let mut value = [0.0];
        for i in 0..z.len() {
            self.model
                .diff_net
                .jvp(&theta[self.diff(i)], &[z[i], t], &[1.0, 0.0], &mut value, &mut out[i..i + 1]);
        }
    }
    fn diffusion_dz_diag_vjp(&self, t: f64, z: &[f64], theta: &[f64], c: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        for i in 0..z.len() {
            let r = self.diff(i);
            let mut gx = [0.0; 2];
            self.model.diff_net.jvp_vjp(
                &theta[r.clone()],
                &[z[i], t],
                &[1.0, 0.0],
                &c[i..i + 1],
                &mut gx,
                &mut gtheta[r],
            );
            gz[i] += gx[0];
        }
    }
}

/// The path KL rate `½|u|²` as a running cost.
impl RunningCost for LatentSystem<'_> {
    fn vjp(&self, t: f64, z: &[f64], theta: &[f64], weight: f64, gz: &mut [f64], gtheta: &mut [f64]) {
        let Ok((u, s)) = self.u(t, z, theta) else {
            gz.iter_mut().for_each(|g| *g = f64::NAN);
            return;
        };
        let d = z.len();
        let c_post: Vec<f64> = (0..d).map(|i| weight * u[i] / s[i]).collect();
        let c_prior: Vec<f64> = c_post.iter().map(|c| -c).collect();
        let c_sigma: Vec<f64> = (0..d).map(|i| -weight * u[i] * u[i] / s[i]).collect();
        self.post_drift_vjp(t, z, theta, &c_post, gz, gtheta);
        self.prior_drift_vjp(t, z, theta, &c_prior, gz, gtheta);
        self.diffusion_vjp(t, z, theta, &c_sigma, gz, gtheta);
    }
}

/// Forward dynamics of `(z, l)` where `dl = ½|u|² dt`.
///
/// A diffusion value below the floor is recorded and turns the KL channel into
/// NaN so the solver stops with a divergence error.
pub(crate) struct WithKl<'a, 'm> {
    pub sys: &'a LatentSystem<'m>,
    pub singular: Cell<Option<(usize, f64)>>,
}

impl<'a, 'm> WithKl<'a, 'm> {
    pub fn new(sys: &'a LatentSystem<'m>) -> Self {
        Self {
            sys,
            singular: Cell::new(None),
        }
    }
}

impl Dynamics for WithKl<'_, '_> {
    fn dim(&self) -> usize {
        self.sys.dim() + 1
    }
    fn noise_dim(&self) -> usize {
        self.sys.dim()
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Stratonovich
    }
    fn drift(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let d = self.sys.dim();
        let z = &y[..d];
        self.sys.post_drift(t, z, &self.sys.theta, &mut out[..d]);
        out[d] = match self.sys.u(t, z, &self.sys.theta) {
            Ok((u, _)) => 0.5 * u.iter().map(|v| v * v).sum::<f64>(),
            Err(bad) => {
                if self.singular.get().is_none() {
                    self.singular.set(Some(bad));
                }
                f64::NAN
            }
        };
    }
    fn noise(&self, t: f64, y: &[f64], dw: &[f64], out: &mut [f64]) {
        let d = self.sys.dim();
        self.sys.diffusion(t, &y[..d], &self.sys.theta, &mut out[..d]);
        out[..d].iter_mut().zip(dw).for_each(|(o, w)| *o *= w);
        out[d] = 0.0;
    }
    fn noise_with_square(&self, t: f64, y: &[f64], dw: &[f64], w: &[f64], out: &mut [f64], sq: &mut [f64]) {
        let d = self.sys.dim();
        let theta = &self.sys.theta;
        self.sys.diffusion(t, &y[..d], theta, &mut out[..d]);
        self.sys.diffusion_dz_diag(t, &y[..d], theta, &mut sq[..d]);
        for i in 0..d {
            sq[i] *= out[i] * w[i];
            out[i] *= dw[i];
        }
        out[d] = 0.0;
        sq[d] = 0.0;
    }
}

use crate::systems::{Interpretation, SdeSystem};

/// State-space view of an SDE with `m` noise channels that the steppers act on.
///
/// `square_term` returns `Σ_j (∇G_j · G_j) w_j` where `G_j` is the `j`-th noise
/// column. Milstein steps only need these diagonal products when the noise is
/// commutative and `∇G_j · G_k` vanishes for `j ≠ k`, which holds for every
/// implementor in this crate that enables Milstein.
pub(crate) trait Dynamics {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn interpretation(&self) -> Interpretation;

    fn drift(&self, t: f64, y: &[f64], out: &mut [f64]);

    /// Writes `G(y) dw`.
    fn noise(&self, t: f64, y: &[f64], dw: &[f64], out: &mut [f64]);

    /// Writes `G(y) dw` and `Σ_j (∇G_j · G_j) w_j`.
    fn noise_with_square(&self, t: f64, y: &[f64], dw: &[f64], w: &[f64], out: &mut [f64], sq: &mut [f64]);
}

/// Forward dynamics of a diagonal-noise system.
pub(crate) struct SystemDynamics<'a, S: ?Sized> {
    pub sys: &'a S,
    pub theta: &'a [f64],
}

impl<'a, S: SdeSystem + ?Sized> SystemDynamics<'a, S> {
    pub fn new(sys: &'a S) -> Self {
        Self {
            sys,
            theta: sys.params(),
        }
    }
}

impl<S: SdeSystem + ?Sized> Dynamics for SystemDynamics<'_, S> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn noise_dim(&self) -> usize {
        self.sys.dim()
    }
    fn interpretation(&self) -> Interpretation {
        self.sys.interpretation()
    }
    fn drift(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.sys.drift(t, y, self.theta, out);
    }
    fn noise(&self, t: f64, y: &[f64], dw: &[f64], out: &mut [f64]) {
        self.sys.diffusion(t, y, self.theta, out);
        out.iter_mut().zip(dw).for_each(|(o, w)| *o *= w);
    }
    fn noise_with_square(&self, t: f64, y: &[f64], dw: &[f64], w: &[f64], out: &mut [f64], sq: &mut [f64]) {
        self.sys.diffusion(t, y, self.theta, out);
        self.sys.diffusion_dz_diag(t, y, self.theta, sq);
        for i in 0..out.len() {
            sq[i] *= out[i] * w[i];
            out[i] *= dw[i];
        }
    }
}

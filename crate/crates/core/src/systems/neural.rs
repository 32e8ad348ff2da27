use super::dense::{Activation, DenseNet};
use super::{Interpretation, ParamRegistry, SdeSystem};
use crate::prng::{split, RandomKey};

/// Neural SDE with a dense drift on `[z, t]` and one small diffusion network
/// per component on `[z_i, t]` with a softplus head, so the noise is diagonal
/// and strictly positive.
///
/// Parameter layout: drift network, then the `d` diffusion networks in order.
#[derive(Debug, Clone)]
pub struct NeuralSde {
    dim: usize,
    drift_net: DenseNet,
    diff_net: DenseNet,
    theta: Vec<f64>,
    interpretation: Interpretation,
}

impl NeuralSde {
    pub fn new(dim: usize, hidden: usize, interpretation: Interpretation, key: RandomKey) -> Self {
        let drift_net = DenseNet::new(&[dim + 1, hidden, dim], Activation::Tanh, Activation::Identity);
        let diff_net = DenseNet::new(&[2, hidden, 1], Activation::Tanh, Activation::Softplus);
        let n = dim as u64 + 1;
        let mut theta = drift_net.init(split(key, 0, n).expect("index in range"));
        for i in 0..dim as u64 {
            theta.extend(diff_net.init(split(key, i + 1, n).expect("index in range")));
        }
        Self {
            dim,
            drift_net,
            diff_net,
            theta,
            interpretation,
        }
    }

    /// Replaces the parameter vector.
    pub fn with_params(mut self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.theta.len(), "parameter length mismatch");
        self.theta = theta;
        self
    }

    fn drift_len(&self) -> usize {
        self.drift_net.n_params()
    }

    fn diff_range(&self, i: usize) -> std::ops::Range<usize> {
        let n = self.diff_net.n_params();
        let start = self.drift_len() + i * n;
        start..start + n
    }

    fn drift_input(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim + 1);
        x.extend_from_slice(z);
        x.push(t);
        x
    }
}

impl SdeSystem for NeuralSde {
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
        r.push("drift", self.drift_len());
        for i in 0..self.dim {
            r.push(format!("diffusion_{i}"), self.diff_net.n_params());
        }
        r
    }
    fn drift(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        let x = self.drift_input(t, z);
        self.drift_net.forward(&theta[..self.drift_len()], &x, out);
    }
    fn diffusion(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            self.diff_net
                .forward(&theta[self.diff_range(i)], &[z[i], t], &mut out[i..i + 1]);
        }
    }
    fn drift_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        let x = self.drift_input(t, z);
        let n = self.drift_len();
        let mut gx = vec![0.0; self.dim + 1];
        self.drift_net.vjp(&theta[..n], &x, a, &mut gx, &mut gtheta[..n]);
        gz.iter_mut().zip(&gx).for_each(|(g, v)| *g += v);
    }
    fn diffusion_vjp(&self, t: f64, z: &[f64], theta: &[f64], a: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        for i in 0..self.dim {
            let r = self.diff_range(i);
            let mut gx = [0.0; 2];
            self.diff_net
                .vjp(&theta[r.clone()], &[z[i], t], &a[i..i + 1], &mut gx, &mut gtheta[r]);
            gz[i] += gx[0];
        }
    }
    fn diffusion_dz_diag(&self, t: f64, z: &[f64], theta: &[f64], out: &mut [f64]) {
        let mut value = [0.0];
        for i in 0..self.dim {
            self.diff_net.jvp(
                &theta[self.diff_range(i)],
                &[z[i], t],
                &[1.0, 0.0],
                &mut value,
                &mut out[i..i + 1],
            );
        }
    }
    fn diffusion_dz_diag_vjp(&self, t: f64, z: &[f64], theta: &[f64], c: &[f64], gz: &mut [f64], gtheta: &mut [f64]) {
        for i in 0..self.dim {
            let r = self.diff_range(i);
            let mut gx = [0.0; 2];
            self.diff_net.jvp_vjp(
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

//! Fully connected networks with hand-written reverse- and forward-mode passes.
//!
//! Parameters live outside the network in a flat slice: for each layer the
//! weight matrix (row-major, `out × in`) followed by the bias.

use crate::prng::{uniform, RandomKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Softplus,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Tanh => {
                let th = x.tanh();
                -2.0 * th * (1.0 - th * th)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

struct Tape {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl DenseNet {
    /// `sizes = [input, hidden.., output]`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, Activation)> + '_ {
        let last = self.sizes.len() - 2;
        self.sizes
            .windows(2)
            .enumerate()
            .scan(0usize, move |offset, (l, w)| {
                let start = *offset;
                *offset += w[0] * w[1] + w[1];
                let act = if l == last { self.output } else { self.hidden };
                Some((start, w[0], w[1], act))
            })
    }

    /// Uniform Glorot initialisation with zero biases.
    pub fn init(&self, key: RandomKey) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params()];
        let u = uniform(key, theta.len());
        for (start, n_in, n_out, _) in self.layers() {
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for k in start..start + n_in * n_out {
                theta[k] = (2.0 * u[k] - 1.0) * limit;
            }
        }
        theta
    }

    fn tape(&self, theta: &[f64], x: &[f64]) -> Tape {
        debug_assert_eq!(theta.len(), self.n_params());
        let mut pre = Vec::with_capacity(self.sizes.len() - 1);
        let mut post = vec![x.to_vec()];
        for (start, n_in, n_out, act) in self.layers() {
            let input = post.last().unwrap();
            let (w, b) = theta[start..start + n_in * n_out + n_out].split_at(n_in * n_out);
            let s: Vec<f64> = (0..n_out)
                .map(|r| b[r] + w[r * n_in..(r + 1) * n_in].iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            post.push(s.iter().map(|&v| act.apply(v)).collect());
            pre.push(s);
        }
        Tape { pre, post }
    }

    pub fn forward(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let tape = self.tape(theta, x);
        out.copy_from_slice(tape.post.last().unwrap());
    }

    /// Adds `cot·∂f/∂x` to `gx` and `cot·∂f/∂θ` to `gtheta`.
    pub fn vjp(&self, theta: &[f64], x: &[f64], cot: &[f64], gx: &mut [f64], gtheta: &mut [f64]) {
        let tape = self.tape(theta, x);
        let layers: Vec<_> = self.layers().collect();
        let mut gh = cot.to_vec();
        for (l, &(start, n_in, n_out, act)) in layers.iter().enumerate().rev() {
            let gs: Vec<f64> = gh.iter().zip(&tape.pre[l]).map(|(g, s)| g * act.derivative(*s)).collect();
            let input = &tape.post[l];
            let w_end = start + n_in * n_out;
            let mut next = vec![0.0; n_in];
            for r in 0..n_out {
                let row = start + r * n_in;
                for c in 0..n_in {
                    gtheta[row + c] += gs[r] * input[c];
                    next[c] += theta[row + c] * gs[r];
                }
                gtheta[w_end + r] += gs[r];
            }
            gh = next;
        }
        gx.iter_mut().zip(&gh).for_each(|(g, v)| *g += v);
    }

    /// Forward value and directional derivative `J(x) v`.
    pub fn jvp(&self, theta: &[f64], x: &[f64], v: &[f64], out: &mut [f64], tangent: &mut [f64]) {
        let mut h = x.to_vec();
        let mut hd = v.to_vec();
        for (start, n_in, n_out, act) in self.layers() {
            let (w, b) = theta[start..start + n_in * n_out + n_out].split_at(n_in * n_out);
            let mut nh = vec![0.0; n_out];
            let mut nhd = vec![0.0; n_out];
            for r in 0..n_out {
                let row = &w[r * n_in..(r + 1) * n_in];
                let s = b[r] + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
                let sd: f64 = row.iter().zip(&hd).map(|(w, x)| w * x).sum();
                nh[r] = act.apply(s);
                nhd[r] = act.derivative(s) * sd;
            }
            h = nh;
            hd = nhd;
        }
        out.copy_from_slice(&h);
        tangent.copy_from_slice(&hd);
    }

    /// Gradient of `cot·(J(x) v)` with respect to `x` and `θ`, for fixed `v`.
    /// Accumulates into `gx` and `gtheta`.
    pub fn jvp_vjp(
        &self,
        theta: &[f64],
        x: &[f64],
        v: &[f64],
        cot: &[f64],
        gx: &mut [f64],
        gtheta: &mut [f64],
    ) {
        let layers: Vec<_> = self.layers().collect();
        // forward with tangents
        let mut hs = vec![x.to_vec()];
        let mut hds = vec![v.to_vec()];
        let mut ss = Vec::with_capacity(layers.len());
        let mut sds = Vec::with_capacity(layers.len());
        for &(start, n_in, n_out, act) in &layers {
            let (w, b) = theta[start..start + n_in * n_out + n_out].split_at(n_in * n_out);
            let (h, hd) = (hs.last().unwrap(), hds.last().unwrap());
            let mut s = vec![0.0; n_out];
            let mut sd = vec![0.0; n_out];
            for r in 0..n_out {
                let row = &w[r * n_in..(r + 1) * n_in];
                s[r] = b[r] + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
                sd[r] = row.iter().zip(hd).map(|(w, x)| w * x).sum();
            }
            hs.push(s.iter().map(|&x| act.apply(x)).collect());
            hds.push(s.iter().zip(&sd).map(|(&x, &dx)| act.derivative(x) * dx).collect());
            ss.push(s);
            sds.push(sd);
        }
        // reverse over (h, hd)
        let mut gh = vec![0.0; self.output_dim()];
        let mut ghd = cot.to_vec();
        for (l, &(start, n_in, n_out, act)) in layers.iter().enumerate().rev() {
            let (s, sd) = (&ss[l], &sds[l]);
            let mut gsd = vec![0.0; n_out];
            let mut gs = vec![0.0; n_out];
            for r in 0..n_out {
                gsd[r] = ghd[r] * act.derivative(s[r]);
                gs[r] = ghd[r] * sd[r] * act.second_derivative(s[r]) + gh[r] * act.derivative(s[r]);
            }
            let (h, hd) = (&hs[l], &hds[l]);
            let w_end = start + n_in * n_out;
            let mut next_gh = vec![0.0; n_in];
            let mut next_ghd = vec![0.0; n_in];
            for r in 0..n_out {
                let row = start + r * n_in;
                for c in 0..n_in {
                    gtheta[row + c] += gsd[r] * hd[c] + gs[r] * h[c];
                    next_ghd[c] += theta[row + c] * gsd[r];
                    next_gh[c] += theta[row + c] * gs[r];
                }
                gtheta[w_end + r] += gs[r];
            }
            gh = next_gh;
            ghd = next_ghd;
        }
        gx.iter_mut().zip(&gh).for_each(|(g, v)| *g += v);
    }
}

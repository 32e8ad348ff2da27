use super::dense::sigmoid;
use super::{Gbm, Interpretation, ParamRegistry, SdeSystem};
use crate::prng::{split_n, standard_normal, RandomKey};

const DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Example {
    /// Geometric Brownian motion, `dX = μX dt + σX dW`.
    One,
    /// `dX = -p² sin X cos³ X dt + p cos² X dW`.
    Two,
    /// `dX = (β/√(1+t) - X/(2(1+t))) dt + αβ/√(1+t) dW`.
    Three,
}

impl std::str::FromStr for Example {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "example1" => Ok(Example::One),
            "example2" => Ok(Example::Two),
            "example3" => Ok(Example::Three),
            other => Err(format!("unknown example '{other}'")),
        }
    }
}

/// A ten-dimensional decoupled test system with a closed-form strong solution.
///
/// The scalar loss is the mean of the terminal state.
pub struct AnalyticProblem {
    pub system: Box<dyn SdeSystem>,
    pub x0: Vec<f64>,
    pub kind: Example,
}

/// Builds one of the test problems. Parameters are `sigmoid(N(0,1))` per
/// dimension; initial values are Gaussian (standard deviation 0.5 for
/// [`Example::Two`] so that `|x0| < π/2`, where its solution is defined).
pub fn make_example(kind: Example, key: RandomKey) -> AnalyticProblem {
    let [k_theta, k_x0] = split_n::<2>(key);
    let n_theta = if kind == Example::Two { DIM } else { 2 * DIM };
    let theta: Vec<f64> = standard_normal(k_theta, n_theta).into_iter().map(sigmoid).collect();
    let x0_scale = if kind == Example::Two { 0.5 } else { 1.0 };
    let x0 = standard_normal(k_x0, DIM).into_iter().map(|x| x * x0_scale).collect();
    let system: Box<dyn SdeSystem> = match kind {
        Example::One => Box::new(Gbm::new(theta[..DIM].to_vec(), theta[DIM..].to_vec())),
        Example::Two => Box::new(ExampleTwo { theta }),
        Example::Three => Box::new(ExampleThree { theta }),
    };
    AnalyticProblem { system, x0, kind }
}

impl AnalyticProblem {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Exact state at time `t` (start time 0) given the path value `w = W_t`.
    pub fn solution(&self, t: f64, w: &[f64]) -> Vec<f64> {
        self.solution_at(t, w, &self.x0, self.system.params())
    }

    /// Exact state for arbitrary initial values and parameters.
    pub fn solution_at(&self, t: f64, w: &[f64], x0: &[f64], theta: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| match self.kind {
                Example::One => {
                    let (mu, s) = (theta[i], theta[DIM + i]);
                    x0[i] * ((mu - 0.5 * s * s) * t + s * w[i]).exp()
                }
                Example::Two => (theta[i] * w[i] + x0[i].tan()).atan(),
                Example::Three => {
                    let (a, b) = (theta[i], theta[DIM + i]);
                    (x0[i] + b * (t + a * w[i])) / (1.0 + t).sqrt()
                }
            })
            .collect()
    }

    /// Gradients of `L = mean(X_T)` with respect to `x0` and `θ` along the
    /// path with terminal value `w = W_T`.
    pub fn terminal_gradients(&self, t: f64, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let theta = self.system.params();
        let scale = 1.0 / d as f64;
        let mut gx0 = vec![0.0; d];
        let mut gth = vec![0.0; theta.len()];
        let x = self.solution(t, w);
        for i in 0..d {
            match self.kind {
                Example::One => {
                    let growth = x[i] / self.x0[i];
                    gx0[i] = scale * growth;
                    gth[i] = scale * x[i] * t;
                    gth[DIM + i] = scale * x[i] * (w[i] - theta[DIM + i] * t);
                }
                Example::Two => {
                    let y = theta[i] * w[i] + self.x0[i].tan();
                    let q = 1.0 / (1.0 + y * y);
                    let c = self.x0[i].cos();
                    gx0[i] = scale * q / (c * c);
                    gth[i] = scale * w[i] * q;
                }
                Example::Three => {
                    let (a, b) = (theta[i], theta[DIM + i]);
                    let r = 1.0 / (1.0 + t).sqrt();
                    gx0[i] = scale * r;
                    gth[i] = scale * b * w[i] * r;
                    gth[DIM + i] = scale * (t + a * w[i]) * r;
                }
            }
        }
        (gx0, gth)
    }
}

struct ExampleTwo {
    theta: Vec<f64>,
}

impl SdeSystem for ExampleTwo {
    fn dim(&self) -> usize {
        DIM
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Ito
    }
    fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("p", DIM);
        r
    }
    fn drift(&self, _t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        for i in 0..DIM {
            let (s, c) = z[i].sin_cos();
            out[i] = -th[i] * th[i] * s * c * c * c;
        }
    }
    fn diffusion(&self, _t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        for i in 0..DIM {
            let c = z[i].cos();
            out[i] = th[i] * c * c;
        }
    }
    fn drift_vjp(&self, _t: f64, z: &[f64], th: &[f64], a: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        for i in 0..DIM {
            let (s, c) = z[i].sin_cos();
            let p2 = th[i] * th[i];
            // d/dx (sin x cos^3 x) = cos^4 x - 3 sin^2 x cos^2 x
            gz[i] += -a[i] * p2 * (c * c * c * c - 3.0 * s * s * c * c);
            gth[i] += -a[i] * 2.0 * th[i] * s * c * c * c;
        }
    }
    fn diffusion_vjp(&self, _t: f64, z: &[f64], th: &[f64], a: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        for i in 0..DIM {
            let (s, c) = z[i].sin_cos();
            gz[i] += -a[i] * th[i] * 2.0 * s * c;
            gth[i] += a[i] * c * c;
        }
    }
    fn diffusion_dz_diag(&self, _t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        for i in 0..DIM {
            out[i] = -th[i] * (2.0 * z[i]).sin();
        }
    }
    fn diffusion_dz_diag_vjp(&self, _t: f64, z: &[f64], th: &[f64], c: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        for i in 0..DIM {
            gz[i] += -c[i] * 2.0 * th[i] * (2.0 * z[i]).cos();
            gth[i] += -c[i] * (2.0 * z[i]).sin();
        }
    }
}

struct ExampleThree {
    theta: Vec<f64>,
}

impl SdeSystem for ExampleThree {
    fn dim(&self) -> usize {
        DIM
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn interpretation(&self) -> Interpretation {
        Interpretation::Ito
    }
    fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("alpha", DIM);
        r.push("beta", DIM);
        r
    }
    fn drift(&self, t: f64, z: &[f64], th: &[f64], out: &mut [f64]) {
        let r = 1.0 / (1.0 + t).sqrt();
        for i in 0..DIM {
            out[i] = th[DIM + i] * r - 0.5 * z[i] / (1.0 + t);
        }
    }
    fn diffusion(&self, t: f64, _z: &[f64], th: &[f64], out: &mut [f64]) {
        let r = 1.0 / (1.0 + t).sqrt();
        for i in 0..DIM {
            out[i] = th[i] * th[DIM + i] * r;
        }
    }
    fn drift_vjp(&self, t: f64, _z: &[f64], _th: &[f64], a: &[f64], gz: &mut [f64], gth: &mut [f64]) {
        let r = 1.0 / (1.0 + t).sqrt();
        for i in 0..DIM {
            gz[i] += -0.5 * a[i] / (1.0 + t);
            gth[DIM + i] += a[i] * r;
        }
    }
    fn diffusion_vjp(&self, t: f64, _z: &[f64], th: &[f64], a: &[f64], _gz: &mut [f64], gth: &mut [f64]) {
        let r = 1.0 / (1.0 + t).sqrt();
        for i in 0..DIM {
            gth[i] += a[i] * th[DIM + i] * r;
            gth[DIM + i] += a[i] * th[i] * r;
        }
    }
    fn diffusion_dz_diag(&self, _t: f64, _z: &[f64], _th: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion_dz_diag_vjp(&self, _t: f64, _z: &[f64], _th: &[f64], _c: &[f64], _gz: &mut [f64], _gth: &mut [f64]) {}
}

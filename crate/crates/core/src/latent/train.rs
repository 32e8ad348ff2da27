use rayon::prelude::*;

use super::{elbo_gradients, sample_keys, LatentSdeModel, Objective, Sequence};
use crate::brownian::{BrownianMotion, VirtualBrownianTree};
use crate::error::Result;
use crate::prng::{split, split_n, standard_normal, uniform, RandomKey};
use crate::solvers::{sdeint, Scheme, SolverConfig};
use crate::systems::make_stochastic_lorenz;

/// Adam with a per-step multiplicative learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, decay: f64) -> Self {
        Self {
            lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Learning rate used by the next step.
    pub fn current_lr(&self) -> f64 {
        self.lr * self.decay.powi(self.t)
    }

    /// Moves `params` against `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.current_lr();
        self.t += 1;
        let (c1, c2) = (1.0 - self.beta1.powi(self.t), 1.0 - self.beta2.powi(self.t));
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Linear KL annealing: 0 at iteration 0, rising to 1 at `anneal_iters`.
pub fn kl_coefficient(iter: usize, anneal_iters: usize) -> f64 {
    if anneal_iters == 0 {
        1.0
    } else {
        (iter as f64 / anneal_iters as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub kl_anneal_iters: usize,
    /// Final weight of the KL terms.
    pub kl_weight: f64,
    pub solver: SolverConfig,
    pub seed: RandomKey,
}

impl TrainConfig {
    pub fn new(iters: usize, seed: RandomKey) -> Self {
        Self {
            iters,
            batch_size: 16,
            lr: 0.01,
            lr_decay: 0.999,
            kl_anneal_iters: 50,
            kl_weight: 1.0,
            solver: SolverConfig::fixed(Scheme::Milstein, 0.01),
            seed,
        }
    }
}

/// Minibatch means of the bound's terms at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub elbo: f64,
    pub log_likelihood: f64,
    pub kl_path: f64,
    pub kl_z0: f64,
    pub kl_coefficient: f64,
}

/// Trains `model` by Adam on minibatch estimates of the annealed bound.
///
/// Minibatch members are evaluated in parallel; gradients are summed in
/// minibatch order, so results do not depend on the thread count.
pub fn train(model: &mut LatentSdeModel, data: &[Sequence], cfg: &TrainConfig) -> Result<Vec<TrainRecord>> {
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(crate::error::contract("training needs data and a positive batch size"));
    }
    cfg.solver.validate()?;
    let horizon = data
        .iter()
        .map(|s| s.times.last().copied().unwrap_or(0.0))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let d = model.config.latent_dim;
    let mut adam = Adam::new(model.n_params(), cfg.lr, cfg.lr_decay);
    let mut log = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let key = split(cfg.seed, iter as u64, cfg.iters as u64)?;
        let [pick, noise] = split_n::<2>(key);
        let picks = uniform(pick, cfg.batch_size);
        let beta = cfg.kl_weight * kl_coefficient(iter, cfg.kl_anneal_iters);
        let objective = Objective {
            likelihood_weight: 1.0,
            kl_weight: beta,
        };
        let frozen: &LatentSdeModel = model;
        let results: Vec<_> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|b| {
                let seq = &data[((picks[b] * data.len() as f64) as usize).min(data.len() - 1)];
                let (bm_key, z_key) = sample_keys(split(noise, b as u64, cfg.batch_size as u64)?);
                let bm = VirtualBrownianTree::new(bm_key, 0.0, horizon, d);
                elbo_gradients(frozen, seq, &bm, z_key, &cfg.solver, objective)
            })
            .collect();
        let mut grad = vec![0.0; model.n_params()];
        let mut rec = TrainRecord {
            iter,
            elbo: 0.0,
            log_likelihood: 0.0,
            kl_path: 0.0,
            kl_z0: 0.0,
            kl_coefficient: beta,
        };
        let scale = 1.0 / cfg.batch_size as f64;
        for r in results {
            let (est, g) = r?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += scale * b);
            rec.elbo += scale * est.elbo;
            rec.log_likelihood += scale * est.log_likelihood;
            rec.kl_path += scale * est.kl_path;
            rec.kl_z0 += scale * est.kl_z0;
        }
        adam.step(&mut model.params, &grad);
        log.push(rec);
    }
    Ok(log)
}

fn observation_times(n_obs: usize, dt: f64) -> Vec<f64> {
    (0..n_obs).map(|k| k as f64 * dt).collect()
}

/// Noisy geometric Brownian motion series: `μ = 1`, `σ = 0.5`,
/// `x0 = 0.1 + N(0, 0.03²)`, observed every 0.02 from 0 with additive
/// `N(0, 0.01²)` noise. Paths use the exact solution.
pub fn gbm_dataset(n_series: usize, n_obs: usize, key: RandomKey) -> Vec<Sequence> {
    let (mu, sigma) = (1.0, 0.5);
    let times = observation_times(n_obs, 0.02);
    let horizon = times.last().copied().unwrap_or(0.0).max(0.02);
    (0..n_series as u64)
        .map(|i| {
            let [k0, kw, kn] = split_n::<3>(split(key, i, n_series as u64).expect("index in range"));
            let x0 = 0.1 + 0.03 * standard_normal(k0, 1)[0];
            let bm = VirtualBrownianTree::new(kw, 0.0, horizon, 1);
            let noise = standard_normal(kn, n_obs);
            let values = times
                .iter()
                .zip(&noise)
                .map(|(&t, e)| {
                    let w = bm.query(t).expect("time within horizon")[0];
                    vec![x0 * ((mu - 0.5 * sigma * sigma) * t + sigma * w).exp() + 0.01 * e]
                })
                .collect();
            Sequence {
                times: times.clone(),
                values,
            }
        })
        .collect()
}

/// Noisy stochastic Lorenz series: `σ = 10`, `ρ = 28`, `β = 8/3`, additive
/// noise 0.15 per component, standard normal initial states, observed every
/// 0.025 from 0. Paths are integrated by Euler–Maruyama with step `1e-3`,
/// normalized per component over the whole dataset, then corrupted by
/// `N(0, 0.01²)` noise.
pub fn lorenz_dataset(n_series: usize, n_obs: usize, key: RandomKey) -> Result<Vec<Sequence>> {
    let sys = make_stochastic_lorenz(10.0, 28.0, 8.0 / 3.0, [0.15; 3]);
    let times = observation_times(n_obs, 0.025);
    let horizon = times.last().copied().unwrap_or(0.0).max(0.025);
    let cfg = SolverConfig::fixed(Scheme::EulerMaruyama, 1e-3);
    let keys: Vec<[RandomKey; 3]> = (0..n_series as u64)
        .map(|i| split(key, i, n_series as u64).map(split_n::<3>))
        .collect::<Result<_>>()?;
    let mut paths: Vec<Vec<Vec<f64>>> = keys
        .par_iter()
        .map(|&[k0, kw, _]| {
            let bm = VirtualBrownianTree::new(kw, 0.0, horizon, 3);
            sdeint(&sys, &standard_normal(k0, 3), &times, &bm, &cfg).map(|r| r.states)
        })
        .collect::<Result<_>>()?;
    let count = (n_series * n_obs).max(1) as f64;
    for c in 0..3 {
        let all = || paths.iter().flatten().map(|x| x[c]);
        let mean = all().sum::<f64>() / count;
        let std = (all().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count).sqrt().max(f64::MIN_POSITIVE);
        paths.iter_mut().flatten().for_each(|x| x[c] = (x[c] - mean) / std);
    }
    Ok(paths
        .into_iter()
        .zip(&keys)
        .map(|(mut states, &[_, _, kn])| {
            let noise = standard_normal(kn, 3 * n_obs);
            for (k, x) in states.iter_mut().enumerate() {
                x.iter_mut().zip(&noise[3 * k..3 * k + 3]).for_each(|(x, e)| *x += 0.01 * e);
            }
            Sequence {
                times: times.clone(),
                values: states,
            }
        })
        .collect())
}

//! Latent SDE models trained by maximizing a pathwise evidence lower bound.
//!
//! The approximate posterior `dz = h_φ(z, t, c) dt + σ(z, t) ∘ dW` and the
//! prior `dz = h_θ(z, t) dt + σ(z, t) ∘ dW` share their diffusion, so the KL
//! divergence between the two path measures is `E ∫ ½|u|² dt` with
//! `σ u = h_φ − h_θ`. The KL integrand is carried as an extra scalar channel in
//! the forward pass and as a running cost in the adjoint pass, whose adjoint
//! stays constant. A Gaussian KL term for the initial state is added to the
//! bound.

mod posterior;
mod train;

pub use train::{gbm_dataset, kl_coefficient, lorenz_dataset, train, Adam, TrainConfig, TrainRecord};

use std::ops::Range;

use posterior::{DriftSide, LatentSystem, WithKl};

use crate::adjoint::{adjoint_core, pipeline_forward};
use crate::brownian::BrownianMotion;
use crate::error::{contract, Result, SdeError};
use crate::prng::{split_n, standard_normal, RandomKey};
use crate::solvers::{run, SolverConfig, Stats};
use crate::systems::{Activation, DenseNet, ParamRegistry};

/// Sizes and fixed hyperparameters of a [`LatentSdeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfig {
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub hidden: usize,
    pub context_dim: usize,
    /// Number of leading observations the encoder reads.
    pub window: usize,
    /// Standard deviation of the Gaussian observation noise.
    pub obs_std: f64,
    /// Hidden-layer activation of all networks.
    pub activation: Activation,
}

impl LatentConfig {
    pub fn new(latent_dim: usize, obs_dim: usize) -> Self {
        Self {
            latent_dim,
            obs_dim,
            hidden: 16,
            context_dim: 1,
            window: 3,
            obs_std: 0.01,
            activation: Activation::Softplus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    encoder: Range<usize>,
    z0_prior: Range<usize>,
    /// Posterior drift, prior drift and diffusion networks, contiguous.
    sde: Range<usize>,
    decoder: Range<usize>,
}

/// Encoder, initial-state prior, drifts, shared diffusion and decoder, with
/// all parameters in one flat vector.
#[derive(Debug, Clone)]
pub struct LatentSdeModel {
    pub config: LatentConfig,
    pub params: Vec<f64>,
    encoder: DenseNet,
    post_drift: DenseNet,
    prior_drift: DenseNet,
    diff_net: DenseNet,
    decoder: DenseNet,
    layout: Layout,
}

impl LatentSdeModel {
    /// Builds the networks and draws initial parameters from `key`.
    ///
    /// The encoder maps the first `window` observations to the mean and
    /// log-variance of `z(0)` and a context vector. Each latent component has
    /// its own diffusion network on `(z_i, t)` with a softplus head; the decoder
    /// is linear.
    pub fn new(config: LatentConfig, key: RandomKey) -> Self {
        let (d, dd, h, c) = (config.latent_dim, config.obs_dim, config.hidden, config.context_dim);
        let act = config.activation;
        let encoder = DenseNet::new(&[config.window * dd, h, 2 * d + c], act, Activation::Identity);
        let post_drift = DenseNet::new(&[d + 1 + c, h, d], act, Activation::Identity);
        let prior_drift = DenseNet::new(&[d + 1, h, d], act, Activation::Identity);
        let diff_net = DenseNet::new(&[2, h, 1], act, Activation::Softplus);
        let decoder = DenseNet::new(&[d, dd], Activation::Identity, Activation::Identity);

        let n_keys = 5 + d as u64;
        let k = |i: u64| crate::prng::split(key, i, n_keys).expect("index in range");
        let mut params = encoder.init(k(0));
        let encoder_r = 0..params.len();
        let z0_start = params.len();
        params.extend(std::iter::repeat(0.0).take(2 * d));
        let sde_start = params.len();
        params.extend(post_drift.init(k(1)));
        params.extend(prior_drift.init(k(2)));
        for i in 0..d as u64 {
            params.extend(diff_net.init(k(5 + i)));
        }
        let sde_end = params.len();
        params.extend(decoder.init(k(3)));
        let layout = Layout {
            encoder: encoder_r,
            z0_prior: z0_start..sde_start,
            sde: sde_start..sde_end,
            decoder: sde_end..params.len(),
        };
        Self {
            config,
            params,
            encoder,
            post_drift,
            prior_drift,
            diff_net,
            decoder,
            layout,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Named blocks of [`LatentSdeModel::params`].
    pub fn registry(&self) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("encoder", self.layout.encoder.len());
        r.push("z0_prior", self.layout.z0_prior.len());
        r.push("posterior_drift", self.post_drift.n_params());
        r.push("prior_drift", self.prior_drift.n_params());
        for i in 0..self.config.latent_dim {
            r.push(format!("diffusion_{i}"), self.diff_net.n_params());
        }
        r.push("decoder", self.layout.decoder.len());
        r
    }

    /// Mutable view of a named parameter block.
    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.registry().get(name)?.clone();
        Some(&mut self.params[b.offset..b.offset + b.len])
    }

    /// Observation mean for a latent state.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.config.obs_dim];
        self.decoder.forward(&self.params[self.layout.decoder.clone()], z, &mut x);
        x
    }

    /// Encoder output `(mean, log-variance, context)` for a sequence.
    pub fn encode(&self, seq: &Sequence) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let out = self.encoder_output(&self.params, seq);
        let d = self.config.latent_dim;
        (out[..d].to_vec(), out[d..2 * d].to_vec(), out[2 * d..].to_vec())
    }

    fn encoder_input(&self, seq: &Sequence) -> Vec<f64> {
        let dd = self.config.obs_dim;
        let mut x = vec![0.0; self.config.window * dd];
        for (k, v) in seq.values.iter().take(self.config.window).enumerate() {
            x[k * dd..(k + 1) * dd].copy_from_slice(v);
        }
        x
    }

    fn encoder_output(&self, params: &[f64], seq: &Sequence) -> Vec<f64> {
        let mut out = vec![0.0; self.encoder.output_dim()];
        self.encoder
            .forward(&params[self.layout.encoder.clone()], &self.encoder_input(seq), &mut out);
        out
    }
}

/// `u(z, t) = (h_φ − h_θ)/σ` for the given encoder context.
pub fn u_function(model: &LatentSdeModel, z: &[f64], t: f64, context: &[f64]) -> Result<Vec<f64>> {
    if z.len() != model.config.latent_dim || context.len() != model.config.context_dim {
        return Err(contract("state or context has the wrong dimension"));
    }
    let sys = LatentSystem::new(model, context, DriftSide::Posterior);
    sys.u(t, z, &sys.theta)
        .map(|(u, _)| u)
        .map_err(|(index, value)| SdeError::NearSingularDiffusion { index, value })
}

/// One observed time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// Ascending observation times.
    pub times: Vec<f64>,
    /// Observation vectors, one per time.
    pub values: Vec<Vec<f64>>,
}

/// Single-sample terms of the evidence lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate {
    /// `Σ_i log p(x_i | z(t_i))`.
    pub log_likelihood: f64,
    /// `∫ ½|u|² dt` along the sampled posterior path.
    pub kl_path: f64,
    /// KL divergence of the initial-state posterior from its prior.
    pub kl_z0: f64,
    pub elbo: f64,
}

/// Weights of the terms in the training objective
/// `likelihood_weight · log p − kl_weight · (KL_path + KL_z0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub likelihood_weight: f64,
    pub kl_weight: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            likelihood_weight: 1.0,
            kl_weight: 1.0,
        }
    }
}

/// Everything the backward pass needs from one forward sample.
struct ForwardPass {
    enc_out: Vec<f64>,
    z0: Vec<f64>,
    /// Solve times: 0 followed by the observation times.
    ts: Vec<f64>,
    /// Index of the first observation within `ts`.
    first_obs: usize,
    /// Latent states at `ts`.
    states: Vec<Vec<f64>>,
    estimate: ElboEstimate,
}

fn validate(model: &LatentSdeModel, seq: &Sequence, bm_dim: usize, t_start: f64, t_end: f64) -> Result<()> {
    let c = &model.config;
    if seq.times.is_empty() || seq.times.len() != seq.values.len() {
        return Err(contract("a sequence needs one value per observation time"));
    }
    if seq.values.iter().any(|v| v.len() != c.obs_dim) {
        return Err(contract("observation has the wrong dimension"));
    }
    if seq.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(contract("observation times must be strictly ascending"));
    }
    if bm_dim != c.latent_dim {
        return Err(contract("Brownian dimension must equal the latent dimension"));
    }
    if t_start != 0.0 {
        return Err(contract("the Brownian path must start at time 0"));
    }
    let last = seq.times[seq.times.len() - 1];
    if seq.times[0] < 0.0 || last > t_end {
        return Err(SdeError::OutOfRange {
            t: if seq.times[0] < 0.0 { seq.times[0] } else { last },
            lo: 0.0,
            hi: t_end,
        });
    }
    Ok(())
}

fn gaussian_kl(m: &[f64], logv: &[f64], pm: &[f64], plogv: &[f64]) -> f64 {
    (0..m.len())
        .map(|i| {
            let dm = m[i] - pm[i];
            0.5 * (plogv[i] - logv[i] + (logv[i].exp() + dm * dm) / plogv[i].exp() - 1.0)
        })
        .sum()
}

fn forward_pass<B: BrownianMotion + ?Sized>(
    model: &LatentSdeModel,
    seq: &Sequence,
    bm: &B,
    key: RandomKey,
    cfg: &SolverConfig,
) -> Result<ForwardPass> {
    cfg.validate()?;
    validate(model, seq, bm.dim(), bm.t_start(), bm.t_end())?;
    let c = &model.config;
    let d = c.latent_dim;
    let enc_out = model.encoder_output(&model.params, seq);
    let (m, logv, ctx) = (&enc_out[..d], &enc_out[d..2 * d], &enc_out[2 * d..]);
    let eps = standard_normal(key, d);
    let z0: Vec<f64> = (0..d).map(|i| m[i] + (0.5 * logv[i]).exp() * eps[i]).collect();
    let prior = &model.params[model.layout.z0_prior.clone()];
    let kl_z0 = gaussian_kl(m, logv, &prior[..d], &prior[d..]);

    let first_obs = usize::from(seq.times[0] > 0.0);
    let mut ts = Vec::with_capacity(seq.times.len() + 1);
    if first_obs == 1 {
        ts.push(0.0);
    }
    ts.extend_from_slice(&seq.times);

    let sys = LatentSystem::new(model, ctx, DriftSide::Posterior);
    let dy = WithKl::new(&sys);
    let mut y = z0.clone();
    y.push(0.0);
    let mut states = Vec::with_capacity(ts.len());
    let mut stats = Stats::default();
    let solved = run(&dy, &mut y, &ts, bm, cfg, false, &mut stats, |_, y| {
        states.push(y[..d].to_vec());
        Ok(())
    });
    if let Some((index, value)) = dy.singular.get() {
        return Err(SdeError::NearSingularDiffusion { index, value });
    }
    solved?;
    let kl_path = y[d];

    let var = c.obs_std * c.obs_std;
    let norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    let log_likelihood: f64 = seq
        .values
        .iter()
        .zip(&states[first_obs..])
        .map(|(x, z)| {
            let mu = model.decode(z);
            x.iter().zip(&mu).map(|(x, m)| norm - (x - m) * (x - m) / (2.0 * var)).sum::<f64>()
        })
        .sum();
    Ok(ForwardPass {
        enc_out,
        z0,
        ts,
        first_obs,
        states,
        estimate: ElboEstimate {
            log_likelihood,
            kl_path,
            kl_z0,
            elbo: log_likelihood - kl_path - kl_z0,
        },
    })
}

/// Samples the bound for one sequence.
///
/// `key` draws the reparameterized initial state; `bm` drives the posterior
/// path on `[0, T]` and must have the latent dimension.
pub fn elbo_sample<B: BrownianMotion + ?Sized>(
    model: &LatentSdeModel,
    seq: &Sequence,
    bm: &B,
    key: RandomKey,
    cfg: &SolverConfig,
) -> Result<ElboEstimate> {
    Ok(forward_pass(model, seq, bm, key, cfg)?.estimate)
}

/// The bound and the gradient of the loss `−objective` with respect to all
/// model parameters, from one forward solve and one adjoint solve.
pub fn elbo_gradients<B: BrownianMotion + ?Sized>(
    model: &LatentSdeModel,
    seq: &Sequence,
    bm: &B,
    key: RandomKey,
    cfg: &SolverConfig,
    objective: Objective,
) -> Result<(ElboEstimate, Vec<f64>)> {
    let fwd = forward_pass(model, seq, bm, key, cfg)?;
    let c = &model.config;
    let (d, lw, kw) = (c.latent_dim, objective.likelihood_weight, objective.kl_weight);
    let var = c.obs_std * c.obs_std;
    let mut grad = vec![0.0; model.n_params()];

    // likelihood cotangents at observation times
    let dec = model.layout.decoder.clone();
    let mut cot = vec![vec![0.0; d]; fwd.ts.len()];
    for (k, x) in seq.values.iter().enumerate() {
        let z = &fwd.states[fwd.first_obs + k];
        let mu = model.decode(z);
        let g: Vec<f64> = x.iter().zip(&mu).map(|(x, m)| -lw * (x - m) / var).collect();
        model
            .decoder
            .vjp(&model.params[dec.clone()], z, &g, &mut cot[fwd.first_obs + k], &mut grad[dec.clone()]);
    }

    let ctx = &fwd.enc_out[2 * d..];
    let sys = LatentSystem::new(model, ctx, DriftSide::Posterior);
    let z_end = fwd.states.last().expect("at least one state");
    let cot_refs: Vec<&[f64]> = cot.iter().map(Vec::as_slice).collect();
    let adj = adjoint_core(&sys, &fwd.ts, z_end, &cot_refs, bm, cfg, Some((&sys, kw)))?;

    let sde = model.layout.sde.clone();
    let n_sde = sde.len();
    grad[sde].iter_mut().zip(&adj.grad_theta).for_each(|(g, v)| *g += v);
    let g_ctx = &adj.grad_theta[n_sde..];

    // initial state: reparameterization and Gaussian KL
    let (m, logv) = (&fwd.enc_out[..d], &fwd.enc_out[d..2 * d]);
    let z0p = model.layout.z0_prior.clone();
    let (pm, plogv) = {
        let p = &model.params[z0p.clone()];
        (p[..d].to_vec(), p[d..].to_vec())
    };
    let mut g_enc = vec![0.0; model.encoder.output_dim()];
    for i in 0..d {
        let (v, pv) = (logv[i].exp(), plogv[i].exp());
        let dm = m[i] - pm[i];
        let gz = adj.grad_z0[i];
        g_enc[i] = gz + kw * dm / pv;
        g_enc[d + i] = gz * 0.5 * (fwd.z0[i] - m[i]) + kw * 0.5 * (v / pv - 1.0);
        grad[z0p.start + i] += -kw * dm / pv;
        grad[z0p.start + d + i] += kw * 0.5 * (1.0 - (v + dm * dm) / pv);
    }
    g_enc[2 * d..].copy_from_slice(g_ctx);
    let enc = model.layout.encoder.clone();
    let mut gx = vec![0.0; model.encoder.input_dim()];
    model
        .encoder
        .vjp(&model.params[enc.clone()], &model.encoder_input(seq), &g_enc, &mut gx, &mut grad[enc]);
    Ok((fwd.estimate, grad))
}

/// Decoded posterior sample path at `ts` (ascending, starting at 0).
pub fn sample_posterior<B: BrownianMotion + ?Sized>(
    model: &LatentSdeModel,
    seq: &Sequence,
    ts: &[f64],
    bm: &B,
    key: RandomKey,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let (m, logv, ctx) = model.encode(seq);
    let eps = standard_normal(key, m.len());
    let z0: Vec<f64> = (0..m.len()).map(|i| m[i] + (0.5 * logv[i]).exp() * eps[i]).collect();
    let sys = LatentSystem::new(model, &ctx, DriftSide::Posterior);
    let path = pipeline_forward(&sys, &z0, ts, bm, cfg)?;
    Ok(path.states.iter().map(|z| model.decode(z)).collect())
}

/// Decoded sample path of the prior process at `ts` (ascending, starting at 0).
pub fn sample_prior<B: BrownianMotion + ?Sized>(
    model: &LatentSdeModel,
    ts: &[f64],
    bm: &B,
    key: RandomKey,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let d = model.config.latent_dim;
    let p = &model.params[model.layout.z0_prior.clone()];
    let eps = standard_normal(key, d);
    let z0: Vec<f64> = (0..d).map(|i| p[i] + (0.5 * p[d + i]).exp() * eps[i]).collect();
    let ctx = vec![0.0; model.config.context_dim];
    let sys = LatentSystem::new(model, &ctx, DriftSide::Prior);
    let path = pipeline_forward(&sys, &z0, ts, bm, cfg)?;
    Ok(path.states.iter().map(|z| model.decode(z)).collect())
}

/// Independent keys for the Brownian path and the initial-state draw of one
/// sample.
pub fn sample_keys(key: RandomKey) -> (RandomKey, RandomKey) {
    let [a, b] = split_n::<2>(key);
    (a, b)
}

//! The bound never exceeds the exact marginal likelihood of a linear-Gaussian
//! latent model, whatever the posterior.

use nalgebra::{DMatrix, DVector};
use sde_adjoint::brownian::VirtualBrownianTree;
use sde_adjoint::latent::{elbo_sample, LatentConfig, LatentSdeModel, Sequence};
use sde_adjoint::prng::{split, split_n, standard_normal, RandomKey};
use sde_adjoint::solvers::{Scheme, SolverConfig};
use sde_adjoint::stats;
use sde_adjoint::systems::Activation;

const A: f64 = -0.7;
const B: f64 = 0.3;
const S: f64 = 0.4;
const M0: f64 = 0.2;
const LV0: f64 = -1.0;
const OBS_STD: f64 = 0.1;

fn set_block(m: &mut LatentSdeModel, name: &str, parts: &[&[f64]]) {
    let values = parts.concat();
    let block = m.block_mut(name).unwrap();
    block.copy_from_slice(&values);
}

/// Prior `dz = (A z + B) dt + S dW`, `z0 ~ N(M0, e^LV0)`, identity decoder;
/// posterior drift `pa z + pb`, initial posterior `N(qm, e^qlv)`.
fn model(pa: f64, pb: f64, qm: f64, qlv: f64) -> LatentSdeModel {
    let mut cfg = LatentConfig::new(1, 1);
    cfg.hidden = 1;
    cfg.activation = Activation::Identity;
    cfg.obs_std = OBS_STD;
    let mut m = LatentSdeModel::new(cfg, RandomKey::from_seed(0));
    set_block(&mut m, "prior_drift", &[&[1.0, 0.0], &[0.0], &[A], &[B]]);
    set_block(&mut m, "posterior_drift", &[&[1.0, 0.0, 0.0], &[0.0], &[pa], &[pb]]);
    set_block(&mut m, "diffusion_0", &[&[0.0, 0.0], &[0.0], &[0.0], &[S.exp_m1().ln()]]);
    set_block(&mut m, "decoder", &[&[1.0], &[0.0]]);
    set_block(&mut m, "z0_prior", &[&[M0, LV0]]);
    let enc = m.block_mut("encoder").unwrap();
    enc.fill(0.0);
    let n = enc.len();
    enc[n - 3..].copy_from_slice(&[qm, qlv, 0.0]);
    m
}

/// Exact `log p(x)` of the Ornstein–Uhlenbeck prior observed with Gaussian noise.
fn log_marginal(seq: &Sequence) -> f64 {
    let n = seq.times.len();
    let mean = |t: f64| (A * t).exp() * M0 + B / A * ((A * t).exp() - 1.0);
    let var = |t: f64| (2.0 * A * t).exp() * LV0.exp() + S * S * ((2.0 * A * t).exp() - 1.0) / (2.0 * A);
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (lo, hi) = if seq.times[i] <= seq.times[j] { (seq.times[i], seq.times[j]) } else { (seq.times[j], seq.times[i]) };
        (A * (hi - lo)).exp() * var(lo) + if i == j { OBS_STD * OBS_STD } else { 0.0 }
    });
    let r = DVector::from_fn(n, |i, _| seq.values[i][0] - mean(seq.times[i]));
    let chol = cov.cholesky().expect("positive definite");
    let quad = r.dot(&chol.solve(&r));
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (quad + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[test]
fn bound_stays_below_the_marginal_likelihood() {
    let seq = Sequence {
        times: vec![0.25, 0.5, 1.0],
        values: vec![vec![0.35], vec![0.3], vec![0.45]],
    };
    let log_p = log_marginal(&seq);
    let cfg = SolverConfig::fixed(Scheme::Milstein, 0.01);
    let (seeds, samples) = (100u64, 1000u64);
    let mut best_gap = f64::INFINITY;
    for seed in 0..seeds {
        let [k_post, k_mc] = split_n::<2>(RandomKey::from_seed(seed));
        let e = standard_normal(k_post, 4);
        let m = model(A + 0.5 * e[0], B + 0.5 * e[1], M0 + 0.3 * e[2], LV0 + 0.5 * e[3]);
        let elbos: Vec<f64> = (0..samples)
            .map(|i| {
                let [k_bm, k_z] = split_n::<2>(split(k_mc, i, samples).unwrap());
                let bm = VirtualBrownianTree::new(k_bm, 0.0, 1.0, 1);
                elbo_sample(&m, &seq, &bm, k_z, &cfg).unwrap().elbo
            })
            .collect();
        let mean = stats::mean(&elbos);
        let se = (stats::variance(&elbos) / samples as f64).sqrt();
        assert!(mean <= log_p + 3.0 * se, "seed {seed}: bound {mean} ± {se} above log p(x) = {log_p}");
        best_gap = best_gap.min(log_p - mean);
    }
    assert!(best_gap.is_finite());
}

#[test]
fn marginal_of_one_observation_matches_the_scalar_formula() {
    let seq = Sequence {
        times: vec![0.5],
        values: vec![vec![0.4]],
    };
    let t: f64 = 0.5;
    let mean = (A * t).exp() * M0 + B / A * ((A * t).exp() - 1.0);
    let var = (2.0 * A * t).exp() * LV0.exp() + S * S * ((2.0 * A * t).exp() - 1.0) / (2.0 * A) + OBS_STD * OBS_STD;
    let expected = -0.5 * ((0.4 - mean).powi(2) / var + var.ln() + (2.0 * std::f64::consts::PI).ln());
    assert!((log_marginal(&seq) - expected).abs() < 1e-12);
}

//! Subcommand bodies. Every random draw derives from the `seed` key.

use sde_adjoint::brownian::VirtualBrownianTree;
use sde_adjoint::experiments::{
    convergence_slope, convergence_sweep, gradcheck_sweep, parse_sweep, reconstruct_sweep, GradMethod, ReconstructMethod,
    Sweep, GBM_MU, GBM_SIGMA, GBM_X0,
};
use sde_adjoint::latent::{
    gbm_dataset, lorenz_dataset, sample_keys, sample_posterior, sample_prior, train, LatentConfig, LatentSdeModel,
    Sequence, TrainConfig,
};
use sde_adjoint::prng::{split, split_n, standard_normal, RandomKey};
use sde_adjoint::solvers::{sdeint, Scheme, SolverConfig};
use sde_adjoint::systems::{
    ito_to_stratonovich, make_example, make_gbm, make_stochastic_lorenz, stratonovich_to_ito, Example, Interpretation,
    SdeSystem,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{columns, num, CsvOut};

const GBM_OBS: usize = 50;
const LORENZ_OBS: usize = 40;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.command.as_str() {
        "simulate" => simulate(cfg),
        "gradcheck" => gradcheck(cfg),
        "convergence" => convergence(cfg),
        "reconstruct" => reconstruct(cfg),
        "train-latent" => train_latent(cfg),
        other => Err(CliError::Config(format!("unknown subcommand '{other}'"))),
    }
}

fn sweep(cfg: &RunConfig, key: &str) -> Result<Vec<f64>, CliError> {
    let raw: String = cfg.get(key)?;
    parse_sweep(&raw).map_err(|e| CliError::Config(format!("{key}: {e}")))
}

fn only_gbm(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.raw("system") {
        Some("gbm") => Ok(()),
        other => Err(CliError::Config(format!("system must be gbm, got {other:?}"))),
    }
}

/// Reinterprets `sys` when the scheme needs the other calculus.
fn for_scheme(sys: Box<dyn SdeSystem>, scheme: Scheme) -> Result<Box<dyn SdeSystem>, CliError> {
    Ok(match (scheme, sys.interpretation()) {
        (Scheme::Heun, Interpretation::Ito) => Box::new(ito_to_stratonovich(sys)?),
        (Scheme::EulerMaruyama, Interpretation::Stratonovich) => Box::new(stratonovich_to_ito(sys)?),
        _ => sys,
    })
}

fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let scheme: Scheme = cfg.get("scheme")?;
    let (t0, t1): (f64, f64) = (cfg.get("t0")?, cfg.get("t1")?);
    let points: usize = cfg.get("points")?;
    if !(t1 > t0) || points < 2 {
        return Err(CliError::Config("need t1 > t0 and at least 2 points".into()));
    }
    let solver = match cfg.get_opt::<f64>("atol")? {
        Some(atol) => SolverConfig::adaptive(scheme, cfg.get("rtol")?, atol),
        None => SolverConfig::fixed(scheme, cfg.get("h")?),
    };
    let [k_system, k_path] = split_n::<2>(cfg.get::<RandomKey>("seed")?);
    let system: String = cfg.get("system")?;
    let (sys, z0): (Box<dyn SdeSystem>, Vec<f64>) = match system.as_str() {
        "gbm" => (Box::new(make_gbm(GBM_MU, GBM_SIGMA)), vec![GBM_X0]),
        "lorenz" => (
            Box::new(make_stochastic_lorenz(10.0, 28.0, 8.0 / 3.0, [0.15; 3])),
            standard_normal(k_system, 3),
        ),
        other => {
            let kind: Example = other
                .parse()
                .map_err(|_| CliError::Config(format!("unknown system '{other}'")))?;
            let problem = make_example(kind, k_system);
            (problem.system, problem.x0)
        }
    };
    let sys = for_scheme(sys, scheme)?;
    let ts: Vec<f64> = (0..points)
        .map(|i| if i + 1 == points { t1 } else { t0 + (t1 - t0) * i as f64 / (points - 1) as f64 })
        .collect();
    let bm = VirtualBrownianTree::new(k_path, t0, t1, z0.len());
    let path = sdeint(&sys, &z0, &ts, &bm, &solver)?;
    let mut cols = columns(&["t"]);
    cols.extend((1..=z0.len()).map(|i| format!("z_{i}")));
    let mut out = CsvOut::create(&cfg.get::<String>("out")?, cfg, &cols)?;
    for (t, z) in path.times.iter().zip(&path.states) {
        out.row(std::iter::once(num(*t)).chain(z.iter().map(|&x| num(x))))?;
    }
    out.finish()
}

fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let kind: Example = cfg.get("system")?;
    let scheme: Scheme = cfg.get("scheme")?;
    let sweep = match cfg.raw("atol-sweep") {
        Some(_) => Sweep::Tolerances(sweep(cfg, "atol-sweep")?),
        None => Sweep::Steps(sweep(cfg, "h-sweep")?),
    };
    let methods: Vec<GradMethod> = cfg.get_list("methods")?;
    let rows = gradcheck_sweep(kind, scheme, &sweep, cfg.get("seeds")?, &methods, cfg.get("seed")?)?;
    let cols = columns(&[sweep.label(), "seed", "method", "mse_grad_theta", "mse_grad_z0", "nfe", "wall_ms"]);
    let mut out = CsvOut::create(&cfg.get::<String>("out")?, cfg, &cols)?;
    for r in &rows {
        out.row([
            num(r.value),
            r.seed.to_string(),
            r.method.name().to_string(),
            num(r.mse_grad_theta),
            num(r.mse_grad_z0),
            r.nfe.to_string(),
            num(r.wall_ms),
        ])?;
    }
    out.finish()
}

fn convergence(cfg: &RunConfig) -> Result<(), CliError> {
    only_gbm(cfg)?;
    let schemes: Vec<Scheme> = cfg.get_list("schemes")?;
    let hs = sweep(cfg, "h-sweep")?;
    let rows = convergence_sweep(&schemes, &hs, cfg.get("paths")?, cfg.get("seed")?)?;
    let mut out = CsvOut::create(
        &cfg.get::<String>("out")?,
        cfg,
        &columns(&["scheme", "h", "mean_abs_error", "paths"]),
    )?;
    for r in &rows {
        out.row([r.scheme.name().to_string(), num(r.h), num(r.mean_abs_error), r.paths.to_string()])?;
    }
    out.finish()?;
    if hs.len() > 1 {
        for s in schemes {
            eprintln!("{s}: log-log slope {:.3}", convergence_slope(&rows, s));
        }
    }
    Ok(())
}

fn reconstruct(cfg: &RunConfig) -> Result<(), CliError> {
    only_gbm(cfg)?;
    let methods = cfg
        .get_list::<Scheme>("scheme")?
        .into_iter()
        .map(|s| match s {
            Scheme::Heun => Ok(ReconstructMethod::StratonovichHeun),
            Scheme::EulerMaruyama => Ok(ReconstructMethod::NaiveItoEuler),
            Scheme::Milstein => Err(CliError::Config("reconstruct supports heun and euler".into())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let hs = sweep(cfg, "h-sweep")?;
    let rows = reconstruct_sweep(&hs, cfg.get("seeds")?, &methods, cfg.get("seed")?)?;
    let mut out = CsvOut::create(&cfg.get::<String>("out")?, cfg, &columns(&["h", "seed", "method", "error"]))?;
    for r in &rows {
        out.row([num(r.h), r.seed.to_string(), r.method.name().to_string(), num(r.error)])?;
    }
    out.finish()
}

fn train_latent(cfg: &RunConfig) -> Result<(), CliError> {
    let [k_data, k_model, k_train, k_samples] = split_n::<4>(cfg.get::<RandomKey>("seed")?);
    let series: usize = cfg.get("series")?;
    let dataset: String = cfg.get("dataset")?;
    let data: Vec<Sequence> = match dataset.as_str() {
        "gbm" => gbm_dataset(series, GBM_OBS, k_data),
        "lorenz" => lorenz_dataset(series, LORENZ_OBS, k_data)?,
        other => return Err(CliError::Config(format!("unknown dataset '{other}'"))),
    };
    if data.is_empty() {
        return Err(CliError::Config("series must be positive".into()));
    }
    let obs_dim = data[0].values[0].len();
    let mut model_cfg = LatentConfig::new(cfg.get("latent-dim")?, obs_dim);
    model_cfg.hidden = cfg.get("hidden")?;
    if model_cfg.latent_dim == 0 || model_cfg.hidden == 0 {
        return Err(CliError::Config("latent-dim and hidden must be positive".into()));
    }
    let mut model = LatentSdeModel::new(model_cfg, k_model);
    let solver = SolverConfig::fixed(cfg.get("scheme")?, cfg.get("h")?);
    let train_cfg = TrainConfig {
        batch_size: cfg.get("batch-size")?,
        lr: cfg.get("lr")?,
        lr_decay: cfg.get("lr-decay")?,
        kl_anneal_iters: cfg.get("kl-anneal")?,
        kl_weight: cfg.get("kl-weight")?,
        solver,
        ..TrainConfig::new(cfg.get("iters")?, k_train)
    };
    let log = train(&mut model, &data, &train_cfg)?;
    let mut out = CsvOut::create(
        &cfg.get::<String>("out")?,
        cfg,
        &columns(&["iter", "elbo", "loglik", "kl_path", "kl_z0"]),
    )?;
    for r in &log {
        out.row([r.iter.to_string(), num(r.elbo), num(r.log_likelihood), num(r.kl_path), num(r.kl_z0)])?;
    }
    out.finish()?;
    if let Some(path) = cfg.raw("samples-out") {
        write_samples(path, cfg, &model, &data, &solver, k_samples)?;
    }
    Ok(())
}

/// Rows of kind `data`, `posterior` (conditioned on that series) and `prior`
/// for each sample index.
fn write_samples(
    path: &str,
    cfg: &RunConfig,
    model: &LatentSdeModel,
    data: &[Sequence],
    solver: &SolverConfig,
    key: RandomKey,
) -> Result<(), CliError> {
    let n: usize = cfg.get("samples")?;
    let d = model.config.latent_dim;
    let mut cols = columns(&["kind", "sample", "series", "t"]);
    cols.extend((1..=model.config.obs_dim).map(|i| format!("x_{i}")));
    let mut out = CsvOut::create(path, cfg, &cols)?;
    for i in 0..n {
        let s = i % data.len();
        let seq = &data[s];
        let ts = &seq.times;
        let horizon = ts.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let [k_post, k_prior] = split_n::<2>(split(key, i as u64, n as u64)?);
        let (bm_key, z_key) = sample_keys(k_post);
        let post = sample_posterior(model, seq, ts, &VirtualBrownianTree::new(bm_key, 0.0, horizon, d), z_key, solver)?;
        let (bm_key, z_key) = sample_keys(k_prior);
        let prior = sample_prior(model, ts, &VirtualBrownianTree::new(bm_key, 0.0, horizon, d), z_key, solver)?;
        for (kind, path) in [("data", &seq.values), ("posterior", &post), ("prior", &prior)] {
            for (t, x) in ts.iter().zip(path) {
                let head = [kind.to_string(), i.to_string(), s.to_string(), num(*t)];
                out.row(head.into_iter().chain(x.iter().map(|&v| num(v))))?;
            }
        }
    }
    out.finish()
}

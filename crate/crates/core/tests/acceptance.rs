//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::alloc::{GlobalAlloc, Layout, System};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use sde_adjoint::adjoint::{adjoint_gradients, check_commutativity, jacobian_flow_solve, pipeline_forward, sde_gradients};
use sde_adjoint::brownian::{BrownianMotion, VirtualBrownianTree};
use sde_adjoint::experiments::{
    convergence_slope, convergence_sweep, gradcheck_sweep, medians_by_value, reconstruct_sweep, GradMethod,
    ReconstructMethod, Sweep,
};
use sde_adjoint::latent::{
    elbo_sample, gbm_dataset, kl_coefficient, train, u_function, LatentConfig, LatentSdeModel, Sequence, TrainConfig,
};
use sde_adjoint::prng::{split_n, uniform, RandomKey};
use sde_adjoint::solvers::{Scheme, SolverConfig};
use sde_adjoint::stats;
use sde_adjoint::systems::{
    ito_to_stratonovich, make_example, make_gbm, make_stochastic_lorenz, Activation, CrossDiffusion, Example, Gbm,
    Interpretation, LinearSde, NeuralSde, SdeSystem, WithParams,
};

struct Counting;

static ALLOCS: AtomicUsize = AtomicUsize::new(0);
static BYTES: AtomicUsize = AtomicUsize::new(0);
static LIVE: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::Relaxed);
        BYTES.fetch_add(layout.size(), Ordering::Relaxed);
        LIVE.fetch_add(layout.size(), Ordering::Relaxed);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
        unsafe { System.dealloc(ptr, layout) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

type Check = Result<String, String>;

fn key(seed: u64) -> RandomKey {
    RandomKey::from_seed(seed)
}

fn dyadic(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2f64.powi(-k)).collect()
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn strong_order() -> Check {
    let hs = dyadic(4, 10);
    let rows = convergence_sweep(&[Scheme::EulerMaruyama, Scheme::Milstein], &hs, 64, key(1)).map_err(|e| e.to_string())?;
    let euler = convergence_slope(&rows, Scheme::EulerMaruyama);
    let milstein = convergence_slope(&rows, Scheme::Milstein);
    verdict(
        (0.35..=0.65).contains(&euler) && (0.85..=1.15).contains(&milstein),
        format!("euler slope {euler:.3} in [0.35, 0.65], milstein slope {milstein:.3} in [0.85, 1.15]"),
    )
}

fn analytic_gradients() -> Check {
    let hs = dyadic(3, 9);
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [Example::One, Example::Two, Example::Three] {
        let rows = gradcheck_sweep(kind, Scheme::Milstein, &Sweep::Steps(hs.clone()), 64, &[GradMethod::Adjoint], key(7))
            .map_err(|e| e.to_string())?;
        for (label, metric) in [("theta", 0), ("z0", 1)] {
            let med = medians_by_value(&rows, &hs, GradMethod::Adjoint, |r| {
                if metric == 0 {
                    r.mse_grad_theta
                } else {
                    r.mse_grad_z0
                }
            });
            let ratio = med[0] / med[med.len() - 1];
            let mono = non_increasing(&med);
            ok &= ratio >= 100.0 && mono;
            parts.push(format!("{kind:?}/{label} ratio {ratio:.0}{}", if mono { "" } else { " NOT monotone" }));
        }
    }
    verdict(ok, format!("median MSE h=2^-3 / h=2^-9 >= 100, monotone: {}", parts.join(", ")))
}

fn fd_gradient(sys: &dyn SdeSystem, z0: &[f64], t1: f64, bm: &VirtualBrownianTree, cfg: &SolverConfig) -> (Vec<f64>, Vec<f64>) {
    let loss = |s: &dyn SdeSystem, z: &[f64]| {
        pipeline_forward(s, z, &[0.0, t1], bm, cfg)
            .expect("forward solve")
            .last()
            .iter()
            .sum::<f64>()
    };
    let eps = 1e-6;
    let theta = sys.params().to_vec();
    let gth = (0..theta.len())
        .map(|j| {
            let (mut a, mut b) = (theta.clone(), theta.clone());
            a[j] += eps;
            b[j] -= eps;
            (loss(&WithParams::new(sys, a), z0) - loss(&WithParams::new(sys, b), z0)) / (2.0 * eps)
        })
        .collect();
    let gz = (0..z0.len())
        .map(|i| {
            let (mut a, mut b) = (z0.to_vec(), z0.to_vec());
            a[i] += eps;
            b[i] -= eps;
            (loss(sys, &a) - loss(sys, &b)) / (2.0 * eps)
        })
        .collect();
    (gz, gth)
}

/// A system, its initial state, horizon and step exponent.
type FdCase = (&'static str, Box<dyn SdeSystem>, Vec<f64>, f64, i32);

fn finite_differences() -> Check {
    // Lorenz: stiff and chaotic, so a short horizon and fine step.
    let mut cases: Vec<FdCase> = vec![
        ("gbm", Box::new(make_gbm(1.0, 0.5)), vec![0.5], 1.0, 11),
        (
            "linear2",
            Box::new(LinearSde::new(
                2,
                vec![-0.5, 0.3, -0.2, -0.4],
                vec![0.3, 0.2],
                vec![0.1, -0.2],
                Interpretation::Stratonovich,
            )),
            vec![0.4, -0.7],
            1.0,
            11,
        ),
        ("lorenz", Box::new(make_stochastic_lorenz(10.0, 28.0, 8.0 / 3.0, [0.15; 3])), vec![1.0, 0.5, -0.3], 0.1, 14),
        ("neural2x2", Box::new(NeuralSde::new(2, 2, Interpretation::Stratonovich, key(5))), vec![0.3, -0.4], 1.0, 11),
    ];
    for kind in [Example::One, Example::Two, Example::Three] {
        let p = make_example(kind, key(11));
        let name = match kind {
            Example::One => "example1",
            Example::Two => "example2",
            Example::Three => "example3",
        };
        cases.push((name, p.system, p.x0, 1.0, 11));
    }
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, sys, z0, t1, k)) in cases.iter().enumerate() {
        let size = sys.dim() * sys.params().len();
        if size > 200 {
            return Err(format!("{name}: dimension x parameters = {size} exceeds 200"));
        }
        let bm = VirtualBrownianTree::new(key(100 + i as u64), 0.0, *t1, sys.dim());
        let mut case_worst: f64 = 0.0;
        for scheme in [Scheme::Milstein, Scheme::Heun] {
            let cfg = SolverConfig::fixed(scheme, 2f64.powi(-k));
            let (_, adj) = sde_gradients(sys.as_ref(), z0, 0.0, *t1, &bm, &cfg, |z| vec![1.0; z.len()]).map_err(|e| e.to_string())?;
            let (gz, gth) = fd_gradient(sys.as_ref(), z0, *t1, &bm, &cfg);
            case_worst = case_worst
                .max(stats::relative_error(&adj.grad_theta, &gth))
                .max(stats::relative_error(&adj.grad_z0, &gz));
        }
        worst = worst.max(case_worst);
        parts.push(format!("{name} {case_worst:.1e}"));
    }
    verdict(worst <= 1e-3, format!("max relative error {worst:.2e} <= 1e-3 ({})", parts.join(", ")))
}

fn reconstruction() -> Check {
    let hs = dyadic(4, 10);
    let methods = [ReconstructMethod::StratonovichHeun, ReconstructMethod::NaiveItoEuler];
    let rows = reconstruct_sweep(&hs, 16, &methods, key(3)).map_err(|e| e.to_string())?;
    let mean_err = |m: ReconstructMethod, h: f64| {
        stats::mean(&rows.iter().filter(|r| r.method == m && r.h == h).map(|r| r.error).collect::<Vec<_>>())
    };
    let strat: Vec<f64> = hs.iter().map(|&h| mean_err(methods[0], h)).collect();
    let slope = stats::loglog_slope(&hs, &strat);
    let h_min = hs[hs.len() - 1];
    let ratio = mean_err(methods[1], h_min) / mean_err(methods[0], h_min);
    verdict(
        slope >= 0.8 && ratio >= 10.0,
        format!("stratonovich slope {slope:.3} >= 0.8, naive/stratonovich at 2^-10 = {ratio:.0} >= 10"),
    )
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn brownian_tree() -> Check {
    // (a) determinism under interleaved queries
    let times: Vec<f64> = uniform(key(20), 500).into_iter().map(|u| 2.0 * u).collect();
    let a = VirtualBrownianTree::new(key(21), 0.0, 2.0, 3);
    let reference: Vec<Vec<u64>> = times.iter().map(|&t| bits(&a.query(t).unwrap())).collect();
    let b = VirtualBrownianTree::new(key(21), 0.0, 2.0, 3);
    let other = VirtualBrownianTree::new(key(22), 0.0, 2.0, 3);
    let mut deterministic = true;
    for (i, &t) in times.iter().enumerate().rev() {
        let _ = other.query(times[(7 * i) % times.len()]).unwrap();
        deterministic &= bits(&b.query(t).unwrap()) == reference[i];
        let _ = b.query(times[(3 * i + 1) % times.len()]).unwrap();
    }
    let parallel: Vec<Vec<u64>> = times.par_iter().map(|&t| bits(&a.query(t).unwrap())).collect();
    deterministic &= parallel == reference;

    // (b) increment law
    let (t1, t2) = (0.3, 0.8);
    let xs: Vec<f64> = (0..10_000u64)
        .map(|s| VirtualBrownianTree::new(key(10_000 + s), 0.0, 1.0, 1).increment(t1, t2).unwrap()[0])
        .collect();
    let p = stats::ks_normal_pvalue(&xs, 0.0, (t2 - t1).sqrt());

    // (c) per-query allocation bounded by depth, nothing retained
    let mut bounded = true;
    let mut depth_info = Vec::new();
    for tol in [1e-3, 1e-6, 1e-9] {
        let dim = 4;
        let tree = VirtualBrownianTree::with_tolerance(key(30), 0.0, 1.0, dim, tol);
        let depth = tree.max_depth();
        let bound = depth * dim * std::mem::size_of::<f64>();
        let qs = uniform(key(31), 1000);
        let mut out = vec![0.0; dim];
        let live_before = LIVE.load(Ordering::SeqCst);
        let mut worst_bytes = 0;
        let mut worst_allocs = 0;
        for &t in &qs {
            let (n0, b0) = (ALLOCS.load(Ordering::SeqCst), BYTES.load(Ordering::SeqCst));
            tree.query_into(t, &mut out).unwrap();
            worst_allocs = worst_allocs.max(ALLOCS.load(Ordering::SeqCst) - n0);
            worst_bytes = worst_bytes.max(BYTES.load(Ordering::SeqCst) - b0);
        }
        let retained = LIVE.load(Ordering::SeqCst) as isize - live_before as isize;
        bounded &= worst_bytes <= bound && worst_allocs <= depth && retained <= 0;
        depth_info.push(format!("eps {tol:e}: depth {depth}, <= {worst_allocs} allocs / {worst_bytes} B per query (bound {bound} B)"));
    }
    verdict(
        deterministic && p > 0.001 && bounded,
        format!(
            "(a) deterministic: {deterministic}; (b) KS p = {p:.3} > 0.001 over 1e4 seeds; (c) {}",
            depth_info.join("; ")
        ),
    )
}

fn commutativity() -> Check {
    let mut systems: Vec<(&str, Box<dyn SdeSystem>)> = vec![
        ("gbm", Box::new(make_gbm(1.0, 0.5))),
        ("gbm2", Box::new(Gbm::new(vec![0.4, -0.2], vec![0.6, 0.3]))),
        ("lorenz", Box::new(make_stochastic_lorenz(10.0, 28.0, 8.0 / 3.0, [0.15; 3]))),
        (
            "linear2",
            Box::new(LinearSde::new(2, vec![-0.5, 0.3, -0.2, -0.4], vec![0.3, 0.2], vec![0.1, -0.2], Interpretation::Ito)),
        ),
        ("neural", Box::new(NeuralSde::new(3, 8, Interpretation::Stratonovich, key(40)))),
    ];
    for (name, kind) in [("example1", Example::One), ("example2", Example::Two), ("example3", Example::Three)] {
        systems.push((name, make_example(kind, key(41)).system));
    }
    let mut worst: f64 = 0.0;
    for (_, sys) in &systems {
        worst = worst.max(check_commutativity(sys.as_ref()).max_violation);
    }
    let cross = check_commutativity(&CrossDiffusion::new(1.0, Interpretation::Stratonovich)).max_violation;
    verdict(
        worst <= 1e-8 && cross > 0.1,
        format!("{} diagonal systems max violation {worst:.1e} <= 1e-8; cross-diffusion {cross:.3} > 0.1", systems.len()),
    )
}

fn jacobian_flow() -> Check {
    let toys: Vec<(&str, Box<dyn SdeSystem>, Vec<f64>)> = vec![
        ("gbm2", Box::new(ito_to_stratonovich(Gbm::new(vec![0.4, -0.2], vec![0.6, 0.3])).unwrap()), vec![0.5, 0.9]),
        (
            "linear2",
            Box::new(LinearSde::new(
                2,
                vec![-0.5, 0.3, -0.2, -0.4],
                vec![0.3, 0.2],
                vec![0.1, -0.2],
                Interpretation::Stratonovich,
            )),
            vec![0.4, -0.7],
        ),
        ("neural2", Box::new(NeuralSde::new(2, 4, Interpretation::Stratonovich, key(50))), vec![0.3, -0.4]),
    ];
    let (mut worst_id, mut worst_pull): (f64, f64) = (0.0, 0.0);
    for (i, (_, sys, z0)) in toys.iter().enumerate() {
        let bm = VirtualBrownianTree::new(key(60 + i as u64), 0.0, 1.0, 2);
        let cfg = SolverConfig::fixed(Scheme::Heun, 1e-4);
        let fwd = pipeline_forward(sys.as_ref(), z0, &[0.0, 1.0], &bm, &cfg).map_err(|e| e.to_string())?;
        let flow = jacobian_flow_solve(sys.as_ref(), fwd.last(), 0.0, 1.0, &bm, &cfg).map_err(|e| e.to_string())?;
        let g = [1.0, -2.0];
        let adj = adjoint_gradients(sys.as_ref(), z0, 0.0, 1.0, &bm, &g, fwd.last(), &cfg).map_err(|e| e.to_string())?;
        worst_id = worst_id.max(flow.identity_error());
        worst_pull = worst_pull.max(stats::relative_error(&adj.grad_z0, &flow.pull_back(&g)));
    }
    verdict(
        worst_id <= 1e-4 && worst_pull <= 1e-3,
        format!("max |JK - I| {worst_id:.1e} <= 1e-4; adjoint vs pulled-back gradient {worst_pull:.1e} <= 1e-3"),
    )
}

fn softplus_inv(s: f64) -> f64 {
    s.exp_m1().ln()
}

fn set_block(m: &mut LatentSdeModel, name: &str, parts: &[&[f64]]) {
    let block = m.block_mut(name).unwrap();
    let values: Vec<f64> = parts.concat();
    assert_eq!(values.len(), block.len(), "{name}");
    block.copy_from_slice(&values);
}

/// Scalar model with linear drifts `post·z + post_c` and `prior·z + prior_c`
/// and constant diffusion `s`.
fn linear_latent(prior: f64, prior_c: f64, post: f64, post_c: f64, s: f64) -> LatentSdeModel {
    let mut cfg = LatentConfig::new(1, 1);
    cfg.hidden = 1;
    cfg.activation = Activation::Identity;
    cfg.obs_std = 0.1;
    let mut m = LatentSdeModel::new(cfg, key(0));
    set_block(&mut m, "posterior_drift", &[&[1.0, 0.0, 0.0], &[0.0], &[post], &[post_c]]);
    set_block(&mut m, "prior_drift", &[&[1.0, 0.0], &[0.0], &[prior], &[prior_c]]);
    set_block(&mut m, "diffusion_0", &[&[0.0, 0.0], &[0.0], &[0.0], &[softplus_inv(s)]]);
    set_block(&mut m, "decoder", &[&[1.0], &[0.0]]);
    m
}

fn latent() -> Check {
    // (a) identical drifts
    let mut m = linear_latent(-0.7, 0.3, -0.7, 0.3, 0.4);
    let enc = m.block_mut("encoder").unwrap();
    enc.fill(0.0);
    let n = enc.len();
    enc[n - 3..].copy_from_slice(&[0.2, -1.0, 0.5]);
    m.block_mut("z0_prior").unwrap().copy_from_slice(&[0.2, -1.0]);
    let seq = Sequence {
        times: vec![0.25, 0.5, 1.0],
        values: vec![vec![0.1], vec![0.3], vec![-0.2]],
    };
    let cfg = SolverConfig::fixed(Scheme::Milstein, 0.01);
    let bm = VirtualBrownianTree::new(key(1), 0.0, 1.0, 1);
    let zero_u = u_function(&m, &[0.8], 0.3, &[0.5]).map_err(|e| e.to_string())?.iter().all(|&u| u == 0.0);
    let e = elbo_sample(&m, &seq, &bm, key(2), &cfg).map_err(|e| e.to_string())?;
    let zero_kl = zero_u && e.kl_path == 0.0;

    // (b) constant drift gap
    let (c, s, t) = (0.6, 0.3, 1.5);
    let m = linear_latent(0.0, 0.0, 0.0, c, s);
    let one_obs = Sequence {
        times: vec![t],
        values: vec![vec![0.0]],
    };
    let bm = VirtualBrownianTree::new(key(3), 0.0, t, 1);
    let e = elbo_sample(&m, &one_obs, &bm, key(4), &cfg).map_err(|e| e.to_string())?;
    let expected = 0.5 * (c / s) * (c / s) * t;
    let gap_err = (e.kl_path - expected).abs();

    // (c) training on the GBM toy at 1/8 scale
    let anneal_ok = kl_coefficient(49, 50) < 1.0 && kl_coefficient(50, 50) == 1.0;
    let mut gains = Vec::new();
    for seed in 0..3u64 {
        let [k_data, k_model, k_train] = split_n::<3>(key(200 + seed));
        let data = gbm_dataset(128, 50, k_data);
        let mut model = LatentSdeModel::new(LatentConfig::new(4, 1), k_model);
        let mut tc = TrainConfig::new(300, k_train);
        tc.batch_size = 8;
        let log = train(&mut model, &data, &tc).map_err(|e| e.to_string())?;
        let first = log[0].elbo;
        let last = stats::mean(&log[log.len() - 10..].iter().map(|r| r.elbo).collect::<Vec<_>>());
        gains.push((last - first) / first.abs());
        if log[50].kl_coefficient != 1.0 || log[49].kl_coefficient >= 1.0 {
            return Err(format!("annealing coefficient at 49/50: {} / {}", log[49].kl_coefficient, log[50].kl_coefficient));
        }
    }
    let gain = stats::median(&gains);
    verdict(
        zero_kl && gap_err <= 1e-6 && gain >= 0.2 && anneal_ok,
        format!(
            "(a) zero KL: {zero_kl}; (b) |KL - (c/s)^2 T/2| = {gap_err:.1e} <= 1e-6; (c) median ELBO gain {:.1}% >= 20% \
             (seeds {:.1}%, {:.1}%, {:.1}%), KL coefficient 1 from iteration 50: {anneal_ok}",
            100.0 * gain,
            100.0 * gains[0],
            100.0 * gains[1],
            100.0 * gains[2]
        ),
    )
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().expect("test executable path");
    exe.parent().and_then(Path::parent).expect("profile directory").to_path_buf()
}

fn sdeadj_binary() -> Result<PathBuf, String> {
    let profile_dir = target_dir();
    let bin = profile_dir.join(format!("sdeadj{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let mut build = Command::new(env!("CARGO"));
        build.args(["build", "--quiet", "-p", "sdeadj"]);
        if profile_dir.file_name().is_some_and(|n| n == "release") {
            build.arg("--release");
        }
        let status = build.status().map_err(|e| format!("cannot run cargo: {e}"))?;
        if !status.success() || !bin.exists() {
            return Err(format!("could not build {}", bin.display()));
        }
    }
    Ok(bin)
}

fn efficiency_csv() -> Check {
    let bin = sdeadj_binary()?;
    let out = target_dir().join("acceptance").join("gradcheck_efficiency.csv");
    std::fs::create_dir_all(out.parent().unwrap()).map_err(|e| e.to_string())?;
    let run = Command::new(&bin)
        .args(["gradcheck", "--system", "example2", "--scheme", "milstein", "--h-sweep", "2^-3..2^-7", "--seeds", "8"])
        .args(["--methods", "adjoint,finite_difference", "--seed", "9", "--out"])
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !run.status.success() {
        return Err(format!("gradcheck failed: {}", String::from_utf8_lossy(&run.stderr)));
    }
    let text = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split(',').collect()).collect();
    let summary = |method: &str| {
        let pick = |col: usize| {
            stats::median(
                &rows
                    .iter()
                    .filter(|r| r[2] == method)
                    .map(|r| r[col].parse::<f64>().unwrap())
                    .collect::<Vec<_>>(),
            )
        };
        (pick(3), pick(6))
    };
    let (adj_mse, adj_ms) = summary("adjoint");
    let (fd_mse, fd_ms) = summary("finite_difference");
    verdict(
        rows.len() == 5 * 8 * 2,
        format!(
            "{} rows in {}; median mse/wall_ms adjoint {adj_mse:.1e}/{adj_ms:.2}, finite differences {fd_mse:.1e}/{fd_ms:.2}",
            rows.len(),
            out.display()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("strong-order slopes", strong_order),
        ("adjoint vs analytic gradients", analytic_gradients),
        ("adjoint vs finite differences", finite_differences),
        ("backward reconstruction", reconstruction),
        ("virtual Brownian tree", brownian_tree),
        ("commutativity", commutativity),
        ("Jacobian flow identity", jacobian_flow),
        ("latent SDE", latent),
        ("efficiency CSV (informational)", efficiency_csv),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {} {name} ({:.1}s): {detail}", i + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

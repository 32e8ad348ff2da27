use std::path::Path;
use std::process::{Command, Output};

fn sdeadj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdeadj"))
        .args(args)
        .env_remove("SDEADJ_JOBS")
        .output()
        .expect("binary runs")
}

fn csv_rows(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (comment, header, rows)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[test]
fn simulate_is_byte_identical_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("path.csv");
    let args = ["simulate", "--system", "example3", "--seed", "0xdeadbeef", "--out", out.to_str().unwrap()];
    assert!(sdeadj(&args).status.success());
    let first = std::fs::read(&out).unwrap();
    assert!(sdeadj(&[&args[..], &["--jobs", "3"]].concat()).status.success());
    assert_eq!(std::fs::read(&out).unwrap(), first);

    let (comment, header, rows) = csv_rows(&out);
    assert!(comment.starts_with("# sdeadj "));
    assert!(comment.contains("seed=0xdeadbeef"));
    assert_eq!(header.len(), 11);
    assert_eq!(header[0], "t");
    assert_eq!(rows.len(), 101);

    let other = dir.path().join("other.csv");
    let args = ["simulate", "--system", "example3", "--seed", "0xdeadbef0", "--out", other.to_str().unwrap()];
    assert!(sdeadj(&args).status.success());
    assert_ne!(std::fs::read(&other).unwrap(), first);
}

#[test]
fn gradcheck_medians_do_not_increase_with_smaller_steps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grad.csv");
    let args = [
        "gradcheck", "--system", "example2", "--scheme", "milstein", "--h-sweep", "2^-3..2^-9", "--seeds", "64",
        "--methods", "adjoint", "--out", out.to_str().unwrap(),
    ];
    let run = sdeadj(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let (_, header, rows) = csv_rows(&out);
    assert_eq!(header, ["h", "seed", "method", "mse_grad_theta", "mse_grad_z0", "nfe", "wall_ms"]);
    assert_eq!(rows.len(), 7 * 64);
    let medians: Vec<f64> = (3..=9)
        .map(|k| {
            let h = 2f64.powi(-k);
            median(
                rows.iter()
                    .filter(|r| r[0].parse::<f64>().unwrap() == h)
                    .map(|r| r[3].parse().unwrap())
                    .collect(),
            )
        })
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "medians {medians:?}");
    }
}

#[test]
fn reconstruction_error_falls_with_step_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec.csv");
    let args = ["reconstruct", "--system", "gbm", "--scheme", "heun", "--h-sweep", "2^-2..2^-10", "--out", out.to_str().unwrap()];
    assert!(sdeadj(&args).status.success());
    let (_, _, rows) = csv_rows(&out);
    assert!(rows.iter().all(|r| r[2] == "stratonovich_heun"));
    let mean_at = |k: i32| {
        let h = 2f64.powi(-k);
        let e: Vec<f64> = rows.iter().filter(|r| r[0].parse::<f64>().unwrap() == h).map(|r| r[3].parse().unwrap()).collect();
        e.iter().sum::<f64>() / e.len() as f64
    };
    let errs: Vec<f64> = (2..=10).map(mean_at).collect();
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "errors {errs:?}");
    }
}

#[test]
fn exit_codes_distinguish_config_and_numerical_failures() {
    assert_eq!(sdeadj(&["simulate", "--points", "2"]).status.code(), Some(0));
    assert_eq!(sdeadj(&["simulate", "--no-such-flag", "1"]).status.code(), Some(2));
    assert_eq!(sdeadj(&["simulate", "--scheme", "rk4"]).status.code(), Some(2));
    assert_eq!(sdeadj(&["simulate", "--seed", "not-hex"]).status.code(), Some(2));
    assert_eq!(sdeadj(&["simulate", "--h", "-1"]).status.code(), Some(2));
    assert_eq!(sdeadj(&["convergence", "--system", "lorenz"]).status.code(), Some(2));
    assert_eq!(sdeadj(&["simulate", "--config", "/no/such/file"]).status.code(), Some(2));
    assert_eq!(sdeadj(&[]).status.code(), Some(2));
    let diverged = sdeadj(&["simulate", "--system", "lorenz", "--h", "10", "--t1", "100", "--points", "2"]);
    assert_eq!(diverged.status.code(), Some(1));
    assert_eq!(sdeadj(&["simulate", "--out", "/no/such/dir/x.csv", "--points", "2"]).status.code(), Some(1));
    assert_eq!(sdeadj(&["--help"]).status.code(), Some(0));
}

#[test]
fn printed_config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = sdeadj(&["gradcheck", "--seeds", "3", "--scheme", "heun", "--seed", "ff", "--print-config"]);
    assert!(first.status.success());
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = sdeadj(&["gradcheck", "--config", path.to_str().unwrap(), "--print-config"]);
    assert_eq!(second.stdout, first.stdout);

    std::fs::write(&path, "seeds = 3\nunknown = 1\n").unwrap();
    assert_eq!(sdeadj(&["gradcheck", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn help_documents_columns() {
    let help = String::from_utf8(sdeadj(&["gradcheck", "--help"]).stdout).unwrap();
    assert!(help.contains("mse_grad_theta"));
    assert!(help.contains("--h-sweep"));
}

#[test]
fn latent_training_writes_log_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (log, samples) = (dir.path().join("log.csv"), dir.path().join("samples.csv"));
    let args = [
        "train-latent", "--series", "8", "--iters", "3", "--batch-size", "2", "--latent-dim", "2", "--hidden", "4",
        "--samples", "2", "--out", log.to_str().unwrap(), "--samples-out", samples.to_str().unwrap(),
    ];
    let run = sdeadj(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let (_, header, rows) = csv_rows(&log);
    assert_eq!(header, ["iter", "elbo", "loglik", "kl_path", "kl_z0"]);
    assert_eq!(rows.len(), 3);
    let (_, header, rows) = csv_rows(&samples);
    assert_eq!(header, ["kind", "sample", "series", "t", "x_1"]);
    assert_eq!(rows.len(), 2 * 3 * 50);
}

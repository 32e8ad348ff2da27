//! Run configuration: every setting of a subcommand as a `key=value` pair.
//!
//! Settings come from built-in defaults, then an optional config file, then
//! command-line flags. The resolved configuration serializes to text that
//! parses back to the same value, and is echoed into every output file.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::CliError;

/// One setting of a subcommand.
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, default, help }
}

const SEED: Key = key("seed", Some("1"), "root random key, up to 32 hex digits");
const OUT: Key = key("out", Some("-"), "output CSV path, '-' for stdout");

pub struct Command {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [Key],
}

pub const COMMANDS: &[Command] = &[
    Command {
        name: "simulate",
        about: "Solve one SDE path. Columns: t, z_1..z_d",
        keys: &[
            key("system", Some("gbm"), "gbm | lorenz | example1 | example2 | example3"),
            key("scheme", Some("milstein"), "euler | milstein | heun"),
            key("h", Some("0.01"), "fixed step size"),
            key("atol", None, "absolute tolerance; enables adaptive stepping"),
            key("rtol", Some("0"), "relative tolerance for adaptive stepping"),
            key("t0", Some("0"), "start time"),
            key("t1", Some("1"), "end time"),
            key("points", Some("101"), "number of equally spaced output times"),
            SEED,
            OUT,
        ],
    },
    Command {
        name: "gradcheck",
        about: "Gradient error against closed-form path gradients. \
                Columns: h (or atol), seed, method, mse_grad_theta, mse_grad_z0, nfe, wall_ms",
        keys: &[
            key("system", Some("example2"), "example1 | example2 | example3"),
            key("scheme", Some("milstein"), "euler | milstein | heun"),
            key("h-sweep", Some("2^-3..2^-9"), "step sizes, e.g. 2^-3..2^-9 or 0.1,0.05"),
            key("atol-sweep", None, "absolute tolerances for adaptive stepping (replaces h-sweep)"),
            key("seeds", Some("64"), "number of Brownian paths per step size"),
            key("methods", Some("adjoint,finite_difference"), "adjoint | finite_difference, comma separated"),
            SEED,
            OUT,
        ],
    },
    Command {
        name: "convergence",
        about: "Strong error on geometric Brownian motion. Columns: scheme, h, mean_abs_error, paths",
        keys: &[
            key("system", Some("gbm"), "gbm"),
            key("schemes", Some("euler,milstein"), "schemes, comma separated"),
            key("h-sweep", Some("2^-4..2^-10"), "step sizes"),
            key("paths", Some("64"), "number of Brownian paths"),
            SEED,
            OUT,
        ],
    },
    Command {
        name: "reconstruct",
        about: "Forward-then-backward reconstruction of the initial state. Columns: h, seed, method, error",
        keys: &[
            key("system", Some("gbm"), "gbm"),
            key("scheme", Some("heun,euler"), "heun (Stratonovich backward flow) | euler (naive Ito negation)"),
            key("h-sweep", Some("2^-2..2^-10"), "step sizes"),
            key("seeds", Some("16"), "number of Brownian paths"),
            SEED,
            OUT,
        ],
    },
    Command {
        name: "train-latent",
        about: "Train a latent SDE on a toy dataset. Columns: iter, elbo, loglik, kl_path, kl_z0",
        keys: &[
            key("dataset", Some("gbm"), "gbm | lorenz"),
            key("series", Some("128"), "number of training series"),
            key("latent-dim", Some("4"), "latent state dimension"),
            key("hidden", Some("16"), "hidden units per network"),
            key("iters", Some("300"), "training iterations"),
            key("batch-size", Some("16"), "series per iteration"),
            key("lr", Some("0.01"), "initial Adam learning rate"),
            key("lr-decay", Some("0.999"), "learning-rate decay per iteration"),
            key("kl-anneal", Some("50"), "iterations of linear KL annealing (0 disables)"),
            key("kl-weight", Some("1"), "final KL coefficient"),
            key("scheme", Some("milstein"), "milstein | heun | euler"),
            key("h", Some("0.01"), "fixed step size of forward and adjoint solves"),
            key("samples", Some("4"), "posterior and prior sample paths written to samples-out"),
            key("samples-out", None, "CSV of sample paths. Columns: kind, sample, series, t, x_1..x_D"),
            SEED,
            OUT,
        ],
    },
];

pub fn command(name: &str) -> Option<&'static Command> {
    COMMANDS.iter().find(|c| c.name == name)
}

/// Resolved settings of one subcommand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub command: String,
    pub values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults of a subcommand.
    pub fn defaults(name: &str) -> Result<Self, CliError> {
        let cmd = command(name).ok_or_else(|| CliError::Config(format!("unknown subcommand '{name}'")))?;
        let values = cmd
            .keys
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
            .collect();
        Ok(Self {
            command: name.to_string(),
            values,
        })
    }

    /// Sets a value, rejecting keys the subcommand does not know.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let cmd = command(&self.command).expect("known subcommand");
        if !cmd.keys.iter().any(|k| k.name == key) {
            return Err(CliError::Config(format!("unknown key '{key}' for {}", self.command)));
        }
        if value.is_empty() || value.chars().any(char::is_whitespace) {
            return Err(CliError::Config(format!("value of '{key}' must be non-empty without whitespace")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    /// A `command` line must match this configuration's subcommand.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "command" {
                if v != self.command {
                    return Err(CliError::Config(format!("config is for '{v}', not '{}'", self.command)));
                }
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses the text form produced by [`RunConfig::to_text`].
    #[cfg(test)]
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let name = text
            .lines()
            .filter_map(|l| l.trim().split_once('='))
            .find(|(k, _)| k.trim() == "command")
            .map(|(_, v)| v.trim().to_string())
            .ok_or_else(|| CliError::Config("missing 'command' line".into()))?;
        let mut cfg = Self {
            command: name.clone(),
            values: BTreeMap::new(),
        };
        command(&name).ok_or_else(|| CliError::Config(format!("unknown subcommand '{name}'")))?;
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// One `key=value` per line, starting with the subcommand.
    pub fn to_text(&self) -> String {
        let mut s = format!("command={}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Typed value of a key that has a default.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self
            .raw(key)
            .ok_or_else(|| CliError::Config(format!("missing value for '{key}'")))?;
        raw.parse()
            .map_err(|e| CliError::Config(format!("invalid {key} '{raw}': {e}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key).map(|_| self.get(key)).transpose()
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw: String = self.get(key)?;
        raw.split(',')
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Config(format!("invalid {key} entry '{s}': {e}")))
            })
            .collect()
    }
}

impl fmt::Display for RunConfig {
    /// Single-line form used in output headers.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.command)?;
        for (k, v) in &self.values {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

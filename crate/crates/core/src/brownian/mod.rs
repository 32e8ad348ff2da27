//! Wiener process sample paths that can be queried at arbitrary times.
//!
//! [`VirtualBrownianTree`] reconstructs any value on demand from a single key by
//! bisecting Brownian bridges, so it holds no per-query state.
//! [`CachedBrownian`] is the baseline that remembers every value it produced.

mod cached;
mod tree;

use std::sync::Mutex;

pub use cached::CachedBrownian;
pub use tree::VirtualBrownianTree;

use crate::error::{contract, Result, SdeError};
use crate::prng::{fill_standard_normal, RandomKey};

/// A queryable `m`-dimensional Wiener process sample path on `[t_start, t_end]`.
pub trait BrownianMotion: Send + Sync {
    fn dim(&self) -> usize;
    fn t_start(&self) -> f64;
    fn t_end(&self) -> f64;

    /// Writes `W(t)` into `out` (length `dim()`).
    fn query_into(&self, t: f64, out: &mut [f64]) -> Result<()>;

    fn query(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.query_into(t, &mut out)?;
        Ok(out)
    }

    /// `W(t1) - W(t0)`.
    fn increment(&self, t0: f64, t1: f64) -> Result<Vec<f64>> {
        let a = self.query(t0)?;
        let mut b = self.query(t1)?;
        b.iter_mut().zip(&a).for_each(|(b, a)| *b -= a);
        Ok(b)
    }
}

impl<B: BrownianMotion + ?Sized> BrownianMotion for &B {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn t_start(&self) -> f64 {
        (**self).t_start()
    }
    fn t_end(&self) -> f64 {
        (**self).t_end()
    }
    fn query_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        (**self).query_into(t, out)
    }
}

pub(crate) fn check_range(t: f64, lo: f64, hi: f64) -> Result<()> {
    if t >= lo && t <= hi {
        Ok(())
    } else {
        Err(SdeError::OutOfRange { t, lo, hi })
    }
}

/// Samples the Brownian bridge pinned at `(t_s, w_s)` and `(t_e, w_e)` at time
/// `t`: mean `((t_e-t) w_s + (t-t_s) w_e) / (t_e-t_s)`, variance
/// `(t_e-t)(t-t_s) / (t_e-t_s)` per dimension.
pub fn bridge_sample(
    t_s: f64,
    w_s: &[f64],
    t_e: f64,
    w_e: &[f64],
    t: f64,
    key: RandomKey,
) -> Result<Vec<f64>> {
    if !(t_s < t && t < t_e) {
        return Err(contract(format!(
            "bridge time {t} not inside ({t_s}, {t_e})"
        )));
    }
    if w_s.len() != w_e.len() {
        return Err(contract("bridge endpoints differ in dimension"));
    }
    let mut out = vec![0.0; w_s.len()];
    bridge_into(t_s, w_s, t_e, w_e, t, key, &mut out);
    Ok(out)
}

pub(crate) fn bridge_into(
    t_s: f64,
    w_s: &[f64],
    t_e: f64,
    w_e: &[f64],
    t: f64,
    key: RandomKey,
    out: &mut [f64],
) {
    let span = t_e - t_s;
    let std = ((t_e - t) * (t - t_s) / span).sqrt();
    fill_standard_normal(key, out);
    for ((o, s), e) in out.iter_mut().zip(w_s).zip(w_e) {
        *o = ((t_e - t) * s + (t - t_s) * e) / span + std * *o;
    }
}

/// The time-reflected path `s -> -W(-s)` on `[-t_end, -t_start]`, used to drive
/// solves that run backwards in time.
#[derive(Debug, Clone)]
pub struct Reflected<B>(pub B);

impl<B: BrownianMotion> BrownianMotion for Reflected<B> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn t_start(&self) -> f64 {
        -self.0.t_end()
    }
    fn t_end(&self) -> f64 {
        -self.0.t_start()
    }
    fn query_into(&self, s: f64, out: &mut [f64]) -> Result<()> {
        self.0.query_into(-s, out)?;
        out.iter_mut().for_each(|v| *v = -*v);
        Ok(())
    }
}

/// Records every query time of the wrapped path.
#[derive(Debug)]
pub struct Recording<B> {
    inner: B,
    log: Mutex<Vec<f64>>,
}

impl<B: BrownianMotion> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn take_log(&self) -> Vec<f64> {
        std::mem::take(&mut *self.log.lock().expect("log poisoned"))
    }
}

impl<B: BrownianMotion> BrownianMotion for Recording<B> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn t_start(&self) -> f64 {
        self.inner.t_start()
    }
    fn t_end(&self) -> f64 {
        self.inner.t_end()
    }
    fn query_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.log.lock().expect("log poisoned").push(t);
        self.inner.query_into(t, out)
    }
}

use super::{bridge_into, check_range, BrownianMotion};
use crate::error::Result;
use crate::prng::{fill_standard_normal, split_n, RandomKey};

/// Fraction of the horizon used as the default query tolerance.
pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 1e-5;

/// Brownian path reconstructed by recursive bridge bisection from one key.
///
/// `W(t_start) = 0` and `W(t_end) ~ N(0, (t_end - t_start) I)` are fixed at
/// construction. A query bisects `[t_start, t_end]` until the midpoint lies
/// within `tolerance` of the requested time and returns the bridge value at that
/// midpoint, so results are quantized to the tolerance. Each node's sample uses a
/// key derived from its parent, and the struct stores nothing per query.
#[derive(Debug, Clone)]
pub struct VirtualBrownianTree {
    t_start: f64,
    t_end: f64,
    tolerance: f64,
    w_start: Vec<f64>,
    w_end: Vec<f64>,
    root: RandomKey,
}

impl VirtualBrownianTree {
    pub fn new(seed: RandomKey, t_start: f64, t_end: f64, dim: usize) -> Self {
        Self::with_tolerance(seed, t_start, t_end, dim, DEFAULT_RELATIVE_TOLERANCE * (t_end - t_start))
    }

    pub fn with_tolerance(seed: RandomKey, t_start: f64, t_end: f64, dim: usize, tolerance: f64) -> Self {
        assert!(t_end > t_start, "empty time interval");
        assert!(tolerance > 0.0, "tolerance must be positive");
        let [end_key, root] = split_n::<2>(seed);
        let mut w_end = vec![0.0; dim];
        fill_standard_normal(end_key, &mut w_end);
        let scale = (t_end - t_start).sqrt();
        w_end.iter_mut().for_each(|w| *w *= scale);
        Self {
            t_start,
            t_end,
            tolerance,
            w_start: vec![0.0; dim],
            w_end,
            root,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Upper bound on bisection levels per query, `ceil(log2(horizon / tolerance))`.
    pub fn max_depth(&self) -> usize {
        ((self.t_end - self.t_start) / self.tolerance).log2().ceil().max(1.0) as usize
    }

    /// Number of bisection levels a query at `t` walks through.
    pub fn depth_of(&self, t: f64) -> usize {
        if t == self.t_start || t == self.t_end {
            return 0;
        }
        let (mut lo, mut hi) = (self.t_start, self.t_end);
        let mut depth = 0;
        loop {
            let mid = 0.5 * (lo + hi);
            depth += 1;
            if (t - mid).abs() <= self.tolerance {
                return depth;
            }
            if t < mid {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
}

impl BrownianMotion for VirtualBrownianTree {
    fn dim(&self) -> usize {
        self.w_start.len()
    }

    fn t_start(&self) -> f64 {
        self.t_start
    }

    fn t_end(&self) -> f64 {
        self.t_end
    }

    fn query_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        check_range(t, self.t_start, self.t_end)?;
        if t == self.t_start {
            out.copy_from_slice(&self.w_start);
            return Ok(());
        }
        if t == self.t_end {
            out.copy_from_slice(&self.w_end);
            return Ok(());
        }
        let m = self.dim();
        // One scratch buffer holds the current interval's endpoint values.
        let mut ends = Vec::with_capacity(2 * m);
        ends.extend_from_slice(&self.w_start);
        ends.extend_from_slice(&self.w_end);
        let (mut t_s, mut t_e) = (self.t_start, self.t_end);
        let mut key = self.root;
        loop {
            let t_m = 0.5 * (t_s + t_e);
            let [k_mid, k_left, k_right] = split_n::<3>(key);
            {
                let (w_s, w_e) = ends.split_at(m);
                bridge_into(t_s, w_s, t_e, w_e, t_m, k_mid, out);
            }
            if (t - t_m).abs() <= self.tolerance || t_m <= t_s || t_m >= t_e {
                return Ok(());
            }
            if t < t_m {
                t_e = t_m;
                ends[m..].copy_from_slice(out);
                key = k_left;
            } else {
                t_s = t_m;
                ends[..m].copy_from_slice(out);
                key = k_right;
            }
        }
    }
}

use std::sync::Mutex;

use super::{bridge_into, check_range, BrownianMotion};
use crate::error::Result;
use crate::prng::{fill_standard_normal, split, split_n, RandomKey};

/// Brownian path that stores every queried value.
///
/// A new time is sampled from the bridge between its stored neighbours, so
/// values are exact (no time quantization) and stay fixed once produced. Memory
/// grows with the number of distinct query times. Queries serialize on an
/// internal lock.
#[derive(Debug)]
pub struct CachedBrownian {
    t_start: f64,
    t_end: f64,
    dim: usize,
    key: RandomKey,
    points: Mutex<Vec<(f64, Vec<f64>)>>,
}

impl CachedBrownian {
    pub fn new(seed: RandomKey, t_start: f64, t_end: f64, dim: usize) -> Self {
        assert!(t_end > t_start, "empty time interval");
        let [end_key, key] = split_n::<2>(seed);
        let mut w_end = vec![0.0; dim];
        fill_standard_normal(end_key, &mut w_end);
        let scale = (t_end - t_start).sqrt();
        w_end.iter_mut().for_each(|w| *w *= scale);
        Self {
            t_start,
            t_end,
            dim,
            key,
            points: Mutex::new(vec![(t_start, vec![0.0; dim]), (t_end, w_end)]),
        }
    }

    /// Number of stored time points, endpoints included.
    pub fn len(&self) -> usize {
        self.points.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl BrownianMotion for CachedBrownian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn t_start(&self) -> f64 {
        self.t_start
    }

    fn t_end(&self) -> f64 {
        self.t_end
    }

    fn query_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        check_range(t, self.t_start, self.t_end)?;
        let mut points = self.points.lock().expect("cache poisoned");
        match points.binary_search_by(|(s, _)| s.total_cmp(&t)) {
            Ok(i) => out.copy_from_slice(&points[i].1),
            Err(i) => {
                let (t_s, w_s) = &points[i - 1];
                let (t_e, w_e) = &points[i];
                let key = split(self.key, points.len() as u64, u64::MAX)?;
                bridge_into(*t_s, w_s, *t_e, w_e, t, key, out);
                points.insert(i, (t, out.to_vec()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn endpoints_and_repeat_queries() {
        let bm = CachedBrownian::new(RandomKey::from_seed(1), 0.0, 1.0, 2);
        assert_eq!(bm.query(0.0).unwrap(), vec![0.0, 0.0]);
        let end = bm.query(1.0).unwrap();
        let a = bm.query(0.37).unwrap();
        bm.query(0.2).unwrap();
        bm.query(0.5).unwrap();
        assert_eq!(bm.query(0.37).unwrap(), a);
        assert_eq!(bm.query(1.0).unwrap(), end);
        assert!(bm.query(1.5).is_err());
    }

    #[test]
    fn memory_grows_with_distinct_queries() {
        let bm = CachedBrownian::new(RandomKey::from_seed(1), 0.0, 1.0, 1);
        assert_eq!(bm.len(), 2);
        for i in 1..100 {
            bm.query(i as f64 / 100.0).unwrap();
        }
        bm.query(0.5).unwrap();
        assert_eq!(bm.len(), 101);
    }

    #[test]
    fn increment_law() {
        let xs: Vec<f64> = (0..10_000u64)
            .map(|s| {
                let bm = CachedBrownian::new(RandomKey::from_seed(s), 0.0, 1.0, 1);
                // interleave an outside query to exercise neighbour lookup
                bm.query(0.5).unwrap();
                bm.increment(0.25, 0.75).unwrap()[0]
            })
            .collect();
        let n = xs.len() as f64;
        let (mean, var) = (stats::mean(&xs), stats::variance(&xs));
        assert!(mean.abs() < 3.0 * (0.5 / n).sqrt(), "mean {mean}");
        assert!((var - 0.5).abs() < 3.0 * 0.5 * (2.0 / n).sqrt(), "var {var}");
    }
}

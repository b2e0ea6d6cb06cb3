//! Greenwald-Khanna streaming quantile summary.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Tuple {
    value: f64,
    /// rmin(i) - rmin(i - 1)
    g: u64,
    /// rmax(i) - rmin(i)
    delta: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSketch {
    epsilon: f64,
    count: u64,
    tuples: Vec<Tuple>,
    compress_every: u64,
}

impl QuantileSketch {
    /// Sketch answering rank queries within `epsilon * n`.
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(invalid(
                "delta_sketch",
                format!("must lie in (0, 0.5), got {epsilon}"),
            ));
        }
        Ok(Self {
            epsilon,
            count: 0,
            tuples: Vec::new(),
            compress_every: ((1.0 / (2.0 * epsilon)).floor() as u64).max(1),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Number of stored tuples.
    pub fn summary_len(&self) -> usize {
        self.tuples.len()
    }

    fn band(&self) -> u64 {
        (2.0 * self.epsilon * self.count as f64).floor() as u64
    }

    pub fn insert(&mut self, value: f64) -> Result<()> {
        if value.is_nan() {
            return Err(invalid("value", "NaN cannot be ranked"));
        }
        let pos = self.tuples.partition_point(|t| t.value <= value);
        // rank uncertainty inherited from the successor; new extremes are exact
        let delta = if pos == 0 || pos == self.tuples.len() {
            0
        } else {
            let next = self.tuples[pos];
            next.g + next.delta - 1
        };
        self.tuples.insert(pos, Tuple { value, g: 1, delta });
        self.count += 1;
        if self.count.is_multiple_of(self.compress_every) {
            self.compress();
        }
        Ok(())
    }

    fn compress(&mut self) {
        let band = self.band();
        // never merge away the minimum (index 0) or the maximum (last)
        let mut i = self.tuples.len().saturating_sub(2);
        while i >= 1 {
            let (cur, next) = (self.tuples[i], self.tuples[i + 1]);
            if cur.g + next.g + next.delta <= band {
                self.tuples[i + 1].g += cur.g;
                self.tuples.remove(i);
            }
            i -= 1;
        }
    }

    /// Value whose rank is within `epsilon * n` of `target_rank(q, n)`.
    pub fn query(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(invalid("q", format!("quantile must lie in [0, 1], got {q}")));
        }
        if self.count == 0 {
            return Err(Error::EmptySketch);
        }
        let n = self.count as f64;
        let target = target_rank(q, self.count) as f64;
        let slack = self.epsilon * n;
        let mut rmin = 0u64;
        let mut best = (f64::INFINITY, self.tuples[0].value);
        for t in &self.tuples {
            rmin += t.g;
            let rmax = rmin + t.delta;
            let err = (target - rmin as f64).max(rmax as f64 - target);
            if err <= slack {
                return Ok(t.value);
            }
            if err < best.0 {
                best = (err, t.value);
            }
        }
        Ok(best.1)
    }
}

/// 1-based rank answered for quantile `q`: `ceil(q n)`, at least 1.
pub fn target_rank(q: f64, n: u64) -> u64 {
    // tolerate representation error in q * n, e.g. 0.95 * 100
    ((q * n as f64 - 1e-9).ceil().max(1.0) as u64).min(n.max(1))
}

//! Lloyd-Max scalar quantizers for Gaussian marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Stop when no reconstruction level moves more than this (standardized units).
pub const LLOYD_TOLERANCE: f64 = 1e-9;
pub const LLOYD_MAX_ITERATIONS: usize = 10_000;

/// MSE-optimal scalar quantizer for a N(mean, std_dev²) marginal.
///
/// `boundaries` holds the L−1 interior decision levels; the outer decision
/// levels are −∞ and +∞. Cell `i` is the half-open interval
/// `(b(i), b(i+1)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizer {
    pub mean: f64,
    pub std_dev: f64,
    pub levels: Vec<f64>,
    pub boundaries: Vec<f64>,
}

/// Outcome of a Lloyd-Max run, including the MSE after every sweep.
#[derive(Debug, Clone)]
pub struct LloydMaxRun {
    pub quantizer: ScalarQuantizer,
    pub mse_trace: Vec<f64>,
    pub iterations: usize,
}

/// Designs an L-level Lloyd-Max quantizer for N(mean, variance).
pub fn design_lloyd_max(mean: f64, variance: f64, levels: usize) -> Result<ScalarQuantizer> {
    lloyd_max_run(mean, variance, levels).map(|run| run.quantizer)
}

/// Lloyd iteration starting from the Gaussian quantiles (i + ½)/L.
///
/// Each sweep sets interior boundaries to level midpoints and then moves every
/// level to its cell centroid using closed-form truncated-normal moments.
pub fn lloyd_max_run(mean: f64, variance: f64, levels: usize) -> Result<LloydMaxRun> {
    if levels == 0 {
        return Err(Error::Quantizer("quantizer needs at least one level".into()));
    }
    if !(variance > 0.0 && variance.is_finite()) || !mean.is_finite() {
        return Err(Error::Quantizer(format!(
            "invalid marginal N({mean}, {variance})"
        )));
    }
    let l = levels;
    let mut y: Vec<f64> = (0..l).map(|i| normal::quantile((i as f64 + 0.5) / l as f64)).collect();
    let mut b = vec![0.0; l.saturating_sub(1)];
    let mut mse_trace = Vec::new();
    let mut iterations = 0;

    while iterations < LLOYD_MAX_ITERATIONS {
        iterations += 1;
        for i in 0..b.len() {
            b[i] = 0.5 * (y[i] + y[i + 1]);
        }
        let mut moved: f64 = 0.0;
        let mut next = vec![0.0; l];
        for (i, slot) in next.iter_mut().enumerate() {
            let (lo, hi) = cell_edges(&b, i);
            let (p, m1, _) = normal::partial_moments(lo, hi);
            *slot = m1 / p;
        }
        // the standard normal is symmetric, keep the design exactly antisymmetric
        for i in 0..l / 2 {
            let v = 0.5 * (next[l - 1 - i] - next[i]);
            next[i] = -v;
            next[l - 1 - i] = v;
        }
        if l % 2 == 1 {
            next[l / 2] = 0.0;
        }
        for (old, new) in y.iter().zip(&next) {
            moved = moved.max((old - new).abs());
        }
        y = next;
        mse_trace.push(standardized_mse(&y, &b));
        if moved < LLOYD_TOLERANCE {
            break;
        }
    }
    for i in 0..b.len() {
        b[i] = 0.5 * (y[i] + y[i + 1]);
    }

    let s = variance.sqrt();
    let quantizer = ScalarQuantizer {
        mean,
        std_dev: s,
        levels: y.iter().map(|v| mean + s * v).collect(),
        boundaries: b.iter().map(|v| mean + s * v).collect(),
    };
    let mse_trace = mse_trace.into_iter().map(|m| m * variance).collect();
    Ok(LloydMaxRun { quantizer, mse_trace, iterations })
}

fn cell_edges(interior: &[f64], i: usize) -> (f64, f64) {
    let lo = if i == 0 { f64::NEG_INFINITY } else { interior[i - 1] };
    let hi = if i == interior.len() { f64::INFINITY } else { interior[i] };
    (lo, hi)
}

fn standardized_mse(levels: &[f64], interior: &[f64]) -> f64 {
    levels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let (lo, hi) = cell_edges(interior, i);
            let (p, m1, m2) = normal::partial_moments(lo, hi);
            (m2 - 2.0 * c * m1 + c * c * p).max(0.0)
        })
        .sum()
}

impl ScalarQuantizer {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// The unique cell index `i` with `b(i) < u ≤ b(i+1)`.
    pub fn quantize(&self, u: f64) -> Result<usize> {
        if u.is_nan() {
            return Err(Error::Quantizer("cannot quantize NaN".into()));
        }
        Ok(self.cell(u))
    }

    /// Cell lookup without the NaN check, for hot loops over sampled data.
    #[inline]
    pub fn cell(&self, u: f64) -> usize {
        self.boundaries.partition_point(|&b| b < u)
    }

    /// Decision levels `(b(i), b(i+1))` of cell `i`, including the infinite ones.
    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        cell_edges(&self.boundaries, i)
    }

    /// Probability of each cell under the design marginal.
    pub fn cell_probabilities(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (lo, hi) = self.standardized_bounds(i);
                normal::cell_mass(lo, hi)
            })
            .collect()
    }

    fn standardized_bounds(&self, i: usize) -> (f64, f64) {
        let (lo, hi) = self.cell_bounds(i);
        ((lo - self.mean) / self.std_dev, (hi - self.mean) / self.std_dev)
    }

    /// E{(U − Ũ)²} under the design marginal, from closed-form cell moments.
    pub fn mse(&self) -> f64 {
        let s = self.std_dev;
        (0..self.len())
            .map(|i| {
                let (lo, hi) = self.standardized_bounds(i);
                let c = (self.levels[i] - self.mean) / s;
                let (p, m1, m2) = normal::partial_moments(lo, hi);
                (m2 - 2.0 * c * m1 + c * c * p).max(0.0)
            })
            .sum::<f64>()
            * s
            * s
    }

    /// Checks ordering, level containment and finiteness.
    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        if l == 0 || self.boundaries.len() + 1 != l {
            return Err(Error::Quantizer(format!(
                "{} levels need {} interior boundaries, found {}",
                l,
                l.saturating_sub(1),
                self.boundaries.len()
            )));
        }
        if !(self.std_dev > 0.0) || self.levels.iter().chain(&self.boundaries).any(|v| !v.is_finite()) {
            return Err(Error::Quantizer("non-finite or degenerate quantizer parameters".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) || self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Quantizer("levels and boundaries must be strictly increasing".into()));
        }
        for i in 0..l {
            let (lo, hi) = self.cell_bounds(i);
            let y = self.levels[i];
            if !(lo < y && y <= hi) {
                return Err(Error::Quantizer(format!("level {i} lies outside its cell")));
            }
        }
        Ok(())
    }
}

/// Rate-R quantizer: exactly 2^R Lloyd-Max levels.
pub fn rate_quantizer(mean: f64, variance: f64, rate_bits: u32) -> Result<ScalarQuantizer> {
    design_lloyd_max(mean, variance, 1usize << rate_bits)
}

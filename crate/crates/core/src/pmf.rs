//! Discrete joint PMFs over quantizer-index tuples, estimated by Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_model::CovarianceModel;
use crate::quantizer::ScalarQuantizer;
use crate::rng;

/// Default cap on the number of cells in a dense PMF tensor.
pub const DEFAULT_CELL_CAP: usize = 10_000_000;
/// Default Monte Carlo sample count for design-time PMFs.
pub const DEFAULT_PMF_SAMPLES: usize = 1_000_000;

/// Tolerance for "sums to one".
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Dense row-major table p(i_S) over the ordered scope `S`; the last scope
/// entry varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPmf {
    pub scope: Vec<usize>,
    pub shape: Vec<usize>,
    pub table: Vec<f64>,
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Product of `shape` or `None` on overflow.
pub fn cell_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Parameters of one Monte Carlo PMF estimate.
#[derive(Debug, Clone, Copy)]
pub struct Estimation {
    pub samples: usize,
    pub seed: u64,
    /// Label separating this estimate's random stream from all others.
    pub stream: u64,
    pub cell_cap: usize,
}

impl Estimation {
    pub fn new(samples: usize, seed: u64, stream: u64) -> Self {
        Estimation { samples, seed, stream, cell_cap: DEFAULT_CELL_CAP }
    }
}

/// Estimates p(i_S) by quantizing samples of the Gaussian marginal over `scope`.
///
/// `quantizers` is indexed by source id. Counts receive additive smoothing
/// ε = 1/(n·cells) per cell before renormalization, so every entry is > 0.
pub fn estimate_joint_pmf(
    model: &CovarianceModel,
    quantizers: &[ScalarQuantizer],
    scope: &[usize],
    est: Estimation,
) -> Result<JointPmf> {
    if est.samples == 0 {
        return Err(Error::Pmf("PMF estimation needs at least one sample".into()));
    }
    if scope.is_empty() {
        return Err(Error::Pmf("PMF scope is empty".into()));
    }
    if let Some(&bad) = scope.iter().find(|&&s| s >= quantizers.len()) {
        return Err(Error::Pmf(format!("no quantizer for source {bad}")));
    }
    let shape: Vec<usize> = scope.iter().map(|&s| quantizers[s].len()).collect();
    let cells = cell_count(&shape).unwrap_or(usize::MAX);
    if cells > est.cell_cap {
        return Err(Error::Capacity { cells, cap: est.cell_cap });
    }
    let sampler = model.submodel(scope)?.sampler()?;
    let st = strides(&shape);
    let qs: Vec<&ScalarQuantizer> = scope.iter().map(|&s| &quantizers[s]).collect();
    let dim = scope.len();

    let batches: Vec<(u64, usize)> = rng::batches(est.samples).collect();
    let counts = batches
        .par_iter()
        .fold(
            || vec![0u64; cells],
            |mut acc, &(b, len)| {
                let mut r = rng::stream(est.seed, &[rng::PMF_STREAM, est.stream, b]);
                let mut buf = vec![0.0; len * dim];
                sampler.fill(&mut r, &mut buf);
                for u in buf.chunks_exact(dim) {
                    let idx: usize = u.iter().zip(&qs).zip(&st).map(|((&x, q), s)| q.cell(x) * s).sum();
                    acc[idx] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; cells],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let n = est.samples as f64;
    let eps = 1.0 / (n * cells as f64);
    let norm = 1.0 + 1.0 / n;
    let table = counts.iter().map(|&c| (c as f64 / n + eps) / norm).collect();
    Ok(JointPmf { scope: scope.to_vec(), shape, table })
}

impl JointPmf {
    /// Builds and validates a PMF from raw parts.
    pub fn from_parts(scope: Vec<usize>, shape: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        let pmf = JointPmf { scope, shape, table };
        pmf.validate()?;
        Ok(pmf)
    }

    /// The scalar PMF over the empty scope.
    pub fn unit() -> Self {
        JointPmf { scope: vec![], shape: vec![], table: vec![1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scope.len() != self.shape.len() {
            return Err(Error::Pmf("scope and shape lengths differ".into()));
        }
        if cell_count(&self.shape) != Some(self.table.len()) {
            return Err(Error::Pmf("table length does not match shape".into()));
        }
        if self.table.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Pmf("entries must be finite and non-negative".into()));
        }
        let total: f64 = self.table.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Pmf(format!("entries sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    /// Position of source `id` within the scope.
    pub fn axis_of(&self, id: usize) -> Option<usize> {
        self.scope.iter().position(|&s| s == id)
    }

    /// Flat index of an index tuple ordered like the scope.
    pub fn flat_index(&self, tuple: &[usize]) -> usize {
        tuple.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, tuple: &[usize]) -> f64 {
        self.table[self.flat_index(tuple)]
    }

    fn axes_of(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| {
                self.axis_of(id)
                    .ok_or_else(|| Error::Pmf(format!("source {id} is not in scope {:?}", self.scope)))
            })
            .collect()
    }
}

/// Sums out every axis not in `subset`; the result follows `subset`'s order.
pub fn marginalize(pmf: &JointPmf, subset: &[usize]) -> Result<JointPmf> {
    let axes = pmf.axes_of(subset)?;
    let mut seen = axes.clone();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Pmf("subset contains duplicates".into()));
    }
    let shape: Vec<usize> = axes.iter().map(|&a| pmf.shape[a]).collect();
    let out_strides = strides(&shape);
    // stride contributed by each input axis to the output index
    let mut map_stride = vec![0usize; pmf.shape.len()];
    for (k, &a) in axes.iter().enumerate() {
        map_stride[a] = out_strides[k];
    }
    let mut table = vec![0.0; cell_count(&shape).unwrap_or(0)];
    let mut tuple = vec![0usize; pmf.shape.len()];
    let mut out_idx = 0usize;
    for &p in &pmf.table {
        table[out_idx] += p;
        // odometer increment keeping the output index in sync
        for ax in (0..tuple.len()).rev() {
            tuple[ax] += 1;
            out_idx += map_stride[ax];
            if tuple[ax] < pmf.shape[ax] {
                break;
            }
            out_idx -= map_stride[ax] * tuple[ax];
            tuple[ax] = 0;
        }
    }
    Ok(JointPmf { scope: subset.to_vec(), shape, table })
}

/// Conditional table p(i_target | i_given).
///
/// The scope is `given` followed by `target`; for every configuration of the
/// given indices the slice over target indices sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPmf {
    pub given: Vec<usize>,
    pub target: Vec<usize>,
    pub shape: Vec<usize>,
    pub table: Vec<f64>,
}

impl ConditionalPmf {
    pub fn scope(&self) -> Vec<usize> {
        self.given.iter().chain(&self.target).copied().collect()
    }

    /// Number of target configurations per conditioning slice.
    pub fn slice_len(&self) -> usize {
        self.shape[self.given.len()..].iter().product()
    }
}

/// Forms p(i_target | i_given) = p(i_given, i_target) / p(i_given).
pub fn conditional_table(pmf: &JointPmf, target: &[usize], given: &[usize]) -> Result<ConditionalPmf> {
    if target.iter().any(|t| given.contains(t)) {
        return Err(Error::Pmf("target and given sets overlap".into()));
    }
    if target.is_empty() {
        return Err(Error::Pmf("conditional target is empty".into()));
    }
    let scope: Vec<usize> = given.iter().chain(target).copied().collect();
    let joint = marginalize(pmf, &scope)?;
    let slice: usize = joint.shape[given.len()..].iter().product();
    let mut table = joint.table;
    for chunk in table.chunks_mut(slice) {
        let total: f64 = chunk.iter().sum();
        if total > 0.0 {
            chunk.iter_mut().for_each(|v| *v /= total);
        } else {
            let u = 1.0 / slice as f64;
            chunk.iter_mut().for_each(|v| *v = u);
        }
    }
    Ok(ConditionalPmf { given: given.to_vec(), target: target.to_vec(), shape: joint.shape, table })
}

//! Index assignments (mapping vectors), the codeword-merging primitive and the
//! greedy index-reuse optimizer driven by the decoder-side distortion d_d.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::{cell_count, strides, JointPmf};
use crate::quantizer::ScalarQuantizer;

/// Surjective map from L quantizer indices onto K codewords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexAssignment {
    map: Vec<usize>,
    codewords: usize,
}

impl IndexAssignment {
    /// One-to-one mapping f = (0, 1, …, L−1).
    pub fn identity(levels: usize) -> Self {
        IndexAssignment { map: (0..levels).collect(), codewords: levels }
    }

    /// Validates that `map` is surjective onto {0, …, max(map)}.
    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::IndexAssign("mapping vector is empty".into()));
        }
        let codewords = map.iter().max().map_or(0, |m| m + 1);
        let mut hit = vec![false; codewords];
        map.iter().for_each(|&w| hit[w] = true);
        if let Some(w) = hit.iter().position(|h| !h) {
            return Err(Error::IndexAssign(format!("mapping is not surjective: codeword {w} has no preimage")));
        }
        Ok(IndexAssignment { map, codewords })
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// Input alphabet size L.
    pub fn levels(&self) -> usize {
        self.map.len()
    }

    /// Output alphabet size K.
    pub fn codewords(&self) -> usize {
        self.codewords
    }

    #[inline]
    pub fn encode(&self, index: usize) -> usize {
        self.map[index]
    }

    /// Q(w): indices mapped onto `w`, ascending.
    pub fn preimage(&self, w: usize) -> Vec<usize> {
        self.map.iter().enumerate().filter(|&(_, &m)| m == w).map(|(i, _)| i).collect()
    }

    pub fn preimages(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.codewords];
        for (i, &w) in self.map.iter().enumerate() {
            out[w].push(i);
        }
        out
    }

    /// F = L − K + 1, the largest preimage a surjective map can have.
    pub fn preimage_bound(&self) -> usize {
        self.levels() - self.codewords + 1
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &w)| i == w)
    }

    pub fn merge(&self, a: usize, b: usize) -> Result<IndexAssignment> {
        if !(a < b && b < self.codewords) {
            return Err(Error::IndexAssign(format!(
                "cannot merge codewords ({a}, {b}) of a {}-codeword mapping",
                self.codewords
            )));
        }
        Ok(IndexAssignment { map: merge_map(&self.map, a, b), codewords: self.codewords - 1 })
    }
}

fn merge_map(f: &[usize], a: usize, b: usize) -> Vec<usize> {
    f.iter()
        .map(|&w| {
            if w == a || w == b {
                a
            } else if w > b {
                w - 1
            } else {
                w
            }
        })
        .collect()
}

/// Merges codewords `a < b` of mapping vector `f`: both become `a` and every
/// codeword above `b` shifts down by one.
pub fn merge_codewords(f: &[usize], a: usize, b: usize) -> Result<Vec<usize>> {
    IndexAssignment::from_map(f.to_vec())?.merge(a, b).map(|e| e.map)
}

/// One committed step of the index-reuse optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub encoder: usize,
    pub a: usize,
    pub b: usize,
    /// d_d(Ψ) after the merge.
    pub d_d: f64,
}

/// Jointly designed index assignments for the encoders Ω of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCodeDesign {
    /// Ω, ascending source ids.
    pub encoders: Vec<usize>,
    /// Ψ, the sources whose distortion is minimized.
    pub targets: Vec<usize>,
    pub levels: usize,
    pub codewords: usize,
    /// One assignment per encoder, aligned with `encoders`.
    pub assignments: Vec<IndexAssignment>,
    pub history: Vec<MergeStep>,
    pub d_q: f64,
    pub d_d: f64,
}

impl ClusterCodeDesign {
    pub fn assignment_of(&self, source: usize) -> Option<&IndexAssignment> {
        self.encoders.iter().position(|&e| e == source).map(|p| &self.assignments[p])
    }
}

/// Sufficient statistics of d_d at the level of quantizer-index tuples over Ω.
///
/// For every index tuple i_Ω it stores P(i_Ω) and, per target n ∈ Ψ,
/// M_n(i_Ω) = Σ p(i) ũ_{n,i_n} with all other PMF axes summed out. With those,
/// d_d(Ψ) = Σ_n (E{Ũ_n²} − Σ_w M_n(w)² / P(w)), where the sums over codeword
/// tuples w aggregate the index tuples in each preimage set.
struct DistortionStats {
    /// Alphabet size of each encoder axis.
    shape: Vec<usize>,
    /// Interleaved channels per cell: `[P, M_1, …, M_|Ψ|]`.
    cells: Vec<f64>,
    channels: usize,
    second_moment: f64,
}

impl DistortionStats {
    fn new(
        pmf: &JointPmf,
        quantizers: &[ScalarQuantizer],
        encoders: &[usize],
        targets: &[usize],
    ) -> Result<Self> {
        let enc_axes = axes(pmf, encoders)?;
        let tgt_axes = axes(pmf, targets)?;
        for (&t, &ax) in targets.iter().zip(&tgt_axes) {
            let q = quantizers
                .get(t)
                .ok_or_else(|| Error::IndexAssign(format!("no quantizer for target {t}")))?;
            if q.len() != pmf.shape[ax] {
                return Err(Error::IndexAssign(format!(
                    "quantizer of source {t} has {} levels but the PMF axis has {}",
                    q.len(),
                    pmf.shape[ax]
                )));
            }
        }
        let shape: Vec<usize> = enc_axes.iter().map(|&a| pmf.shape[a]).collect();
        let channels = targets.len() + 1;
        let n_cells = cell_count(&shape).unwrap_or(0);
        let mut cells = vec![0.0; n_cells * channels];
        let enc_strides = strides(&shape);
        let mut map_stride = vec![0usize; pmf.shape.len()];
        for (k, &a) in enc_axes.iter().enumerate() {
            map_stride[a] = enc_strides[k];
        }
        let levels: Vec<&[f64]> = targets.iter().map(|&t| quantizers[t].levels.as_slice()).collect();

        let mut second_moment = 0.0;
        let mut tuple = vec![0usize; pmf.shape.len()];
        let mut idx = 0usize;
        for &p in &pmf.table {
            let base = idx * channels;
            cells[base] += p;
            for (c, (&ax, lv)) in tgt_axes.iter().zip(&levels).enumerate() {
                let u = lv[tuple[ax]];
                cells[base + 1 + c] += p * u;
                second_moment += p * u * u;
            }
            for ax in (0..tuple.len()).rev() {
                tuple[ax] += 1;
                idx += map_stride[ax];
                if tuple[ax] < pmf.shape[ax] {
                    break;
                }
                idx -= map_stride[ax] * tuple[ax];
                tuple[ax] = 0;
            }
        }
        Ok(DistortionStats { shape, cells, channels, second_moment })
    }

    /// Aggregates index-tuple statistics into codeword-tuple statistics.
    fn codeword_tensor(&self, assignments: &[IndexAssignment]) -> CodewordTensor {
        let cw_shape: Vec<usize> = assignments.iter().map(IndexAssignment::codewords).collect();
        let cw_strides = strides(&cw_shape);
        let contrib: Vec<Vec<usize>> = assignments
            .iter()
            .zip(&cw_strides)
            .map(|(a, &s)| a.map().iter().map(|&w| w * s).collect())
            .collect();
        let c = self.channels;
        let mut cells = vec![0.0; cell_count(&cw_shape).unwrap_or(0) * c];
        let mut tuple = vec![0usize; self.shape.len()];
        let mut w_idx: usize = contrib.iter().map(|v| v[0]).sum();
        for chunk in self.cells.chunks_exact(c) {
            let dst = &mut cells[w_idx * c..(w_idx + 1) * c];
            dst.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
            for ax in (0..tuple.len()).rev() {
                w_idx -= contrib[ax][tuple[ax]];
                tuple[ax] += 1;
                if tuple[ax] < self.shape[ax] {
                    w_idx += contrib[ax][tuple[ax]];
                    break;
                }
                tuple[ax] = 0;
                w_idx += contrib[ax][0];
            }
        }
        CodewordTensor { shape: cw_shape, cells, channels: c }
    }

    fn d_d(&self, tensor: &CodewordTensor) -> f64 {
        (self.second_moment - tensor.explained()).max(0.0)
    }
}

struct CodewordTensor {
    shape: Vec<usize>,
    cells: Vec<f64>,
    channels: usize,
}

#[inline]
fn explained_term(cell: &[f64]) -> f64 {
    let p = cell[0];
    if p <= 0.0 {
        return 0.0;
    }
    cell[1..].iter().map(|m| m * m).sum::<f64>() / p
}

impl CodewordTensor {
    /// Σ_w Σ_n M_n(w)² / P(w).
    fn explained(&self) -> f64 {
        self.cells.chunks_exact(self.channels).map(explained_term).sum()
    }

    /// Change of `explained()` if codewords `a` and `b` of axis `axis` merge (≤ 0).
    fn merge_gain(&self, axis: usize, a: usize, b: usize, scratch: &mut Vec<f64>) -> f64 {
        let c = self.channels;
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let k = self.shape[axis];
        scratch.resize(c, 0.0);
        let mut gain = 0.0;
        for o in 0..outer {
            for r in 0..inner {
                let ia = ((o * k + a) * inner + r) * c;
                let ib = ((o * k + b) * inner + r) * c;
                let ca = &self.cells[ia..ia + c];
                let cb = &self.cells[ib..ib + c];
                for ((s, x), y) in scratch.iter_mut().zip(ca).zip(cb) {
                    *s = x + y;
                }
                gain += explained_term(scratch) - explained_term(ca) - explained_term(cb);
            }
        }
        gain
    }
}

fn axes(pmf: &JointPmf, ids: &[usize]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|&id| {
            pmf.axis_of(id)
                .ok_or_else(|| Error::IndexAssign(format!("source {id} is not covered by the PMF")))
        })
        .collect()
}

fn check_assignments(pmf: &JointPmf, encoders: &[usize], assignments: &[IndexAssignment]) -> Result<()> {
    if encoders.len() != assignments.len() {
        return Err(Error::IndexAssign(format!(
            "{} encoders but {} assignments",
            encoders.len(),
            assignments.len()
        )));
    }
    for (&e, a) in encoders.iter().zip(assignments) {
        let ax = pmf
            .axis_of(e)
            .ok_or_else(|| Error::IndexAssign(format!("encoder {e} is not covered by the PMF")))?;
        if a.levels() != pmf.shape[ax] {
            return Err(Error::IndexAssign(format!(
                "assignment of encoder {e} has {} inputs, PMF axis has {}",
                a.levels(),
                pmf.shape[ax]
            )));
        }
    }
    Ok(())
}

/// d_d(Ψ) = Σ_{n∈Ψ} Σ_i p(i) (û_n(w_Ω) − ũ_{n,i_n})² with CME estimates
/// computed from the codewords of all encoders Ω.
pub fn distortion_dd(
    pmf: &JointPmf,
    quantizers: &[ScalarQuantizer],
    encoders: &[usize],
    targets: &[usize],
    assignments: &[IndexAssignment],
) -> Result<f64> {
    check_assignments(pmf, encoders, assignments)?;
    let stats = DistortionStats::new(pmf, quantizers, encoders, targets)?;
    Ok(stats.d_d(&stats.codeword_tensor(assignments)))
}

/// d_q(Ψ), d_d(Ψ) and their sum d(Ψ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSplit {
    pub d_q: f64,
    pub d_d: f64,
    pub d: f64,
}

pub fn total_distortion(design: &ClusterCodeDesign, quantizers: &[ScalarQuantizer]) -> DistortionSplit {
    let d_q = design.targets.iter().map(|&t| quantizers[t].mse()).sum();
    DistortionSplit { d_q, d_d: design.d_d, d: d_q + design.d_d }
}

/// Greedy index-reuse optimization.
///
/// Starting from one-to-one mappings over L levels, every pass lets each
/// encoder of Ω (ascending id) commit the single merge (a, b) that yields the
/// smallest d_d(Ψ) given the other encoders' current mappings. A candidate
/// replaces the incumbent only when strictly better, so the first minimum in
/// (a, b) lexicographic order wins. Passes repeat until every encoder has
/// `k_target` codewords.
pub fn optimize_index_reuse(
    pmf: &JointPmf,
    quantizers: &[ScalarQuantizer],
    encoders: &[usize],
    targets: &[usize],
    k_target: usize,
) -> Result<ClusterCodeDesign> {
    if encoders.is_empty() {
        return Err(Error::IndexAssign("cluster has no encoders".into()));
    }
    let mut sorted = encoders.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != encoders.len() {
        return Err(Error::IndexAssign("duplicate encoder ids".into()));
    }
    let enc_axes = axes(pmf, &sorted)?;
    let levels = pmf.shape[enc_axes[0]];
    if enc_axes.iter().any(|&a| pmf.shape[a] != levels) {
        return Err(Error::IndexAssign("all encoders of a cluster must share L".into()));
    }
    if k_target == 0 || k_target > levels {
        return Err(Error::IndexAssign(format!("infeasible target of {k_target} codewords for L={levels}")));
    }
    let stats = DistortionStats::new(pmf, quantizers, &sorted, targets)?;
    let mut assignments = vec![IndexAssignment::identity(levels); sorted.len()];
    let mut d_cur = stats.d_d(&stats.codeword_tensor(&assignments));
    let mut history = Vec::new();
    let mut scratch = Vec::new();

    let mut k = levels;
    while k > k_target {
        for j in 0..sorted.len() {
            let tensor = stats.codeword_tensor(&assignments);
            let mut best: Option<(usize, usize)> = None;
            let mut d_best = f64::INFINITY;
            for a in 0..k - 1 {
                for b in a + 1..k {
                    let d = d_cur - tensor.merge_gain(j, a, b, &mut scratch);
                    if d < d_best {
                        d_best = d;
                        best = Some((a, b));
                    }
                }
            }
            let (a, b) = best.ok_or_else(|| Error::IndexAssign("no finite merge candidate".into()))?;
            assignments[j] = assignments[j].merge(a, b)?;
            d_cur = stats.d_d(&stats.codeword_tensor(&assignments));
            history.push(MergeStep { encoder: sorted[j], a, b, d_d: d_cur });
        }
        k -= 1;
    }
    let d_q = targets.iter().map(|&t| quantizers[t].mse()).sum();
    Ok(ClusterCodeDesign {
        encoders: sorted,
        targets: targets.to_vec(),
        levels,
        codewords: k_target,
        assignments,
        history,
        d_q,
        d_d: d_cur,
    })
}

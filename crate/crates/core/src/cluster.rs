//! KLD-optimized hierarchical clustering of sources and dendrogram pruning.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_model::CovarianceModel;

/// log₂|R_S| of the correlation submatrix over `set`, normalizing the
/// covariance so that non-unit variances do not enter the KLD terms.
pub fn log2_det_correlation(model: &CovarianceModel, set: &[usize]) -> Result<f64> {
    let ln_cov = model.log_det_submatrix(set)?;
    let ln_var: f64 = set.iter().map(|&i| model.variance(i).ln()).sum();
    Ok((ln_cov - ln_var) / std::f64::consts::LN_2)
}

/// ΔD(S, ∅) = ½·log₂|R_S| in bits.
pub fn delta_kld_cluster(model: &CovarianceModel, set: &[usize]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Cluster("KLD term of an empty set".into()));
    }
    if set.len() == 1 {
        return Ok(0.0);
    }
    Ok(0.5 * log2_det_correlation(model, set)?)
}

/// ΔD(S, B) = ½·log₂(|R_S| / |R_B|) for B ⊆ S; the empty B contributes 1.
pub fn delta_kld(model: &CovarianceModel, s: &[usize], b: &[usize]) -> Result<f64> {
    let num = if s.len() <= 1 { 0.0 } else { log2_det_correlation(model, s)? };
    let den = if b.len() <= 1 { 0.0 } else { log2_det_correlation(model, b)? };
    Ok(0.5 * (num - den))
}

fn disjoint_union(k: &[usize], l: &[usize]) -> Result<Vec<usize>> {
    if k.is_empty() || l.is_empty() {
        return Err(Error::Cluster("merge of an empty cluster".into()));
    }
    if k.iter().any(|x| l.contains(x)) {
        return Err(Error::Cluster("merged clusters overlap".into()));
    }
    let mut u: Vec<usize> = k.iter().chain(l).copied().collect();
    u.sort_unstable();
    Ok(u)
}

/// ΔD′ = ΔD(Λ_k ∪ Λ_l) − ΔD(Λ_k) − ΔD(Λ_l), the differential benefit of a merge.
pub fn delta_kld_merge(model: &CovarianceModel, k: &[usize], l: &[usize]) -> Result<f64> {
    let u = disjoint_union(k, l)?;
    Ok(delta_kld_cluster(model, &u)? - delta_kld_cluster(model, k)? - delta_kld_cluster(model, l)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub id: usize,
    /// ΔD′ of the merge in bits (≤ 0).
    pub delta_bits: f64,
}

/// Merge history over leaves 0..N−1; merge t creates node N + t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn root(&self) -> usize {
        if self.merges.is_empty() {
            0
        } else {
            self.n_leaves + self.merges.len() - 1
        }
    }

    fn children(&self, node: usize) -> Option<(usize, usize)> {
        node.checked_sub(self.n_leaves)
            .and_then(|t| self.merges.get(t))
            .map(|m| (m.left, m.right))
    }

    /// Leaves under `node`, ascending.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.children(v) {
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
                None => out.push(v),
            }
        }
        out.sort_unstable();
        out
    }

    /// Checks merge count, fresh ids and single use of every child.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_leaves;
        if n == 0 || self.merges.len() != n - 1 {
            return Err(Error::Invariant {
                invariant: "dendrogram has N-1 merges",
                detail: format!("{} merges for {} leaves", self.merges.len(), n),
            });
        }
        let mut used = vec![false; 2 * n - 1];
        for (t, m) in self.merges.iter().enumerate() {
            let ok = m.id == n + t
                && m.left < m.id
                && m.right < m.id
                && m.left != m.right
                && !used[m.left]
                && !used[m.right]
                && m.delta_bits.is_finite();
            if !ok {
                return Err(Error::Invariant {
                    invariant: "dendrogram merges consume each id once",
                    detail: format!("merge {t}: {m:?}"),
                });
            }
            used[m.left] = true;
            used[m.right] = true;
        }
        Ok(())
    }

    /// Merge tree in DOT with |ΔD′| edge labels.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph dendrogram {\n  node [shape=circle];\n");
        for leaf in 0..self.n_leaves {
            let _ = writeln!(s, "  n{leaf} [label=\"{leaf}\", shape=box];");
        }
        for m in &self.merges {
            let _ = writeln!(s, "  n{} [label=\"\", shape=point];", m.id);
            for c in [m.left, m.right] {
                let _ = writeln!(s, "  n{} -> n{} [label=\"{:.3}\"];", m.id, c, m.delta_bits.abs());
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Agglomerative clustering that always merges the pair of current clusters
/// with the largest |ΔD′|; ties go to the lexicographically smallest id pair.
pub fn build_dendrogram(model: &CovarianceModel) -> Result<Dendrogram> {
    let n = model.n_sources();
    if n == 0 {
        return Err(Error::Cluster("model has no sources".into()));
    }
    // live clusters: id -> (members, ΔD of the cluster)
    let mut live: Vec<(usize, Vec<usize>, f64)> = (0..n).map(|i| (i, vec![i], 0.0)).collect();
    let mut pair_cache: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
    let mut merges = Vec::with_capacity(n - 1);

    while live.len() > 1 {
        let mut best: Option<(usize, usize, f64, f64)> = None;
        for x in 0..live.len() {
            for y in x + 1..live.len() {
                let (ka, ma, da) = &live[x];
                let (kb, mb, db) = &live[y];
                let key = (*ka, *kb);
                let (delta, joint) = match pair_cache.get(&key) {
                    Some(&v) => v,
                    None => {
                        let u = disjoint_union(ma, mb)?;
                        let joint = delta_kld_cluster(model, &u)?;
                        let v = (joint - da - db, joint);
                        pair_cache.insert(key, v);
                        v
                    }
                };
                if best.is_none_or(|(_, _, bd, _)| delta.abs() > bd.abs()) {
                    best = Some((x, y, delta, joint));
                }
            }
        }
        let (x, y, delta, joint) = best.expect("at least two live clusters");
        let id = n + merges.len();
        let (kb, mb, _) = live.remove(y);
        let (ka, ma, _) = live.remove(x);
        pair_cache.retain(|&(a, b), _| a != ka && a != kb && b != ka && b != kb);
        merges.push(Merge { left: ka, right: kb, id, delta_bits: delta });
        let members = disjoint_union(&ma, &mb)?;
        // new id exceeds every live id, so the live list stays sorted by id
        live.push((id, members, joint));
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

/// Disjoint source clusters of bounded size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub clusters: Vec<Vec<usize>>,
    pub max_size: usize,
    /// D(p‖p̌) of the product of cluster marginals, in bits.
    pub kld_bits: f64,
}

impl ClusterPlan {
    pub fn n_sources(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Cluster index of every source.
    pub fn membership(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_sources()];
        for (c, members) in self.clusters.iter().enumerate() {
            for &m in members {
                if m < out.len() {
                    out[m] = c;
                }
            }
        }
        out
    }

    /// Partition of 0..N−1 into non-empty clusters of size ≤ S.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for c in &self.clusters {
            if c.is_empty() || c.len() > self.max_size {
                return Err(Error::Invariant {
                    invariant: "cluster sizes within 1..=S",
                    detail: format!("cluster {c:?} with S={}", self.max_size),
                });
            }
            for &m in c {
                if m >= n || seen[m] {
                    return Err(Error::Invariant {
                        invariant: "clusters partition the sources",
                        detail: format!("source {m} repeated or out of range"),
                    });
                }
                seen[m] = true;
            }
        }
        if let Some(m) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant {
                invariant: "clusters partition the sources",
                detail: format!("source {m} is not covered"),
            });
        }
        Ok(())
    }
}

/// −½·log₂|R| + Σ_c ΔD(Λ_c).
pub fn plan_kld(model: &CovarianceModel, clusters: &[Vec<usize>]) -> Result<f64> {
    let all: Vec<usize> = (0..model.n_sources()).collect();
    let mut kld = -delta_kld_cluster(model, &all)?;
    for c in clusters {
        kld += delta_kld_cluster(model, c)?;
    }
    Ok(kld)
}

/// Top-down pruning: any subtree with at most S leaves is cut as a cluster,
/// visiting left children first.
pub fn prune(model: &CovarianceModel, dendrogram: &Dendrogram, max_size: usize) -> Result<ClusterPlan> {
    if max_size == 0 {
        return Err(Error::Cluster("cluster size cap must be at least 1".into()));
    }
    dendrogram.validate()?;
    let mut clusters = Vec::new();
    let mut stack = vec![dendrogram.root()];
    while let Some(node) = stack.pop() {
        let leaves = dendrogram.leaves(node);
        if leaves.len() <= max_size {
            clusters.push(leaves);
        } else if let Some((a, b)) = dendrogram.children(node) {
            stack.push(b);
            stack.push(a);
        }
    }
    let kld_bits = plan_kld(model, &clusters)?;
    Ok(ClusterPlan { clusters, max_size, kld_bits })
}

/// Dendrogram followed by pruning to clusters of at most `max_size` sources.
pub fn cluster_sources(model: &CovarianceModel, max_size: usize) -> Result<(Dendrogram, ClusterPlan)> {
    let d = build_dendrogram(model)?;
    let plan = prune(model, &d, max_size)?;
    Ok((d, plan))
}

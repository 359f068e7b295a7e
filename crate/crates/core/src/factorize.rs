//! Linking clusters into a symmetric constrained chain rule expansion (CCRE):
//! link costs, minimum directed spanning trees and the resulting factorization.

use std::fmt::Write as _;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::cluster::{delta_kld, delta_kld_cluster, ClusterPlan};
use crate::error::{Error, Result};
use crate::gauss_model::CovarianceModel;

/// Factor p(u_A | u_B).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcreFactor {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl CcreFactor {
    /// S_m = B_m followed by A_m; conditional tables use this axis order.
    pub fn scope(&self) -> Vec<usize> {
        self.b.iter().chain(&self.a).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ccre {
    pub factors: Vec<CcreFactor>,
}

impl Ccre {
    /// CCRE conditions, symmetry, scope-size cap and factor-count bound.
    pub fn validate(&self, n: usize, max_scope: usize) -> Result<()> {
        let fail = |invariant: &'static str, detail: String| Err(Error::Invariant { invariant, detail });
        let mut covered = vec![false; n];
        for (m, f) in self.factors.iter().enumerate() {
            if f.a.is_empty() {
                return fail("CCRE factors have non-empty A", format!("factor {m}"));
            }
            if f.a.iter().any(|x| f.b.contains(x)) {
                return fail("CCRE A and B are disjoint", format!("factor {m}"));
            }
            if f.b.iter().any(|&x| x >= n || !covered[x]) {
                return fail("CCRE conditioning on earlier variables", format!("factor {m}: B={:?}", f.b));
            }
            if !f.b.is_empty() {
                let symmetric = self.factors[..m]
                    .iter()
                    .any(|prev| f.b.iter().all(|x| prev.a.contains(x) || prev.b.contains(x)));
                if !symmetric {
                    return fail("CCRE is symmetric", format!("factor {m}: B={:?}", f.b));
                }
            }
            if f.a.len() + f.b.len() > max_scope {
                return fail("CCRE factor scope within cap", format!("factor {m} has {} variables", f.a.len() + f.b.len()));
            }
            for &x in &f.a {
                if x >= n || covered[x] {
                    return fail("CCRE A sets partition the sources", format!("source {x} in factor {m}"));
                }
                covered[x] = true;
            }
        }
        if let Some(x) = covered.iter().position(|c| !c) {
            return fail("CCRE A sets partition the sources", format!("source {x} never appears in an A set"));
        }
        if self.factors.len() > 2 * n + 1 {
            return fail("CCRE factor count at most 2N+1", format!("{} factors", self.factors.len()));
        }
        Ok(())
    }

    /// True when every conditioning set has at most one variable, which makes
    /// the factor graph of a tree-linked CCRE cycle-free.
    pub fn has_singleton_conditioning(&self) -> bool {
        self.factors.iter().all(|f| f.b.len() <= 1)
    }

    /// Bipartite factor graph in DOT.
    pub fn to_dot(&self, n: usize) -> String {
        let mut s = String::from("graph factors {\n");
        for v in 0..n {
            let _ = writeln!(s, "  u{v} [label=\"{v}\", shape=circle];");
        }
        for (m, f) in self.factors.iter().enumerate() {
            let _ = writeln!(s, "  f{m} [label=\"f{m}\", shape=box];");
            for v in f.scope() {
                let _ = writeln!(s, "  f{m} -- u{v};");
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Optimal bridge sets for a link k → l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCost {
    /// ΔD* in bits (≤ 0).
    pub cost: f64,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
}

/// Searches all P ⊆ Λ_k with |P| = min(A, |Λ_k|) and Q ⊆ Λ_l with
/// |Q| = min(B, |Λ_l|) for the smallest ΔD*(P, Q).
pub fn link_cost(model: &CovarianceModel, lk: &[usize], ll: &[usize], a: usize, b: usize) -> Result<LinkCost> {
    if lk.is_empty() || ll.is_empty() {
        return Err(Error::Factorize("link between empty clusters".into()));
    }
    if a == 0 || b == 0 {
        return Err(Error::Factorize("link subset sizes must be at least 1".into()));
    }
    if lk.iter().any(|x| ll.contains(x)) {
        return Err(Error::Factorize("linked clusters overlap".into()));
    }
    let mut sk = lk.to_vec();
    sk.sort_unstable();
    let mut sl = ll.to_vec();
    sl.sort_unstable();
    let q_sets: Vec<Vec<usize>> = sl.iter().copied().combinations(b.min(sl.len())).collect();
    let q_terms: Vec<f64> = q_sets.iter().map(|q| delta_kld_cluster(model, q)).collect::<Result<_>>()?;
    let mut best: Option<LinkCost> = None;
    for p in sk.iter().copied().combinations(a.min(sk.len())) {
        let dp = delta_kld_cluster(model, &p)?;
        for (q, dq) in q_sets.iter().zip(&q_terms) {
            let mut pq: Vec<usize> = p.iter().chain(q).copied().collect();
            pq.sort_unstable();
            let cost = delta_kld_cluster(model, &pq)? - dp - dq;
            if best.as_ref().is_none_or(|b| cost < b.cost) {
                best = Some(LinkCost { cost, p: p.clone(), q: q.clone() });
            }
        }
    }
    Ok(best.expect("non-empty subset families"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEdge {
    pub from: usize,
    pub to: usize,
    pub link: LinkCost,
}

/// Complete digraph over clusters with link costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGraph {
    pub n_clusters: usize,
    /// Ordered by (from, to).
    pub edges: Vec<LinkEdge>,
}

impl LinkGraph {
    pub fn edge(&self, from: usize, to: usize) -> Option<&LinkEdge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn from_costs(costs: &[Vec<f64>]) -> Self {
        let c = costs.len();
        let edges = (0..c)
            .flat_map(|k| (0..c).filter(move |&l| l != k).map(move |l| (k, l)))
            .map(|(k, l)| LinkEdge { from: k, to: l, link: LinkCost { cost: costs[k][l], p: vec![], q: vec![] } })
            .collect();
        LinkGraph { n_clusters: c, edges }
    }
}

pub fn build_link_graph(model: &CovarianceModel, plan: &ClusterPlan, a: usize, b: usize) -> Result<LinkGraph> {
    let c = plan.clusters.len();
    let mut edges = Vec::with_capacity(c * c.saturating_sub(1));
    for k in 0..c {
        for l in 0..c {
            if k != l {
                let link = link_cost(model, &plan.clusters[k], &plan.clusters[l], a, b)?;
                edges.push(LinkEdge { from: k, to: l, link });
            }
        }
    }
    Ok(LinkGraph { n_clusters: c, edges })
}

/// Rooted spanning arborescence as parent links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningTree {
    pub root: usize,
    /// Edges (parent, child), sorted.
    pub edges: Vec<(usize, usize)>,
    pub cost: f64,
}

#[derive(Clone, Copy)]
struct RawEdge {
    u: usize,
    v: usize,
    w: f64,
}

/// Chu-Liu/Edmonds: indices into `edges` of a minimum arborescence rooted at `root`.
fn edmonds(n: usize, root: usize, edges: &[RawEdge]) -> Option<Vec<usize>> {
    let mut best_in: Vec<Option<usize>> = vec![None; n];
    for (i, e) in edges.iter().enumerate() {
        if e.u == e.v || e.v == root {
            continue;
        }
        let better = match best_in[e.v] {
            None => true,
            Some(j) => {
                let f = &edges[j];
                e.w < f.w || (e.w == f.w && e.u < f.u)
            }
        };
        if better {
            best_in[e.v] = Some(i);
        }
    }
    if (0..n).any(|v| v != root && best_in[v].is_none()) {
        return None;
    }

    // cycle detection among the chosen in-edges
    let mut comp = vec![usize::MAX; n];
    let mut mark = vec![usize::MAX; n];
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        let mut v = start;
        while v != root && mark[v] == usize::MAX && comp[v] == usize::MAX {
            mark[v] = start;
            v = edges[best_in[v].unwrap()].u;
        }
        if v != root && mark[v] == start && comp[v] == usize::MAX {
            let mut cyc = vec![v];
            let mut x = edges[best_in[v].unwrap()].u;
            while x != v {
                cyc.push(x);
                x = edges[best_in[x].unwrap()].u;
            }
            let id = cycles.len();
            for &c in &cyc {
                comp[c] = id;
            }
            cycles.push(cyc);
        }
    }
    if cycles.is_empty() {
        return Some((0..n).filter(|&v| v != root).map(|v| best_in[v].unwrap()).collect());
    }

    // contract: cycles become nodes 0..k, remaining vertices follow
    let k = cycles.len();
    let mut node = vec![0usize; n];
    let mut next = k;
    for v in 0..n {
        node[v] = if comp[v] != usize::MAX {
            comp[v]
        } else {
            next += 1;
            next - 1
        };
    }
    let mut sub_edges = Vec::new();
    let mut origin = Vec::new();
    for (i, e) in edges.iter().enumerate() {
        let (cu, cv) = (node[e.u], node[e.v]);
        if cu == cv {
            continue;
        }
        let w = if comp[e.v] != usize::MAX { e.w - edges[best_in[e.v].unwrap()].w } else { e.w };
        sub_edges.push(RawEdge { u: cu, v: cv, w });
        origin.push(i);
    }
    let chosen = edmonds(next, node[root], &sub_edges)?;
    let mut result = Vec::new();
    let mut entered = vec![None; k];
    for s in chosen {
        let i = origin[s];
        result.push(i);
        if comp[edges[i].v] != usize::MAX {
            entered[comp[edges[i].v]] = Some(edges[i].v);
        }
    }
    for (c, cyc) in cycles.iter().enumerate() {
        let entry = entered[c]?;
        for &v in cyc {
            if v != entry {
                result.push(best_in[v].unwrap());
            }
        }
    }
    Some(result)
}

/// Minimum arborescence for a given root.
pub fn arborescence(graph: &LinkGraph, root: usize) -> Result<SpanningTree> {
    let n = graph.n_clusters;
    if root >= n {
        return Err(Error::Factorize(format!("root {root} out of range")));
    }
    let raw: Vec<RawEdge> = graph.edges.iter().map(|e| RawEdge { u: e.from, v: e.to, w: e.link.cost }).collect();
    let chosen = edmonds(n, root, &raw).ok_or_else(|| Error::Factorize("graph admits no spanning arborescence".into()))?;
    let mut edges: Vec<(usize, usize)> = chosen.iter().map(|&i| (raw[i].u, raw[i].v)).collect();
    edges.sort_unstable();
    let cost = chosen.iter().map(|&i| raw[i].w).sum();
    Ok(SpanningTree { root, edges, cost })
}

/// Minimum directed spanning tree over all roots; ties go to the lowest root.
pub fn mdst(graph: &LinkGraph) -> Result<SpanningTree> {
    if graph.n_clusters == 0 {
        return Err(Error::Factorize("no clusters to link".into()));
    }
    let mut best: Option<SpanningTree> = None;
    for r in 0..graph.n_clusters {
        let t = arborescence(graph, r)?;
        if best.as_ref().is_none_or(|b| t.cost < b.cost - 1e-12 * b.cost.abs().max(1.0)) {
            best = Some(t);
        }
    }
    Ok(best.unwrap())
}

/// Depth-first walk of the tree (children ascending) emitting the cluster
/// factor of the root and, per edge k → l, p(u_Q | u_P) and p(u_{Λ_l∖Q} | u_Q).
pub fn build_factorization(plan: &ClusterPlan, graph: &LinkGraph, tree: &SpanningTree) -> Result<Ccre> {
    let c = plan.clusters.len();
    if tree.edges.len() + 1 != c {
        return Err(Error::Factorize(format!("tree has {} edges for {c} clusters", tree.edges.len())));
    }
    let mut children = vec![Vec::new(); c];
    for &(k, l) in &tree.edges {
        children[k].push(l);
    }
    children.iter_mut().for_each(|ch| ch.sort_unstable());
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    let mut factors = vec![CcreFactor { a: sorted(&plan.clusters[tree.root]), b: vec![] }];
    let mut visited = vec![false; c];
    visited[tree.root] = true;
    let mut stack: Vec<usize> = children[tree.root].iter().rev().copied().collect();
    let mut parent = vec![usize::MAX; c];
    for &(k, l) in &tree.edges {
        parent[l] = k;
    }
    while let Some(l) = stack.pop() {
        if visited[l] {
            return Err(Error::Factorize("tree revisits a cluster".into()));
        }
        visited[l] = true;
        let k = parent[l];
        let edge = graph
            .edge(k, l)
            .ok_or_else(|| Error::Factorize(format!("tree edge {k}->{l} missing from the link graph")))?;
        let q = sorted(&edge.link.q);
        factors.push(CcreFactor { a: q.clone(), b: sorted(&edge.link.p) });
        let rest: Vec<usize> = sorted(&plan.clusters[l]).into_iter().filter(|x| !q.contains(x)).collect();
        if !rest.is_empty() {
            factors.push(CcreFactor { a: rest, b: q });
        }
        stack.extend(children[l].iter().rev());
    }
    if visited.iter().any(|v| !v) {
        return Err(Error::Factorize("tree is not spanning".into()));
    }
    Ok(Ccre { factors })
}

/// D(p‖p̂) = −½·log₂|R| + Σ_m ΔD(S_m, B_m) in bits.
pub fn factorization_kld(model: &CovarianceModel, ccre: &Ccre) -> Result<f64> {
    let all: Vec<usize> = (0..model.n_sources()).collect();
    let mut kld = -delta_kld_cluster(model, &all)?;
    for f in &ccre.factors {
        let mut s = f.scope();
        s.sort_unstable();
        kld += delta_kld(model, &s, &f.b)?;
    }
    Ok(kld)
}

/// D(p‖p̌) + Σ c_{k,l} over tree edges.
pub fn decoupled_kld(plan: &ClusterPlan, graph: &LinkGraph, tree: &SpanningTree) -> Result<f64> {
    let mut kld = plan.kld_bits;
    for &(k, l) in &tree.edges {
        kld += graph
            .edge(k, l)
            .ok_or_else(|| Error::Factorize(format!("edge {k}->{l} missing")))?
            .link
            .cost;
    }
    Ok(kld)
}

/// Plan, link graph, tree and CCRE for given subset caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub graph: LinkGraph,
    pub tree: SpanningTree,
    pub ccre: Ccre,
    pub kld_bits: f64,
}

pub fn factorize(model: &CovarianceModel, plan: &ClusterPlan, a: usize, b: usize) -> Result<Factorization> {
    let graph = build_link_graph(model, plan, a, b)?;
    let tree = mdst(&graph)?;
    let ccre = build_factorization(plan, &graph, &tree)?;
    ccre.validate(model.n_sources(), plan.max_size.max(a + b))?;
    let kld_bits = factorization_kld(model, &ccre)?;
    Ok(Factorization { graph, tree, ccre, kld_bits })
}

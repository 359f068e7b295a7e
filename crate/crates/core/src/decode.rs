//! Conditional-mean decoding: exact posteriors by preimage-restricted
//! marginalization and the sum-product decoder on CCRE factor graphs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_assign::IndexAssignment;
use crate::pmf::{strides, ConditionalPmf, JointPmf};
use crate::quantizer::ScalarQuantizer;

pub const DEFAULT_FLOODING_ITERATIONS: usize = 50;
pub const DEFAULT_FLOODING_TOLERANCE: f64 = 1e-8;

/// Q_n(w_n) per source. Sources without an assignment are not transmitted and
/// keep their full alphabet; their entry in `w` is ignored.
pub fn preimage_sets(
    alphabets: &[usize],
    assignments: &[Option<IndexAssignment>],
    w: &[usize],
) -> Result<Vec<Vec<usize>>> {
    if assignments.len() != alphabets.len() || w.len() != alphabets.len() {
        return Err(Error::Decode(format!(
            "codeword vector of length {} for {} sources",
            w.len(),
            alphabets.len()
        )));
    }
    alphabets
        .iter()
        .zip(assignments)
        .zip(w)
        .enumerate()
        .map(|(n, ((&l, a), &wn))| match a {
            None => Ok((0..l).collect()),
            Some(a) => {
                if wn >= a.codewords() {
                    return Err(Error::Decode(format!(
                        "codeword {wn} of source {n} outside its {}-word alphabet",
                        a.codewords()
                    )));
                }
                Ok(a.preimage(wn))
            }
        })
        .collect()
}

/// Normalized p(i_n = l | w) for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub probs: Vec<f64>,
    /// Number of summed index tuples.
    pub terms: usize,
    /// Set when no feasible tuple carried mass and the uniform fallback was used.
    pub fallback: bool,
}

/// Restricted marginalization: sums p(i) over the product of the preimage sets
/// of all PMF axes, keeping the target axis free.
///
/// `sets` is indexed by source id and must cover the PMF scope.
pub fn exact_posterior(pmf: &JointPmf, sets: &[Vec<usize>], target: usize) -> Result<Posterior> {
    let t_ax = pmf
        .axis_of(target)
        .ok_or_else(|| Error::Decode(format!("target {target} not in PMF scope")))?;
    let allowed: Vec<&[usize]> = pmf
        .scope
        .iter()
        .map(|&s| sets.get(s).map(Vec::as_slice))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Decode("constraint sets do not cover the PMF scope".into()))?;
    let st = pmf.strides();
    let mut probs = vec![0.0; pmf.shape[t_ax]];
    let mut terms = 0;
    for_each_tuple(&allowed, &st, |pos, flat| {
        probs[allowed[t_ax][pos[t_ax]]] += pmf.table[flat];
        terms += 1;
    });
    let fallback = normalize_or_uniform(&mut probs, allowed[t_ax]);
    Ok(Posterior { probs, terms, fallback })
}

/// Visits the product of the `allowed` lists, passing positions and the flat
/// row-major offset.
fn for_each_tuple(allowed: &[&[usize]], st: &[usize], mut f: impl FnMut(&[usize], usize)) {
    if allowed.iter().any(|a| a.is_empty()) {
        return;
    }
    let d = allowed.len();
    let mut pos = vec![0usize; d];
    let mut flat: usize = allowed.iter().zip(st).map(|(a, s)| a[0] * s).sum();
    loop {
        f(&pos, flat);
        let mut ax = d;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            flat -= allowed[ax][pos[ax]] * st[ax];
            pos[ax] += 1;
            if pos[ax] < allowed[ax].len() {
                flat += allowed[ax][pos[ax]] * st[ax];
                break;
            }
            pos[ax] = 0;
            flat += allowed[ax][0] * st[ax];
        }
    }
}

/// Normalizes in place; an all-zero vector becomes uniform over `support`.
fn normalize_or_uniform(v: &mut [f64], support: &[usize]) -> bool {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
        false
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        let u = 1.0 / support.len().max(1) as f64;
        support.iter().for_each(|&i| v[i] = u);
        true
    }
}

/// Σ_l ũ_{n,l}·p(i_n = l | w).
pub fn cme_estimate(posterior: &[f64], quantizer: &ScalarQuantizer) -> f64 {
    posterior.iter().zip(&quantizer.levels).map(|(p, u)| p * u).sum()
}

/// Factor f_m over `scope` stored row-major in scope order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub scope: Vec<usize>,
    pub shape: Vec<usize>,
    pub table: Vec<f64>,
}

impl From<ConditionalPmf> for Factor {
    fn from(c: ConditionalPmf) -> Self {
        Factor { scope: c.scope(), shape: c.shape, table: c.table }
    }
}

impl From<JointPmf> for Factor {
    fn from(p: JointPmf) -> Self {
        Factor { scope: p.scope, shape: p.shape, table: p.table }
    }
}

/// Bipartite graph of variables (source ids) and factors.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    alphabets: Vec<usize>,
    factors: Vec<Factor>,
    strides: Vec<Vec<usize>>,
    /// Per variable: (factor, position in its scope).
    adjacency: Vec<Vec<(usize, usize)>>,
    forest: bool,
    /// Breadth-first order over variables (ids < V) and factors (V + m), one
    /// tree per component rooted at its lowest variable.
    order: Vec<usize>,
    parent: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Exact two-pass schedule on forests, flooding otherwise.
    Auto,
    Flooding { max_iterations: usize, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Posterior per variable.
    pub posteriors: Vec<Vec<f64>>,
    pub fallbacks: usize,
    pub iterations: usize,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

fn bfs_order(v: usize, factors: &[Factor], adjacency: &[Vec<(usize, usize)>]) -> (Vec<usize>, Vec<usize>) {
    let total = v + factors.len();
    let mut parent = vec![usize::MAX; total];
    let mut seen = vec![false; total];
    let mut order = Vec::with_capacity(total);
    for start in 0..v {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let node = order[head];
            head += 1;
            let nbrs: Vec<usize> = if node < v {
                adjacency[node].iter().map(|&(m, _)| v + m).collect()
            } else {
                factors[node - v].scope.clone()
            };
            for nb in nbrs {
                if !seen[nb] {
                    seen[nb] = true;
                    parent[nb] = node;
                    order.push(nb);
                }
            }
        }
    }
    (order, parent)
}

impl FactorGraph {
    pub fn new(alphabets: Vec<usize>, factors: Vec<Factor>) -> Result<Self> {
        let v = alphabets.len();
        let mut adjacency = vec![Vec::new(); v];
        let mut uf: Vec<usize> = (0..v + factors.len()).collect();
        let mut forest = true;
        for (m, f) in factors.iter().enumerate() {
            if f.scope.len() != f.shape.len() || f.scope.is_empty() {
                return Err(Error::Decode(format!("factor {m} has inconsistent scope and shape")));
            }
            let cells: usize = f.shape.iter().product();
            if cells != f.table.len() {
                return Err(Error::Decode(format!("factor {m} table has {} entries, shape needs {cells}", f.table.len())));
            }
            for (j, (&s, &len)) in f.scope.iter().zip(&f.shape).enumerate() {
                if s >= v || alphabets[s] != len {
                    return Err(Error::Decode(format!("factor {m} axis {j} does not match variable {s}")));
                }
                if adjacency[s].iter().any(|&(mm, _)| mm == m) {
                    return Err(Error::Decode(format!("factor {m} repeats variable {s}")));
                }
                adjacency[s].push((m, j));
                let (a, b) = (find(&mut uf, s), find(&mut uf, v + m));
                if a == b {
                    forest = false;
                } else {
                    uf[a] = b;
                }
            }
        }
        let strides = factors.iter().map(|f| strides(&f.shape)).collect();
        let (order, parent) = bfs_order(v, &factors, &adjacency);
        Ok(FactorGraph { alphabets, factors, strides, adjacency, forest, order, parent })
    }

    pub fn is_forest(&self) -> bool {
        self.forest
    }

    pub fn alphabets(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Sends messages from factor `m` to the positions selected by `to`,
    /// summing only over tuples allowed by `sets`.
    fn factor_sweep(
        &self,
        m: usize,
        sets: &[Vec<usize>],
        incoming: &[Vec<f64>],
        to: Option<usize>,
        out: &mut [Vec<f64>],
    ) {
        let f = &self.factors[m];
        let allowed: Vec<&[usize]> = f.scope.iter().map(|&s| sets[s].as_slice()).collect();
        for (j, o) in out.iter_mut().enumerate() {
            if to.is_none_or(|t| t == j) {
                o.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let d = f.scope.len();
        let mut x = [0.0f64; 16];
        let mut xs = if d > 16 { vec![0.0; d] } else { Vec::new() };
        let x = if d <= 16 { &mut x[..d] } else { &mut xs[..] };
        for_each_tuple(&allowed, &self.strides[m], |pos, flat| {
            let t = f.table[flat];
            if t == 0.0 {
                return;
            }
            for j in 0..d {
                x[j] = incoming[j][allowed[j][pos[j]]];
            }
            match to {
                Some(j) => {
                    let mut v = t;
                    for (g, &xg) in x.iter().enumerate() {
                        if g != j {
                            v *= xg;
                        }
                    }
                    out[j][allowed[j][pos[j]]] += v;
                }
                None => {
                    for j in 0..d {
                        let mut v = t;
                        for (g, &xg) in x.iter().enumerate() {
                            if g != j {
                                v *= xg;
                            }
                        }
                        out[j][allowed[j][pos[j]]] += v;
                    }
                }
            }
        });
    }

    /// Runs sum-product with the preimage constraints `sets` (indexed by variable).
    pub fn decode(&self, sets: &[Vec<usize>], schedule: Schedule) -> Result<Decoded> {
        self.decode_for(sets, schedule, None)
    }

    /// Like [`FactorGraph::decode`] but only the posteriors of `wanted` are
    /// filled in; the others stay empty.
    pub fn decode_for(&self, sets: &[Vec<usize>], schedule: Schedule, wanted: Option<&[usize]>) -> Result<Decoded> {
        if sets.len() != self.alphabets.len() {
            return Err(Error::Decode("one constraint set per variable required".into()));
        }
        for (n, s) in sets.iter().enumerate() {
            if s.is_empty() || s.iter().any(|&i| i >= self.alphabets[n]) {
                return Err(Error::Decode(format!("invalid constraint set for variable {n}")));
            }
        }
        match schedule {
            Schedule::Auto if self.forest => Ok(self.two_pass(sets, wanted)),
            Schedule::Auto => Ok(self.flooding(sets, DEFAULT_FLOODING_ITERATIONS, DEFAULT_FLOODING_TOLERANCE, wanted)),
            Schedule::Flooding { max_iterations, tolerance } => Ok(self.flooding(sets, max_iterations, tolerance, wanted)),
        }
    }

    fn empty_messages(&self) -> Vec<Vec<Vec<f64>>> {
        self.factors
            .iter()
            .map(|f| f.scope.iter().map(|&s| vec![0.0; self.alphabets[s]]).collect())
            .collect()
    }

    fn indicator(&self, sets: &[Vec<usize>], n: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.alphabets[n]];
        let u = 1.0 / sets[n].len() as f64;
        sets[n].iter().for_each(|&i| v[i] = u);
        v
    }

    /// Variable-to-factor message: product of the other incoming factor messages.
    fn var_message(&self, sets: &[Vec<usize>], f2v: &[Vec<Vec<f64>>], n: usize, skip: Option<usize>, fallbacks: &mut usize) -> Vec<f64> {
        let mut v = self.indicator(sets, n);
        for &(m, j) in &self.adjacency[n] {
            if Some(m) != skip {
                v.iter_mut().zip(&f2v[m][j]).for_each(|(a, b)| *a *= b);
            }
        }
        if normalize_or_uniform(&mut v, &sets[n]) {
            *fallbacks += 1;
        }
        v
    }

    fn posteriors(&self, sets: &[Vec<usize>], f2v: &[Vec<Vec<f64>>], wanted: Option<&[usize]>, fallbacks: &mut usize) -> Vec<Vec<f64>> {
        (0..self.alphabets.len())
            .map(|n| {
                if wanted.is_none_or(|w| w.contains(&n)) {
                    self.var_message(sets, f2v, n, None, fallbacks)
                } else {
                    Vec::new()
                }
            })
            .collect()
    }

    fn normalize_factor_out(&self, sets: &[Vec<usize>], m: usize, out: &mut [Vec<f64>], only: Option<usize>, fallbacks: &mut usize) {
        for (j, o) in out.iter_mut().enumerate() {
            if only.is_none_or(|t| t == j) && normalize_or_uniform(o, &sets[self.factors[m].scope[j]]) {
                *fallbacks += 1;
            }
        }
    }

    /// Exact leaves-to-root then root-to-leaves pass over every tree component.
    /// The second pass is skipped when every wanted variable is a root.
    fn two_pass(&self, sets: &[Vec<usize>], wanted: Option<&[usize]>) -> Decoded {
        let v = self.alphabets.len();
        let mut f2v = self.empty_messages();
        let mut v2f = self.empty_messages();
        let mut fallbacks = 0;
        let (order, parent) = (&self.order, &self.parent);

        for &node in order.iter().rev() {
            let p = parent[node];
            if p == usize::MAX {
                continue;
            }
            if node < v {
                let m = p - v;
                let j = self.factors[m].scope.iter().position(|&s| s == node).unwrap();
                v2f[m][j] = self.var_message(sets, &f2v, node, Some(m), &mut fallbacks);
            } else {
                let m = node - v;
                let j = self.factors[m].scope.iter().position(|&s| s == p).unwrap();
                let mut out = std::mem::take(&mut f2v[m]);
                self.factor_sweep(m, sets, &v2f[m], Some(j), &mut out);
                self.normalize_factor_out(sets, m, &mut out, Some(j), &mut fallbacks);
                f2v[m] = out;
            }
        }
        let roots_only = wanted.is_some_and(|w| w.iter().all(|&n| parent[n] == usize::MAX));
        for &node in order.iter().filter(|_| !roots_only) {
            if node < v {
                for &(m, j) in &self.adjacency[node] {
                    if parent[node] != v + m {
                        v2f[m][j] = self.var_message(sets, &f2v, node, Some(m), &mut fallbacks);
                    }
                }
            } else {
                let m = node - v;
                let mut out = std::mem::take(&mut f2v[m]);
                self.factor_sweep(m, sets, &v2f[m], None, &mut out);
                self.normalize_factor_out(sets, m, &mut out, None, &mut fallbacks);
                f2v[m] = out;
            }
        }
        let posteriors = self.posteriors(sets, &f2v, wanted, &mut fallbacks);
        Decoded { posteriors, fallbacks, iterations: 2 }
    }

    /// Synchronous flooding from constraint-only variable messages.
    fn flooding(&self, sets: &[Vec<usize>], max_iterations: usize, tolerance: f64, wanted: Option<&[usize]>) -> Decoded {
        let mut f2v = self.empty_messages();
        let mut v2f: Vec<Vec<Vec<f64>>> =
            self.factors.iter().map(|f| f.scope.iter().map(|&s| self.indicator(sets, s)).collect()).collect();
        let mut fallbacks = 0;
        let mut iterations = 0;
        while iterations < max_iterations.max(1) {
            iterations += 1;
            let mut delta: f64 = 0.0;
            for m in 0..self.factors.len() {
                let mut out = self.factors[m].scope.iter().map(|&s| vec![0.0; self.alphabets[s]]).collect::<Vec<_>>();
                self.factor_sweep(m, sets, &v2f[m], None, &mut out);
                self.normalize_factor_out(sets, m, &mut out, None, &mut fallbacks);
                for (old, new) in f2v[m].iter().zip(&out) {
                    for (a, b) in old.iter().zip(new) {
                        delta = delta.max((a - b).abs());
                    }
                }
                f2v[m] = out;
            }
            for (n, adj) in self.adjacency.iter().enumerate() {
                for &(m, j) in adj {
                    v2f[m][j] = self.var_message(sets, &f2v, n, Some(m), &mut fallbacks);
                }
            }
            if delta < tolerance {
                break;
            }
        }
        let posteriors = self.posteriors(sets, &f2v, wanted, &mut fallbacks);
        Decoded { posteriors, fallbacks, iterations }
    }
}

/// Everything needed to turn codeword vectors into source estimates.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub graph: FactorGraph,
    /// Per variable; `None` for sources that are not transmitted.
    pub assignments: Vec<Option<IndexAssignment>>,
    pub quantizers: Vec<ScalarQuantizer>,
    /// Sources whose estimates are returned.
    pub targets: Vec<usize>,
    pub schedule: Schedule,
}

impl Decoder {
    /// Estimates û_n for every target from the codeword vector `w`
    /// (indexed by source id). Returns the estimates and the fallback count.
    pub fn decode_all(&self, w: &[usize]) -> Result<(Vec<f64>, usize)> {
        let sets = preimage_sets(self.graph.alphabets(), &self.assignments, w)?;
        // a point-mass constraint needs no message passing
        if self.targets.iter().all(|&t| sets[t].len() == 1) {
            let est = self.targets.iter().map(|&t| self.quantizers[t].levels[sets[t][0]]).collect();
            return Ok((est, 0));
        }
        let d = self.graph.decode_for(&sets, self.schedule, Some(&self.targets))?;
        let est = self.targets.iter().map(|&t| cme_estimate(&d.posteriors[t], &self.quantizers[t])).collect();
        Ok((est, d.fallbacks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sets_are_singletons() {
        let a = vec![Some(IndexAssignment::identity(4)), None];
        let s = preimage_sets(&[4, 3], &a, &[2, 0]).unwrap();
        assert_eq!(s, vec![vec![2], vec![0, 1, 2]]);
        assert!(preimage_sets(&[4, 3], &a, &[4, 0]).is_err());
        assert!(preimage_sets(&[4, 3], &a, &[0]).is_err());
    }

    #[test]
    fn cme_of_point_mass_and_uniform() {
        let q = crate::quantizer::design_lloyd_max(0.0, 1.0, 4).unwrap();
        assert_eq!(cme_estimate(&[0.0, 0.0, 1.0, 0.0], &q), q.levels[2]);
        assert!(cme_estimate(&[0.25; 4], &q).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_falls_back_to_uniform() {
        let pmf = JointPmf::from_parts(vec![0, 1], vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let p = exact_posterior(&pmf, &[vec![0], vec![1]], 1).unwrap();
        assert!(p.fallback);
        assert_eq!(p.probs, vec![0.0, 1.0]);
    }

    #[test]
    fn detects_cycles() {
        let f = |scope: Vec<usize>| Factor { shape: vec![2; scope.len()], table: vec![0.25; 1 << scope.len()], scope };
        let tree = FactorGraph::new(vec![2; 3], vec![f(vec![0, 1]), f(vec![1, 2])]).unwrap();
        assert!(tree.is_forest());
        let cyc = FactorGraph::new(vec![2; 3], vec![f(vec![0, 1]), f(vec![1, 2]), f(vec![0, 2])]).unwrap();
        assert!(!cyc.is_forest());
    }
}

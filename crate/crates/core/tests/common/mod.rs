#![allow(dead_code)]

use rand::Rng;
use sensorcode::cluster::cluster_sources;
use sensorcode::decode::{cme_estimate, exact_posterior, preimage_sets, Factor};
use sensorcode::factorize::factorize;
use sensorcode::gauss_model::{CovarianceModel, SensorField};
use sensorcode::index_assign::{optimize_index_reuse, total_distortion, IndexAssignment};
use sensorcode::pmf::{conditional_table, estimate_joint_pmf, strides, Estimation, JointPmf};
use sensorcode::quantizer::{design_lloyd_max, ScalarQuantizer};
use sensorcode::rng;

pub fn field(n: usize, beta: f64, seed: u64) -> CovarianceModel {
    let mut r = rng::stream(seed, &[rng::PLACEMENT_STREAM]);
    SensorField::random(n, beta, &mut r).model().unwrap()
}

pub fn correlation(n: usize, f: impl Fn(usize, usize) -> f64) -> CovarianceModel {
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            e[i * n + j] = if i == j { 1.0 } else { f(i.min(j), i.max(j)) };
        }
    }
    CovarianceModel::from_rows(n, e).unwrap()
}

/// Two independent exponential blocks {0..k} and {k..n}.
pub fn block_model(n: usize, k: usize, rho: f64) -> CovarianceModel {
    correlation(n, |i, j| {
        if (i < k) == (j < k) {
            rho.powi((j - i) as i32)
        } else {
            0.0
        }
    })
}

/// Seconds per call: calls are batched until a batch lasts at least 20 ms and
/// the fastest of five batches is kept.
pub fn seconds_per_call(mut f: impl FnMut()) -> f64 {
    use std::time::Instant;
    let mut reps = 1usize;
    loop {
        let start = Instant::now();
        (0..reps).for_each(|_| f());
        if start.elapsed().as_secs_f64() >= 0.02 {
            break;
        }
        reps *= 2;
    }
    (0..5)
        .map(|_| {
            let start = Instant::now();
            (0..reps).for_each(|_| f());
            start.elapsed().as_secs_f64() / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn unravel(mut f: usize, shape: &[usize]) -> Vec<usize> {
    let mut t = vec![0; shape.len()];
    for ax in (0..shape.len()).rev() {
        t[ax] = f % shape[ax];
        f /= shape[ax];
    }
    t
}

// Full-tensor marginalization with a membership test per axis.
pub fn naive_posterior(pmf: &JointPmf, sets: &[Vec<usize>], target: usize) -> Vec<f64> {
    let t_ax = pmf.axis_of(target).unwrap();
    let mut out = vec![0.0; pmf.shape[t_ax]];
    for (f, &p) in pmf.table.iter().enumerate() {
        let t = unravel(f, &pmf.shape);
        if t.iter().zip(&pmf.scope).all(|(i, &s)| sets[s].contains(i)) {
            out[t[t_ax]] += p;
        }
    }
    let s: f64 = out.iter().sum();
    out.iter().map(|x| x / s).collect()
}

pub fn all_words(assignments: &[Option<IndexAssignment>]) -> Vec<Vec<usize>> {
    let mut words = vec![vec![]];
    for a in assignments {
        let k = a.as_ref().map_or(1, IndexAssignment::codewords);
        words = words
            .into_iter()
            .flat_map(|w| {
                (0..k).map(move |c| {
                    let mut w = w.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
    }
    words
}

pub fn random_assignment(l: usize, k: usize, r: &mut impl Rng) -> IndexAssignment {
    let mut f = IndexAssignment::identity(l);
    while f.codewords() > k {
        let a = r.random_range(0..f.codewords() - 1);
        let b = r.random_range(a + 1..f.codewords());
        f = f.merge(a, b).unwrap();
    }
    f
}

// Enumerates every parent vector and keeps those forming an arborescence.
pub fn brute_force_min(costs: &[Vec<f64>]) -> f64 {
    let c = costs.len();
    let mut best = f64::INFINITY;
    for root in 0..c {
        let others: Vec<usize> = (0..c).filter(|&v| v != root).collect();
        let combos = c.pow(others.len() as u32);
        'outer: for mut code in 0..combos {
            let mut parent = vec![usize::MAX; c];
            for &v in &others {
                parent[v] = code % c;
                code /= c;
                if parent[v] == v {
                    continue 'outer;
                }
            }
            for &v in &others {
                let mut x = v;
                for _ in 0..c {
                    if x == root {
                        break;
                    }
                    x = parent[x];
                }
                if x != root {
                    continue 'outer;
                }
            }
            let cost: f64 = others.iter().map(|&v| costs[parent[v]][v]).sum();
            best = best.min(cost);
        }
    }
    best
}

// Encodes and decodes fresh samples with the designed maps; returns the
// measured mean squared error, its standard error and the predicted d_q + d_d.
pub fn end_to_end(model: &CovarianceModel, levels: usize, k: usize) -> (f64, f64, f64) {
    let dim = model.n_sources();
    let q = design_lloyd_max(0.0, 1.0, levels).unwrap();
    let qs = vec![q; dim];
    let all: Vec<usize> = (0..dim).collect();
    let pmf = estimate_joint_pmf(model, &qs, &all, Estimation::new(2_000_000, 3, 0)).unwrap();
    let design = optimize_index_reuse(&pmf, &qs, &all, &all, k).unwrap();
    let split = total_distortion(&design, &qs);
    assert!((split.d - split.d_q - split.d_d).abs() < 1e-15);

    let assignments: Vec<_> = design.assignments.iter().cloned().map(Some).collect();
    let alphabets = vec![levels; dim];
    let sampler = model.sampler().unwrap();
    let mut r = rng::stream(99, &[rng::EVAL_STREAM]);
    let n = 200_000;
    let mut buf = vec![0.0; dim * n];
    sampler.fill(&mut r, &mut buf);
    let errors: Vec<f64> = buf
        .chunks_exact(dim)
        .map(|u| {
            let w: Vec<usize> = (0..dim).map(|s| design.assignments[s].encode(qs[s].cell(u[s]))).collect();
            let sets = preimage_sets(&alphabets, &assignments, &w).unwrap();
            (0..dim)
                .map(|s| {
                    let post = exact_posterior(&pmf, &sets, s).unwrap();
                    (u[s] - cme_estimate(&post.probs, &qs[s])).powi(2)
                })
                .sum()
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), split.d)
}

/// Conditional factors of the A=B=1 factorization of a small field, each
/// taken from its own Monte Carlo joint.
pub fn field_tree_factors(n: usize, l: usize, seed: u64) -> (CovarianceModel, Vec<ScalarQuantizer>, Vec<Factor>) {
    let m = field(n, 1.0, seed);
    let q = design_lloyd_max(0.0, 1.0, l).unwrap();
    let qs = vec![q; n];
    let (_, plan) = cluster_sources(&m, 2).unwrap();
    let f = factorize(&m, &plan, 1, 1).unwrap();
    let factors = f
        .ccre
        .factors
        .iter()
        .enumerate()
        .map(|(i, cf)| {
            let mut scope = cf.scope();
            scope.sort_unstable();
            let joint = estimate_joint_pmf(&m, &qs, &scope, Estimation::new(20_000, 9, i as u64)).unwrap();
            Factor::from(conditional_table(&joint, &cf.a, &cf.b).unwrap())
        })
        .collect();
    (m, qs, factors)
}

/// The product of all factors as a dense table over every variable.
pub fn factor_product(factors: &[Factor], shape: &[usize]) -> JointPmf {
    let cells: usize = shape.iter().product();
    let table = (0..cells)
        .map(|f| {
            let t = unravel(f, shape);
            factors
                .iter()
                .map(|fac| {
                    let st = strides(&fac.shape);
                    fac.table[fac.scope.iter().zip(&st).map(|(&s, k)| t[s] * k).sum::<usize>()]
                })
                .product()
        })
        .collect();
    JointPmf { scope: (0..shape.len()).collect(), shape: shape.to_vec(), table }
}

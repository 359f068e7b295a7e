mod common;

use sensorcode::decode::{
    cme_estimate, exact_posterior, preimage_sets, Decoder, Factor, FactorGraph, Schedule,
};
use sensorcode::gauss_model::CovarianceModel;
use sensorcode::index_assign::IndexAssignment;
use sensorcode::pmf::{estimate_joint_pmf, Estimation, JointPmf};
use sensorcode::quantizer::{design_lloyd_max, ScalarQuantizer};
use sensorcode::rng;

#[test]
fn restricted_marginalization_matches_naive() {
    let mut r = rng::stream(1, &[7]);
    for n_enc in 1..=3 {
        for l in 2..=4 {
            let m = common::correlation(n_enc, |_, _| 0.6);
            let q = design_lloyd_max(0.0, 1.0, l).unwrap();
            let qs = vec![q; n_enc];
            let scope: Vec<usize> = (0..n_enc).collect();
            let pmf = estimate_joint_pmf(&m, &qs, &scope, Estimation::new(20_000, 3, 0)).unwrap();
            for k in 1..=l {
                let assignments: Vec<Option<IndexAssignment>> =
                    (0..n_enc).map(|_| Some(common::random_assignment(l, k, &mut r))).collect();
                for w in common::all_words(&assignments) {
                    let sets = preimage_sets(&vec![l; n_enc], &assignments, &w).unwrap();
                    for target in 0..n_enc {
                        let fast = exact_posterior(&pmf, &sets, target).unwrap();
                        let slow = common::naive_posterior(&pmf, &sets, target);
                        for (a, b) in fast.probs.iter().zip(&slow) {
                            assert!((a - b).abs() < 1e-12);
                        }
                        // term count bounded by Lemma 1 on every other axis
                        assert!(fast.terms <= l * (l - k + 1).pow(n_enc as u32 - 1));
                        let mass: f64 = fast.probs.iter().sum();
                        assert!((mass - 1.0).abs() < 1e-9);
                        let own = assignments[target].as_ref().unwrap();
                        for (i, p) in fast.probs.iter().enumerate() {
                            if own.encode(i) != w[target] {
                                assert_eq!(*p, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn preimage_sizes_respect_lemma_bound() {
    let mut r = rng::stream(2, &[0]);
    for _ in 0..50 {
        let f = common::random_assignment(8, 3, &mut r);
        let a = vec![Some(f.clone())];
        for w in 0..3 {
            assert!(preimage_sets(&[8], &a, &[w]).unwrap()[0].len() <= 6);
        }
    }
    let all = vec![Some(IndexAssignment::from_map(vec![0; 5]).unwrap())];
    assert_eq!(preimage_sets(&[5], &all, &[0]).unwrap()[0], vec![0, 1, 2, 3, 4]);
}

#[test]
fn single_factor_sum_product_equals_exact_decoder() {
    let m = common::correlation(3, |i, j| if j - i == 1 { 0.8 } else { 0.6 });
    let q = design_lloyd_max(0.0, 1.0, 4).unwrap();
    let qs = vec![q; 3];
    let pmf = estimate_joint_pmf(&m, &qs, &[0, 1, 2], Estimation::new(50_000, 1, 0)).unwrap();
    let graph = FactorGraph::new(vec![4; 3], vec![Factor::from(pmf.clone())]).unwrap();
    let assignments: Vec<Option<IndexAssignment>> = vec![
        Some(IndexAssignment::from_map(vec![0, 1, 0, 1]).unwrap()),
        Some(IndexAssignment::from_map(vec![0, 1, 1, 0]).unwrap()),
        None,
    ];
    for w in common::all_words(&assignments) {
        let sets = preimage_sets(&[4; 3], &assignments, &w).unwrap();
        let d = graph.decode(&sets, Schedule::Auto).unwrap();
        for n in 0..3 {
            let exact = exact_posterior(&pmf, &sets, n).unwrap();
            for (a, b) in d.posteriors[n].iter().zip(&exact.probs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

fn tree_setup(n: usize, l: usize) -> (CovarianceModel, Vec<ScalarQuantizer>, FactorGraph, Vec<Factor>) {
    let (m, qs, factors) = common::field_tree_factors(n, l, 4);
    let graph = FactorGraph::new(vec![l; n], factors.clone()).unwrap();
    (m, qs, graph, factors)
}

#[test]
fn tree_sum_product_matches_brute_force() {
    let (n, l) = (5, 4);
    let (_, _, graph, factors) = tree_setup(n, l);
    assert!(graph.is_forest());
    let mut r = rng::stream(3, &[0]);
    let assignments: Vec<Option<IndexAssignment>> = (0..n).map(|_| Some(common::random_assignment(l, 2, &mut r))).collect();
    let shape = vec![l; n];
    let p_hat = common::factor_product(&factors, &shape);
    for w in common::all_words(&assignments) {
        let sets = preimage_sets(&shape, &assignments, &w).unwrap();
        let d = graph.decode(&sets, Schedule::Auto).unwrap();
        let flood = graph.decode(&sets, Schedule::Flooding { max_iterations: 200, tolerance: 1e-14 }).unwrap();
        for v in 0..n {
            let brute = common::naive_posterior(&p_hat, &sets, v);
            for ((a, b), c) in d.posteriors[v].iter().zip(&brute).zip(&flood.posteriors[v]) {
                assert!((a - b).abs() < 1e-10);
                assert!((a - c).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn disconnected_factors_decode_locally() {
    let a = JointPmf::from_parts(vec![0, 1], vec![2, 2], vec![0.4, 0.1, 0.2, 0.3]).unwrap();
    let b = JointPmf::from_parts(vec![2, 3], vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let graph = FactorGraph::new(vec![2; 4], vec![Factor::from(a.clone()), Factor::from(b.clone())]).unwrap();
    let sets = vec![vec![0, 1], vec![1], vec![0], vec![0, 1]];
    let d = graph.decode(&sets, Schedule::Auto).unwrap();
    let local = exact_posterior(&a, &sets, 0).unwrap();
    assert!((d.posteriors[0][0] - local.probs[0]).abs() < 1e-15);
    let local = exact_posterior(&b, &sets, 3).unwrap();
    assert!((d.posteriors[3][1] - local.probs[1]).abs() < 1e-15);
}

#[test]
fn cyclic_graph_flooding_converges_to_normalized_beliefs() {
    let f = |scope: Vec<usize>, t: Vec<f64>| Factor { shape: vec![2; scope.len()], scope, table: t };
    let graph = FactorGraph::new(
        vec![2; 3],
        vec![
            f(vec![0, 1], vec![0.4, 0.1, 0.1, 0.4]),
            f(vec![1, 2], vec![0.4, 0.1, 0.1, 0.4]),
            f(vec![0, 2], vec![0.3, 0.2, 0.2, 0.3]),
        ],
    )
    .unwrap();
    assert!(!graph.is_forest());
    let d = graph.decode(&[vec![0], vec![0, 1], vec![0, 1]], Schedule::Auto).unwrap();
    assert!(d.iterations < 50);
    for p in &d.posteriors {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(d.posteriors[1][0] > 0.5);
}

#[test]
fn cme_matches_rejection_sampling() {
    let rho = 0.9;
    let m = common::correlation(2, |_, _| rho);
    let q = design_lloyd_max(0.0, 1.0, 4).unwrap();
    let qs = vec![q.clone(), q.clone()];
    let pmf = estimate_joint_pmf(&m, &qs, &[0, 1], Estimation::new(400_000, 2, 0)).unwrap();
    let a = IndexAssignment::from_map(vec![0, 1, 0, 1]).unwrap();
    let assignments = vec![Some(a.clone()), Some(a.clone())];
    let w = vec![0, 1];
    let sets = preimage_sets(&[4, 4], &assignments, &w).unwrap();
    let est = cme_estimate(&exact_posterior(&pmf, &sets, 0).unwrap().probs, &q);

    // E{Ũ_0 | w} by rejection over fresh generative samples
    let sampler = m.sampler().unwrap();
    let mut r = rng::stream(77, &[0]);
    let (mut sum, mut sum2, mut count) = (0.0, 0.0, 0usize);
    let mut buf = vec![0.0; 2 * 4096];
    for _ in 0..100 {
        sampler.fill(&mut r, &mut buf);
        for u in buf.chunks_exact(2) {
            let (i0, i1) = (q.cell(u[0]), q.cell(u[1]));
            if a.encode(i0) == w[0] && a.encode(i1) == w[1] {
                let v = q.levels[i0];
                sum += v;
                sum2 += v * v;
                count += 1;
            }
        }
    }
    let mean = sum / count as f64;
    let sd = ((sum2 / count as f64 - mean * mean) / count as f64).sqrt();
    assert!((est - mean).abs() < 3.0 * sd + 2e-3, "{est} vs {mean} ± {sd}");
}

#[test]
fn decoder_correlation_helps() {
    let q = design_lloyd_max(0.0, 1.0, 4).unwrap();
    let a = IndexAssignment::from_map(vec![0, 1, 0, 1]).unwrap();
    let mse = |rho: f64| {
        let m = common::correlation(2, |_, _| rho);
        let qs = vec![q.clone(), q.clone()];
        let pmf = estimate_joint_pmf(&m, &qs, &[0, 1], Estimation::new(200_000, 1, 0)).unwrap();
        let decoder = Decoder {
            graph: FactorGraph::new(vec![4, 4], vec![Factor::from(pmf)]).unwrap(),
            assignments: vec![Some(a.clone()), Some(a.clone())],
            quantizers: qs.clone(),
            targets: vec![0, 1],
            schedule: Schedule::Auto,
        };
        let sampler = m.sampler().unwrap();
        let mut r = rng::stream(8, &[1]);
        let mut buf = vec![0.0; 2 * 20_000];
        sampler.fill(&mut r, &mut buf);
        let mut err = 0.0;
        for u in buf.chunks_exact(2) {
            let w: Vec<usize> = u.iter().map(|&x| a.encode(q.cell(x))).collect();
            let (est, _) = decoder.decode_all(&w).unwrap();
            err += (est[0] - u[0]).powi(2) + (est[1] - u[1]).powi(2);
        }
        err / 40_000.0
    };
    assert!(mse(0.95) < mse(0.0));
}

#[test]
fn independent_sources_use_only_own_codeword() {
    let q = design_lloyd_max(0.0, 1.0, 4).unwrap();
    let pa = q.cell_probabilities();
    let table: Vec<f64> = pa.iter().flat_map(|x| pa.iter().map(move |y| x * y)).collect();
    let pmf = JointPmf::from_parts(vec![0, 1], vec![4, 4], table).unwrap();
    let a = IndexAssignment::from_map(vec![0, 1, 1, 0]).unwrap();
    let decoder = Decoder {
        graph: FactorGraph::new(vec![4, 4], vec![Factor::from(pmf)]).unwrap(),
        assignments: vec![Some(a.clone()), Some(a)],
        quantizers: vec![q.clone(), q],
        targets: vec![0],
        schedule: Schedule::Auto,
    };
    let (e0, _) = decoder.decode_all(&[1, 0]).unwrap();
    let (e1, _) = decoder.decode_all(&[1, 1]).unwrap();
    assert!((e0[0] - e1[0]).abs() < 1e-12);
    assert!(decoder.decode_all(&[1]).is_err());
}

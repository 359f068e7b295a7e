mod common;

use proptest::prelude::*;
use sensorcode::cluster::{build_dendrogram, delta_kld_cluster, delta_kld_merge, plan_kld, prune};

#[test]
fn first_merge_picks_strongest_pair() {
    let m = common::correlation(3, |i, j| if (i, j) == (0, 1) { 0.9 } else { 0.1 });
    let candidates = [
        ((0, 1), 0.5 * (1.0f64 - 0.81).log2()),
        ((0, 2), 0.5 * (1.0f64 - 0.01).log2()),
        ((1, 2), 0.5 * (1.0f64 - 0.01).log2()),
    ];
    let expected = candidates
        .iter()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap()
        .0;
    let d = build_dendrogram(&m).unwrap();
    assert_eq!((d.merges[0].left, d.merges[0].right), expected);
    assert!((d.merges[0].delta_bits - candidates[0].1).abs() < 1e-9);
}

#[test]
fn block_diagonal_merges_within_blocks_first() {
    let m = common::block_model(7, 3, 0.7);
    let d = build_dendrogram(&m).unwrap();
    let n = 7;
    let block = |node: usize| d.leaves(node).iter().all(|&x| x < 3) as u8 + 2 * d.leaves(node).iter().all(|&x| x >= 3) as u8;
    for (t, merge) in d.merges.iter().enumerate() {
        let intra = block(merge.left) == block(merge.right) && block(merge.left) != 0;
        if t < n - 2 {
            assert!(intra, "merge {t} crosses blocks");
            assert!(merge.delta_bits < 0.0);
        } else {
            assert!(!intra);
            assert!(merge.delta_bits.abs() < 1e-9);
        }
    }
    let exact = prune(&m, &d, 4).unwrap();
    let mut sizes: Vec<usize> = exact.clusters.iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![3, 4]);
    assert!(exact.kld_bits.abs() < 1e-9);
}

#[test]
fn telescoping_identity() {
    for seed in 0..5 {
        let m = common::field(30, 0.5 + seed as f64, seed);
        let d = build_dendrogram(&m).unwrap();
        let all: Vec<usize> = (0..30).collect();
        let total: f64 = d.merges.iter().map(|x| x.delta_bits).sum();
        let residual = -delta_kld_cluster(&m, &all).unwrap() + total;
        assert!(residual.abs() < 1e-6, "seed {seed}: {residual}");
    }
}

#[test]
fn pruned_plans_are_valid_partitions() {
    let m = common::field(40, 1.0, 11);
    let d = build_dendrogram(&m).unwrap();
    d.validate().unwrap();
    let mut last = usize::MAX;
    for s in 1..=40 {
        let plan = prune(&m, &d, s).unwrap();
        plan.validate(40).unwrap();
        assert!(plan.kld_bits >= -1e-9);
        assert!(plan.clusters.len() <= last);
        last = plan.clusters.len();
        assert!((plan.kld_bits - plan_kld(&m, &plan.clusters).unwrap()).abs() < 1e-12);
    }
    assert_eq!(prune(&m, &d, 40).unwrap().clusters.len(), 1);
}

#[test]
fn clustering_scales_polynomially() {
    let time = |n: usize| {
        let m = common::field(n, 1.0, 3);
        common::seconds_per_call(|| {
            build_dendrogram(&m).unwrap();
        })
    };
    let ratio = time(40) / time(20);
    let envelope = (40f64.powi(5) * 40f64.ln()) / (20f64.powi(5) * 20f64.ln());
    assert!(ratio <= 4.0 * envelope, "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn merge_benefit_is_never_positive(seed in 0u64..10_000, beta in 0.2f64..4.0, split in 1usize..7) {
        let m = common::field(8, beta, seed);
        let k: Vec<usize> = (0..split).collect();
        let l: Vec<usize> = (split..8).collect();
        prop_assert!(delta_kld_merge(&m, &k, &l).unwrap() <= 1e-9);
    }
}

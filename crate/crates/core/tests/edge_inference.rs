mod common;

use common::*;
use mrparse::edge::{
    decode_graph, default_mask, exact_marginals, mfvi_infer, mfvi_logits, oracle_check, random_scores, EdgeConfig, EdgeScorer,
};
use mrparse::tensor::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn exact_marginals_match_independent_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = 2 + (rand::Rng::gen_range(&mut rng, 0..3));
        let s = random_scores(&mut rng, n, 2.0, 1.0);
        let e = max_abs_diff(&exact_marginals(&s).unwrap().q, &brute_marginals(&s));
        assert!(e < 1e-12, "{e:e}");
    }
}

#[test]
fn sibling_case_is_three_fifths() {
    let s = sibling_case();
    let q = brute_marginals(&s);
    assert!((q[1] - 0.6).abs() < 1e-12 && (q[2] - 0.6).abs() < 1e-12);
    for t in [3, 5] {
        let m = mfvi_infer(&s, t, None);
        assert!((m.get(0, 1) - 0.6).abs() <= 0.02, "T={t}: {}", m.get(0, 1));
    }
}

#[test]
fn factorized_mean_field_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = 2 + (rand::Rng::gen_range(&mut rng, 0..3));
        let s = random_scores(&mut rng, n, 2.0, 0.0);
        let e = max_abs_diff(&mfvi_infer(&s, 3, None).q, &brute_marginals(&s));
        assert!(e <= 1e-9, "{e:e}");
    }
}

#[test]
fn oracle_summary_meets_tolerances() {
    let s = oracle_check(0, 200, 3).unwrap();
    assert!(s.factorized_max_error <= 1e-9);
    assert!(s.second_order_mean_error <= 0.05, "{s:?}");
}

#[test]
fn differentiable_rounds_match_plain_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in [2, 3, 5] {
        let mut store = ParamStore::new();
        let cfg = EdgeConfig {
            edge_dim: 4,
            label_dim: 3,
            second_dim: 3,
            iterations: 3,
            second_order: true,
        };
        let scorer = EdgeScorer::new(&mut store, "edge", 6, 2, &cfg, &mut rng);
        let h = param(&[m, 6], &mut rng);
        let parts = scorer.score(&h).unwrap();
        let mask = default_mask(m);
        let out = mfvi_logits(&parts, 3, &mask).unwrap();
        let plain = parts.to_plain(Some(&mask));
        assert!(max_abs_diff(&out.q.to_vec(), &reference_mfvi(&plain, 3)) < 1e-12);
        assert!(max_abs_diff(&out.q.to_vec(), &mfvi_infer(&plain, 3, Some(&mask)).q) < 1e-12);
    }
}

fn scores() -> impl Strategy<Value = (u64, usize, f64, f64)> {
    (any::<u64>(), 2usize..=4, 0.0f64..3.0, 0.0f64..1.0)
}

proptest! {
    #[test]
    fn plain_inference_matches_reference((seed, n, u, b) in scores(), t in 0usize..6) {
        let s = random_scores(&mut ChaCha8Rng::seed_from_u64(seed), n, u, b);
        prop_assert!(max_abs_diff(&mfvi_infer(&s, t, None).q, &reference_mfvi(&s, t)) < 1e-12);
    }

    #[test]
    fn second_order_storage_is_symmetric((seed, n, u, b) in scores()) {
        let s = random_scores(&mut ChaCha8Rng::seed_from_u64(seed), n, u, b);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    prop_assert_eq!(s.sib(i, j, k), s.sib(i, k, j));
                    prop_assert_eq!(s.cop(i, j, k), s.cop(k, j, i));
                }
            }
        }
    }

    #[test]
    fn posteriors_are_probabilities((seed, n, u, b) in scores(), t in 0usize..6) {
        let s = random_scores(&mut ChaCha8Rng::seed_from_u64(seed), n, u, b);
        let q = mfvi_infer(&s, t, None);
        for i in 0..n {
            prop_assert_eq!(q.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!((0.0..=1.0).contains(&q.get(i, j)));
            }
        }
    }

    #[test]
    fn decoded_edges_are_exactly_those_above_half((seed, n, u, b) in scores(), c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_scores(&mut rng, n, u, b);
        let q = mfvi_infer(&s, 3, None);
        let labels = probe(&[n, n, c], &mut rng).to_vec();
        let edges = decode_graph(&q, &labels, c);
        let expected = (0..n * n).filter(|&x| q.q[x] > 0.5).count();
        prop_assert_eq!(edges.len(), expected);
        for e in edges {
            let row = &labels[(e.head * n + e.dep) * c..(e.head * n + e.dep + 1) * c];
            prop_assert!(row.iter().all(|&v| v <= row[e.label]));
        }
    }
}

#[test]
fn masked_pairs_get_no_mass() {
    let parts_mask = |m: usize| (0..m * m).map(|x| x % m != 0 && x / m != x % m).collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let scorer = EdgeScorer::new(&mut store, "edge", 3, 1, &EdgeConfig::default(), &mut rng);
    let h = Tensor::new(&[4, 3], probe(&[4, 3], &mut rng).to_vec()).unwrap();
    let mask = parts_mask(4);
    let q = mfvi_logits(&scorer.score(&h).unwrap(), 3, &mask).unwrap().q.to_vec();
    for (x, &m) in mask.iter().enumerate() {
        if !m {
            assert_eq!(q[x], 0.0);
        }
    }
}

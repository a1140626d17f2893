//! Property tests for the structural invariants: row-stochastic soft
//! assignments, code pack/unpack identity, triplet ordering, AUC monotone
//! invariance and sampler reproducibility.

use ndarray::Array2;
use nodequant_core::autodiff::Tape;
use nodequant_core::codestore::{pack_codes, unpack_codes};
use nodequant_core::eval::rank_auc;
use nodequant_core::graph::{sample_triplet, shortest_paths, Graph, PathAccess};
use nodequant_core::quant::{gumbel_softmax, hard_assign, index_bits, HardCodes};
use nodequant_core::seeds;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gumbel_softmax_rows_are_stochastic(
        rows in 1usize..6,
        cols in 2usize..12,
        tau in 0.05f32..3.0,
        noise_seed in proptest::option::of(any::<u64>()),
        values in proptest::collection::vec(-8.0f32..8.0, 1..72),
    ) {
        let logits = Array2::from_shape_fn((rows, cols), |(r, c)| {
            values[(r * cols + c) % values.len()]
        });
        let mut tape = Tape::new();
        let t = tape.leaf(logits, true).unwrap();
        let mut rng = noise_seed.map(seeds::rng);
        let u = gumbel_softmax(&mut tape, &[t], tau, rng.as_mut()).unwrap();
        let v = tape.value(u.per_book[0]);
        for r in 0..rows {
            let sum: f64 = v.row(r).iter().map(|&x| x as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "row {r} sums to {sum}");
            prop_assert!(v.row(r).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        // Exactly one argmax index per (row, book).
        let hard = hard_assign(&tape, &u);
        for r in 0..rows {
            prop_assert!((hard.codes[(r, 0)] as usize) < cols);
        }
    }

    #[test]
    fn pack_unpack_is_identity(
        n in 1usize..40,
        shape_pick in 0usize..4,
        seed in any::<u64>(),
    ) {
        // (m, k) combos whose payload is byte-aligned.
        let (m, k) = [(8usize, 256usize), (4, 16), (8, 2), (2, 16)][shape_pick];
        let mut rng = seeds::rng(seed);
        use rand::Rng;
        let codes = HardCodes {
            codes: Array2::from_shape_fn((n, m), |_| rng.random_range(0..k as u32)),
        };
        let payload = pack_codes(&codes, k).unwrap();
        prop_assert_eq!(payload.len(), n * m * index_bits(k) as usize / 8);
        let back = unpack_codes(&payload, n, m, k).unwrap();
        prop_assert_eq!(back, codes);
    }

    #[test]
    fn auc_is_invariant_under_strictly_monotone_transforms(
        pos in proptest::collection::vec(-100.0f64..100.0, 1..30),
        neg in proptest::collection::vec(-100.0f64..100.0, 1..30),
        scale in 0.01f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let base = rank_auc(&pos, &neg);
        // Affine with positive scale, then a strictly increasing tanh-ish map.
        let f = |x: f64| (scale * x + shift).tanh() * 2.0 + (scale * x + shift) * 1e-3;
        let tp: Vec<f64> = pos.iter().map(|&x| f(x)).collect();
        let tn: Vec<f64> = neg.iter().map(|&x| f(x)).collect();
        prop_assert!((rank_auc(&tp, &tn) - base).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_triplets_respect_hop_order(graph_seed in any::<u64>(), sample_seed in any::<u64>()) {
        use rand::Rng;
        let mut g_rng = seeds::rng(graph_seed);
        let n = g_rng.random_range(8usize..60);
        let mut edges = Vec::new();
        // A path backbone keeps the graph connected with several rings.
        for i in 0..n as u32 - 1 {
            edges.push((i, i + 1));
        }
        for _ in 0..n {
            let a = g_rng.random_range(0..n as u32);
            let b = g_rng.random_range(0..n as u32);
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        let g = Graph::from_edges(n, &edges).unwrap();
        let pm = shortest_paths(&g, 6).unwrap();
        let mut paths = PathAccess::from_dense(pm.clone());
        let mut rng = seeds::rng(sample_seed);
        for _ in 0..30 {
            match sample_triplet(&mut paths, &mut rng) {
                Ok(t) => {
                    prop_assert!(t.delta_ap < t.delta_an);
                    prop_assert_eq!(pm.get(t.anchor, t.positive), t.delta_ap);
                    prop_assert_eq!(pm.get(t.anchor, t.negative), t.delta_an);
                }
                Err(nodequant_core::Error::DegenerateGraph(_)) => break,
                Err(other) => return Err(TestCaseError::fail(format!("{other}"))),
            }
        }

        // Same seed, same stream.
        let mut paths2 = PathAccess::from_dense(pm);
        let mut r1 = seeds::rng(sample_seed);
        let mut r2 = seeds::rng(sample_seed);
        for _ in 0..10 {
            let a = sample_triplet(&mut paths, &mut r1);
            let b = sample_triplet(&mut paths2, &mut r2);
            match (a, b) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => break,
                _ => return Err(TestCaseError::fail("streams diverged")),
            }
        }
    }
}

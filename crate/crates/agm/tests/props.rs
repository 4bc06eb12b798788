//! Property tests for the structural invariants.

use agm::data::DatasetFile;
use agm::features::Instance;
use agm::graph::TreeGraph;
use agm::loss::{evaluate_loss, make_loss, LossKind, LossSpec};
use agm::predict::project_simplex;
use agm::solve_node_game;
use ndarray::Array1;
use proptest::prelude::*;

fn loss_kind() -> impl Strategy<Value = LossKind> {
    prop_oneof![
        Just(LossKind::ZeroOne),
        Just(LossKind::Absolute),
        Just(LossKind::Squared),
    ]
}

proptest! {
    #[test]
    fn builtin_losses_are_symmetric_with_zero_diagonal(
        kind in loss_kind(),
        k in 2usize..6,
    ) {
        let m = make_loss(&LossSpec::new(kind, k), 1).unwrap();
        for a in 0..k {
            prop_assert_eq!(m.entries()[[a, a]], 0.0);
            for b in 0..k {
                prop_assert_eq!(m.entries()[[a, b]], m.entries()[[b, a]]);
            }
        }
    }

    #[test]
    fn squared_is_elementwise_square_of_absolute(k in 2usize..6) {
        let abs = make_loss(&LossSpec::new(LossKind::Absolute, k), 1).unwrap();
        let sq = make_loss(&LossSpec::new(LossKind::Squared, k), 1).unwrap();
        for a in 0..k {
            for b in 0..k {
                let x = abs.entries()[[a, b]];
                prop_assert!((sq.entries()[[a, b]] - x * x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_loss_is_permutation_invariant(
        kind in loss_kind(),
        pairs in prop::collection::vec((1usize..=3, 1usize..=3), 1..8),
        seed in 0u64..1000,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let spec = LossSpec::new(kind, 3);
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let base = evaluate_loss(&spec, &pred, &truth).unwrap();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pred2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let truth2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        let permuted = evaluate_loss(&spec, &pred2, &truth2).unwrap();
        prop_assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn topo_order_puts_children_first(
        parents in prop::collection::vec(0usize..6, 1..7),
        root_pick in 0usize..7,
    ) {
        // Random tree: node i+2 attaches to a previous node.
        let n = parents.len() + 1;
        let edges: Vec<(usize, usize)> = parents
            .iter()
            .enumerate()
            .map(|(i, &p)| (p % (i + 1) + 1, i + 2))
            .collect();
        let root = root_pick % n + 1;
        let tree = TreeGraph::build(n, &edges, root).unwrap();
        let order = tree.topo_order();
        prop_assert_eq!(order.len(), n);
        let mut seen = vec![false; n + 1];
        for &node in order {
            for &c in tree.children(node) {
                prop_assert!(seen[c], "child {} of {} not seen yet", c, node);
            }
            seen[node] = true;
        }
        prop_assert_eq!(tree.edges().len(), n - 1);
    }

    #[test]
    fn simplex_projection_is_idempotent_and_feasible(
        v in prop::collection::vec(-5.0f64..5.0, 1..8),
    ) {
        let out = project_simplex(&v);
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&x| x >= 0.0));
        let again = project_simplex(&out);
        for (a, b) in out.iter().zip(again.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn node_game_translation_equivariance(
        a in prop::collection::vec(-3.0f64..3.0, 2..5),
        c in -2.0f64..2.0,
        kind in loss_kind(),
    ) {
        let k = a.len();
        let loss = make_loss(&LossSpec::new(kind, k), 1).unwrap();
        let av = Array1::from_vec(a);
        let base = solve_node_game(&av, &loss).unwrap();
        let shifted = solve_node_game(&(&av + c), &loss).unwrap();
        prop_assert!((shifted.value - base.value - c).abs() < 1e-8);
        for (x, y) in base.r.iter().zip(shifted.r.iter()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn dataset_round_trip_is_identity(
        n in 1usize..5,
        seed in 0u64..500,
        labeled in any::<bool>(),
    ) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tree = TreeGraph::chain(n).unwrap();
        let inst = Instance {
            node_inputs: (0..n)
                .map(|_| Array1::from_iter((0..2).map(|_| rng.random_range(-100.0..100.0))))
                .collect(),
            edge_inputs: Vec::new(),
            labels: labeled.then(|| (0..n).map(|_| rng.random_range(1..=3)).collect()),
            tree,
        };
        let file = DatasetFile::new(3, 2, 0, vec![inst]);
        let reparsed = DatasetFile::parse(&file.to_text()).unwrap();
        prop_assert_eq!(&file, &reparsed);
    }
}

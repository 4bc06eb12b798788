//! Outer-objective checks: finite-difference agreement of the subgradient,
//! the convexity witness, and composition against the exhaustive oracle.

use agm::features::{FeatureTemplate, Instance, ModelParams};
use agm::features::instance_moments;
use agm::game::{exhaustive_joint_game, SolverConfig};
use agm::graph::TreeGraph;
use agm::learner::{agm_objective, agm_subgradient, TrainConfig};
use agm::features::EncodedTruth;
use agm::loss::{LossFamily, LossKind};
use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_labeled_chain(rng: &mut ChaCha8Rng, n: usize, k: usize, d: usize) -> Instance {
    Instance {
        tree: TreeGraph::chain(n).unwrap(),
        node_inputs: (0..n)
            .map(|_| Array1::from_iter((0..d).map(|_| rng.random_range(-1.0..1.0))))
            .collect(),
        edge_inputs: Vec::new(),
        labels: Some((0..n).map(|_| rng.random_range(1..=k)).collect()),
    }
}

fn random_params(rng: &mut ChaCha8Rng, template: FeatureTemplate, spread: f64) -> ModelParams {
    let mut p = ModelParams::zeros(template);
    p.theta_node.mapv_inplace(|_| rng.random_range(-spread..spread));
    p.theta_edge.mapv_inplace(|_| rng.random_range(-spread..spread));
    p
}

fn tight_cfg(lambda: f64) -> TrainConfig {
    TrainConfig {
        lambda,
        solver: SolverConfig::tight(1e-9, 30000),
        ..TrainConfig::default()
    }
}

#[test]
fn finite_differences_match_subgradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let kinds = [LossKind::ZeroOne, LossKind::Absolute];
    let h = 1e-4;
    for point in 0..10 {
        let n = 2 + point % 2;
        let k = 2;
        let template = FeatureTemplate::new(1, 0, k).unwrap();
        let data = vec![random_labeled_chain(&mut rng, n, k, 1)];
        let loss = LossFamily::plain(kinds[point % 2], k);
        let params = random_params(&mut rng, template, 0.8);
        let cfg = tight_cfg(0.1);
        let grad = agm_subgradient(&params, &data, &loss, &cfg).unwrap();
        let dims = template.node_dim() + template.edge_dim();
        for coord in 0..dims {
            let mut plus = params.clone();
            let mut minus = params.clone();
            if coord < template.node_dim() {
                plus.theta_node[coord] += h;
                minus.theta_node[coord] -= h;
            } else {
                plus.theta_edge[coord - template.node_dim()] += h;
                minus.theta_edge[coord - template.node_dim()] -= h;
            }
            let op = agm_objective(&plus, &data, &loss, &cfg).unwrap().value;
            let om = agm_objective(&minus, &data, &loss, &cfg).unwrap().value;
            let fd = (op - om) / (2.0 * h);
            let g = if coord < template.node_dim() {
                grad.node_part[coord]
            } else {
                grad.edge_part[coord - template.node_dim()]
            };
            let rel = (fd - g).abs() / g.abs().max(1.0);
            assert!(
                rel <= 1e-3,
                "point {point} coord {coord}: finite difference {fd} vs subgradient {g} (rel {rel:.2e})"
            );
        }
    }
}

#[test]
fn objective_is_convex_along_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let template = FeatureTemplate::new(0, 0, 2).unwrap();
    let data = vec![Instance {
        tree: TreeGraph::chain(3).unwrap(),
        node_inputs: vec![Array1::zeros(0); 3],
        edge_inputs: Vec::new(),
        labels: Some(vec![1, 2, 1]),
    }];
    let loss = LossFamily::plain(LossKind::ZeroOne, 2);
    let cfg = TrainConfig {
        lambda: 0.01,
        solver: SolverConfig::tight(1e-7, 5000),
        ..TrainConfig::default()
    };
    for trial in 0..100 {
        let p1 = random_params(&mut rng, template, 1.0);
        let p2 = random_params(&mut rng, template, 1.0);
        let t: f64 = rng.random_range(0.0..1.0);
        let mut mix = ModelParams::zeros(template);
        mix.theta_node = &p1.theta_node * t + &p2.theta_node * (1.0 - t);
        mix.theta_edge = &p1.theta_edge * t + &p2.theta_edge * (1.0 - t);
        let f1 = agm_objective(&p1, &data, &loss, &cfg).unwrap().value;
        let f2 = agm_objective(&p2, &data, &loss, &cfg).unwrap().value;
        let fm = agm_objective(&mix, &data, &loss, &cfg).unwrap().value;
        assert!(
            fm <= t * f1 + (1.0 - t) * f2 + 2e-3,
            "trial {trial}: f(mix) {fm} above the chord {}",
            t * f1 + (1.0 - t) * f2
        );
    }
}

#[test]
fn objective_composes_with_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for trial in 0..6 {
        let n = 3;
        let k = 3;
        let template = FeatureTemplate::new(0, 0, k).unwrap();
        let inst = random_labeled_chain(&mut rng, n, k, 0);
        let loss = LossFamily::plain(LossKind::Absolute, k);
        let params = random_params(&mut rng, template, 1.0);
        let cfg = TrainConfig {
            lambda: 0.0,
            solver: SolverConfig::tight(1e-6, 8000),
            ..TrainConfig::default()
        };
        let value = agm_objective(&params, &[inst.clone()], &loss, &cfg).unwrap().value;

        let pots = agm::features::assemble_potentials(&params, &inst).unwrap();
        let spec = loss.spec_for_len(n).unwrap();
        let losses = spec.matrices(n).unwrap();
        let truth = EncodedTruth::encode(&inst.tree, inst.labels.as_ref().unwrap(), k).unwrap();
        let (oracle, _) = exhaustive_joint_game(&inst.tree, &pots, &losses, Some(&truth)).unwrap();
        assert!(
            (value - oracle).abs() <= 1e-3 * oracle.abs().max(1.0),
            "trial {trial}: objective {value} vs oracle composition {oracle}"
        );
    }
}

#[test]
fn adversary_moments_at_gold_encoding_match_empirical() {
    // Plugging the one-hot encodings into the moment accumulator reproduces
    // the empirical moments exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let template = FeatureTemplate::new(2, 0, 3).unwrap();
    let inst = random_labeled_chain(&mut rng, 4, 3, 2);
    let truth = EncodedTruth::encode(&inst.tree, inst.labels.as_ref().unwrap(), 3).unwrap();
    let mut acc = agm::features::MomentVector::zeros(&template);
    agm::features::accumulate_moments(&mut acc, &template, &inst, &truth.z, &truth.big_z, 1.0);
    let gold = instance_moments(&template, &inst).unwrap();
    for (a, b) in acc.node_part.iter().zip(gold.node_part.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in acc.edge_part.iter().zip(gold.edge_part.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

//! Outer optimization of the adversarial objective: stochastic subgradient
//! descent on the moment-matching multipliers with ridge regularization.
//!
//! Each update solves the inner maximin problem per instance by dual
//! decomposition, recovers the adversary's pairwise marginals by optimal
//! transport, and steps along the expected feature difference between the
//! adversary and the gold labels.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{AgmError, Result};
use crate::features::{
    accumulate_moments, assemble_potentials, empirical_moments, instance_moments, FeatureTemplate,
    Instance, ModelParams, MomentVector,
};
use crate::game::{dual_decomposition, recover_pairwise, MarginalSet, SolverConfig};
use crate::loss::LossFamily;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Ridge weight on the multipliers.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Outer step `eta0 / (1 + decay * sqrt(t))`.
    pub eta0: f64,
    pub decay: f64,
    pub seed: u64,
    /// Inner maximin solver settings.
    pub solver: SolverConfig,
    /// Fraction of final updates averaged into the returned parameters.
    pub tail_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 50,
            batch_size: 1,
            eta0: 1.0,
            decay: 1.0,
            seed: 0,
            solver: SolverConfig::default(),
            tail_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Running objective estimate per epoch (average per-update value).
    pub epoch_objectives: Vec<f64>,
    /// Max-abs violation of the node moment constraints at the final
    /// parameters.
    pub moment_violation_node: f64,
    pub moment_violation_edge: f64,
    /// Fraction of inner solves that reached their gap tolerance.
    pub inner_converged_fraction: f64,
    pub converged: bool,
    pub seconds_per_update: f64,
}

/// Inner solve of one instance: saddle value and full adversary marginals.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub value: f64,
    pub marginals: MarginalSet,
    pub converged: bool,
}

/// Solves the inner problem for one instance at the given parameters and
/// recovers the pairwise adversary marginals edge by edge.
pub fn solve_instance(
    params: &ModelParams,
    instance: &Instance,
    loss: &LossFamily,
    solver: &SolverConfig,
) -> Result<InnerSolve> {
    let pots = assemble_potentials(params, instance)?;
    let spec = loss.spec_for_len(instance.n())?;
    let losses = spec.matrices(instance.n())?;
    let dual = dual_decomposition(&instance.tree, &pots, &losses, solver)?;

    let mut edge_marginals: Vec<Array2<f64>> = Vec::with_capacity(instance.tree.edges().len());
    for (j, &(parent, child)) in instance.tree.edges().iter().enumerate() {
        let q = recover_pairwise(
            &pots.edge[j],
            &dual.node_marginals[child - 1],
            &dual.node_marginals[parent - 1],
            &solver.transport,
        )?;
        edge_marginals.push(q);
    }
    // The predictor's equilibrium marginals are not needed for learning;
    // decode-time prediction recomputes them on demand.
    let predictor = vec![Array1::zeros(0); instance.n()];
    Ok(InnerSolve {
        value: dual.value,
        marginals: MarginalSet {
            predictor,
            adversary_node: dual.node_marginals,
            adversary_edge: edge_marginals,
        },
        converged: dual.converged,
    })
}

/// Content key of everything the inner solve depends on: the tree and the
/// inputs, but not the labels. Instances sharing a key share one solve.
fn unlabeled_key(instance: &Instance) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    instance.tree.root().hash(&mut h);
    instance.tree.edges().hash(&mut h);
    for x in &instance.node_inputs {
        for v in x.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    for x in &instance.edge_inputs {
        for v in x.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn unlabeled_eq(a: &Instance, b: &Instance) -> bool {
    a.tree == b.tree && a.node_inputs == b.node_inputs && a.edge_inputs == b.edge_inputs
}

/// Solves the inner problem for the given instance indices, reusing the
/// solution across instances with identical inputs.
fn solve_indices_cached(
    params: &ModelParams,
    dataset: &[Instance],
    indices: &[usize],
    loss: &LossFamily,
    solver: &SolverConfig,
) -> Result<Vec<(usize, std::rc::Rc<InnerSolve>)>> {
    use std::collections::HashMap;
    let mut cache: HashMap<u64, Vec<(usize, std::rc::Rc<InnerSolve>)>> = HashMap::new();
    let mut out = Vec::with_capacity(indices.len());
    for &m in indices {
        let instance = &dataset[m];
        let key = unlabeled_key(instance);
        let hit = cache.get(&key).and_then(|entries| {
            entries
                .iter()
                .find(|(idx, _)| unlabeled_eq(&dataset[*idx], instance))
                .map(|(_, solve)| solve.clone())
        });
        let solve = match hit {
            Some(s) => s,
            None => {
                let s = std::rc::Rc::new(solve_instance(params, instance, loss, solver)?);
                cache.entry(key).or_default().push((m, s.clone()));
                s
            }
        };
        out.push((m, solve));
    }
    Ok(out)
}

/// Expected adversary feature vector of one instance's inner solution.
pub fn adversary_moments(
    template: &FeatureTemplate,
    instance: &Instance,
    inner: &InnerSolve,
) -> MomentVector {
    let mut acc = MomentVector::zeros(template);
    accumulate_moments(
        &mut acc,
        template,
        instance,
        &inner.marginals.adversary_node,
        &inner.marginals.adversary_edge,
        1.0,
    );
    acc
}

#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    /// False when any inner solve exited at its iteration cap.
    pub inner_converged: bool,
}

/// Sample-averaged saddle value minus the gold potential, plus the ridge
/// term.
pub fn agm_objective(
    params: &ModelParams,
    dataset: &[Instance],
    loss: &LossFamily,
    cfg: &TrainConfig,
) -> Result<ObjectiveEval> {
    if dataset.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    let template = &params.template;
    let mut value = 0.0;
    let mut all_converged = true;
    let all_indices: Vec<usize> = (0..dataset.len()).collect();
    for (m, inner) in solve_indices_cached(params, dataset, &all_indices, loss, &cfg.solver)? {
        all_converged &= inner.converged;
        let gold = instance_moments(template, &dataset[m])?;
        let linear = params.theta_node.dot(&gold.node_part) + params.theta_edge.dot(&gold.edge_part);
        value += inner.value - linear;
    }
    value /= dataset.len() as f64;
    value += 0.5 * cfg.lambda * params.squared_norm();
    Ok(ObjectiveEval {
        value,
        inner_converged: all_converged,
    })
}

/// Subgradient of [`agm_objective`] at `params`: expected adversary moments
/// minus empirical moments plus the ridge term, in parameter layout.
pub fn agm_subgradient(
    params: &ModelParams,
    dataset: &[Instance],
    loss: &LossFamily,
    cfg: &TrainConfig,
) -> Result<MomentVector> {
    if dataset.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    let template = &params.template;
    let mut grad = MomentVector::zeros(template);
    let w = 1.0 / dataset.len() as f64;
    let all_indices: Vec<usize> = (0..dataset.len()).collect();
    for (m, inner) in solve_indices_cached(params, dataset, &all_indices, loss, &cfg.solver)? {
        accumulate_moments(
            &mut grad,
            template,
            &dataset[m],
            &inner.marginals.adversary_node,
            &inner.marginals.adversary_edge,
            w,
        );
    }
    let empirical = empirical_moments(template, dataset)?;
    grad.node_part -= &empirical.node_part;
    grad.edge_part -= &empirical.edge_part;
    grad.node_part += &(&params.theta_node * cfg.lambda);
    grad.edge_part += &(&params.theta_edge * cfg.lambda);
    Ok(grad)
}

/// Trains the adversarial model by stochastic subgradient descent with tail
/// averaging. Inner solves that miss their tolerance still contribute their
/// best iterate; an epoch in which more than half of them fail aborts.
pub fn train_agm(
    template: &FeatureTemplate,
    dataset: &[Instance],
    loss: &LossFamily,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if dataset.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    for instance in dataset {
        instance.validate(template)?;
        if instance.labels.is_none() {
            return Err(AgmError::Training("training instance without labels".into()));
        }
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::zeros(*template);
    let batch = cfg.batch_size.max(1);
    let updates_per_epoch = dataset.len().div_ceil(batch);
    let total_updates = cfg.epochs * updates_per_epoch;
    let tail_start = total_updates - (total_updates as f64 * cfg.tail_fraction).ceil() as usize;
    let mut tail = ModelParams::zeros(*template);
    let mut tail_count = 0usize;

    let mut report = TrainReport::default();
    let mut inner_total = 0usize;
    let mut inner_converged = 0usize;
    let started = std::time::Instant::now();

    let mut t = 0usize;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_value = 0.0;
        let mut epoch_failures = 0usize;
        let mut epoch_solves = 0usize;
        for chunk in indices.chunks(batch) {
            t += 1;
            let w = 1.0 / chunk.len() as f64;
            let mut grad = MomentVector::zeros(template);
            let mut update_value = 0.0;
            let solves = solve_indices_cached(&params, dataset, chunk, loss, &cfg.solver)?;
            for (m, inner) in &solves {
                let instance = &dataset[*m];
                epoch_solves += 1;
                inner_total += 1;
                if inner.converged {
                    inner_converged += 1;
                } else {
                    epoch_failures += 1;
                }
                accumulate_moments(
                    &mut grad,
                    template,
                    instance,
                    &inner.marginals.adversary_node,
                    &inner.marginals.adversary_edge,
                    w,
                );
                let gold = instance_moments(template, instance)?;
                grad.node_part -= &(&gold.node_part * w);
                grad.edge_part -= &(&gold.edge_part * w);
                update_value += w
                    * (inner.value
                        - params.theta_node.dot(&gold.node_part)
                        - params.theta_edge.dot(&gold.edge_part));
            }
            grad.node_part += &(&params.theta_node * cfg.lambda);
            grad.edge_part += &(&params.theta_edge * cfg.lambda);

            let mut eta = cfg.eta0 / (1.0 + cfg.decay * (t as f64).sqrt());
            if cfg.lambda > 0.0 {
                // Keep the ridge contraction stable for any lambda.
                eta = eta.min(0.5 / cfg.lambda);
            }
            params.theta_node -= &(&grad.node_part * eta);
            params.theta_edge -= &(&grad.edge_part * eta);

            epoch_value += update_value + 0.5 * cfg.lambda * params.squared_norm();
            if t > tail_start {
                tail.theta_node += &params.theta_node;
                tail.theta_edge += &params.theta_edge;
                tail_count += 1;
            }
        }
        report
            .epoch_objectives
            .push(epoch_value / updates_per_epoch as f64);
        if epoch_failures * 2 > epoch_solves {
            return Err(AgmError::Training(format!(
                "{epoch_failures} of {epoch_solves} inner solves missed tolerance in one epoch; \
                 loosen gap_tol or raise max_iters"
            )));
        }
    }
    if tail_count > 0 {
        params.theta_node = &tail.theta_node / tail_count as f64;
        params.theta_edge = &tail.theta_edge / tail_count as f64;
    }

    // Final moment violation against the empirical moments.
    let empirical = empirical_moments(template, dataset)?;
    let mut adv = MomentVector::zeros(template);
    let w = 1.0 / dataset.len() as f64;
    let mut final_all_converged = true;
    let all_indices: Vec<usize> = (0..dataset.len()).collect();
    for (m, inner) in solve_indices_cached(&params, dataset, &all_indices, loss, &cfg.solver)? {
        final_all_converged &= inner.converged;
        accumulate_moments(
            &mut adv,
            template,
            &dataset[m],
            &inner.marginals.adversary_node,
            &inner.marginals.adversary_edge,
            w,
        );
    }
    let diff = adv.sub(&empirical);
    report.moment_violation_node = diff
        .node_part
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    report.moment_violation_edge = diff
        .edge_part
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    report.inner_converged_fraction = if inner_total > 0 {
        inner_converged as f64 / inner_total as f64
    } else {
        1.0
    };
    report.converged = final_all_converged;
    report.seconds_per_update = started.elapsed().as_secs_f64() / total_updates.max(1) as f64;

    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::bias_only_instance;
    use crate::graph::TreeGraph;
    use crate::loss::LossKind;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            solver: SolverConfig::tight(1e-5, 400),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn objective_at_zero_params_is_game_value() {
        let template = FeatureTemplate::new(0, 0, 2).unwrap();
        let params = ModelParams::zeros(template);
        let data = vec![bias_only_instance(TreeGraph::chain(2).unwrap(), Some(vec![1, 2]))];
        let loss = LossFamily::plain(LossKind::ZeroOne, 2);
        let mut cfg = quick_cfg();
        cfg.lambda = 0.0;
        let eval = agm_objective(&params, &data, &loss, &cfg).unwrap();
        assert!((eval.value - 1.0).abs() < 1e-6, "value {}", eval.value);
        // The ridge term vanishes at zero parameters regardless of lambda.
        cfg.lambda = 1.0;
        let eval2 = agm_objective(&params, &data, &loss, &cfg).unwrap();
        assert!((eval2.value - eval.value).abs() < 1e-12);
    }

    #[test]
    fn opposite_singleton_labels_have_zero_subgradient() {
        // Two single-node instances with opposite labels: the uniform game
        // solution already matches the empirical moments at zero parameters.
        let template = FeatureTemplate::new(0, 0, 2).unwrap();
        let params = ModelParams::zeros(template);
        let data = vec![
            bias_only_instance(TreeGraph::chain(1).unwrap(), Some(vec![1])),
            bias_only_instance(TreeGraph::chain(1).unwrap(), Some(vec![2])),
        ];
        let loss = LossFamily::plain(LossKind::ZeroOne, 2);
        let mut cfg = quick_cfg();
        cfg.lambda = 0.0;
        let grad = agm_subgradient(&params, &data, &loss, &cfg).unwrap();
        assert!(grad.linf_norm() <= 1e-6, "norm {}", grad.linf_norm());
    }

    #[test]
    fn large_lambda_keeps_parameters_small() {
        let template = FeatureTemplate::new(0, 0, 2).unwrap();
        let data = vec![bias_only_instance(TreeGraph::chain(2).unwrap(), Some(vec![1, 1]))];
        let loss = LossFamily::plain(LossKind::ZeroOne, 2);
        let cfg = TrainConfig {
            lambda: 1e3,
            epochs: 30,
            seed: 5,
            solver: SolverConfig::tight(1e-4, 200),
            ..TrainConfig::default()
        };
        let (params, _) = train_agm(&template, &data, &loss, &cfg).unwrap();
        assert!(params.squared_norm().sqrt() <= 1e-2);
    }

    #[test]
    fn single_instance_moment_matching() {
        let template = FeatureTemplate::new(3, 0, 2).unwrap();
        let tree = TreeGraph::chain(3).unwrap();
        let inst = Instance {
            tree,
            node_inputs: (0..3)
                .map(|i| Array1::from_shape_fn(3, |j| if i == j { 1.0 } else { 0.0 }))
                .collect(),
            edge_inputs: Vec::new(),
            labels: Some(vec![1, 2, 1]),
        };
        let loss = LossFamily::plain(LossKind::ZeroOne, 2);
        let cfg = TrainConfig {
            lambda: 0.0,
            epochs: 1200,
            eta0: 1.0,
            decay: 0.5,
            seed: 2,
            solver: SolverConfig::tight(1e-6, 600),
            ..TrainConfig::default()
        };
        let (params, report) = train_agm(&template, &[inst.clone()], &loss, &cfg).unwrap();
        assert!(
            report.moment_violation_node <= 1e-2 && report.moment_violation_edge <= 1e-2,
            "violations: node {} edge {}",
            report.moment_violation_node,
            report.moment_violation_edge
        );
        let _ = params;
    }
}

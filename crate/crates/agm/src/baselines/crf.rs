//! Conditional random field on trees: exact sum-product inference in the log
//! domain, maximum-likelihood training by gradient ascent with backtracking,
//! and Bayes decoding against an additive loss metric.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{AgmError, Result};
use crate::features::{
    accumulate_moments, assemble_potentials, empirical_moments, FeatureTemplate, Instance,
    ModelParams, MomentVector, Potentials,
};
use crate::graph::TreeGraph;
use crate::loss::LossSpec;
use crate::predict::Prediction;

#[derive(Debug, Clone)]
pub struct CrfModel {
    pub params: ModelParams,
    pub train_log_likelihood: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfTrainConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Convergence threshold on the max-abs gradient coordinate.
    pub grad_tol: f64,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_iters: 2000,
            grad_tol: 1e-5,
        }
    }
}

/// Marginals and log partition of one instance.
#[derive(Debug, Clone)]
pub struct CrfBeliefs {
    pub node_marginals: Vec<Array1<f64>>,
    /// One per `tree.edges()` entry; rows = parent label, columns = child.
    pub edge_marginals: Vec<Array2<f64>>,
    pub log_partition: f64,
}

/// Exact sum-product over the tree for the model's potentials.
pub fn crf_infer(params: &ModelParams, instance: &Instance) -> Result<CrfBeliefs> {
    let pots = assemble_potentials(params, instance)?;
    Ok(infer_potentials(&instance.tree, &pots))
}

/// Two-pass belief propagation in the log domain.
pub fn infer_potentials(tree: &TreeGraph, pots: &Potentials) -> CrfBeliefs {
    let n = tree.node_count();
    let k = pots.node[0].len();
    let mut edge_of_child = vec![usize::MAX; n];
    for (j, &(_, c)) in tree.edges().iter().enumerate() {
        edge_of_child[c - 1] = j;
    }

    // Upward pass: up[i-1][y_parent] aggregates the subtree below node i.
    let mut up: Vec<Array1<f64>> = vec![Array1::zeros(k); n];
    // alpha[i-1][y_i] = local potential plus all upward messages into i.
    let mut alpha: Vec<Array1<f64>> = vec![Array1::zeros(k); n];
    for &i in tree.topo_order() {
        let mut a = pots.node[i - 1].clone();
        for &c in tree.children(i) {
            a += &up[c - 1];
        }
        alpha[i - 1] = a;
        if !tree.is_root(i) {
            let b = &pots.edge[edge_of_child[i - 1]];
            let mut msg = Array1::zeros(k);
            for yp in 0..k {
                msg[yp] = log_sum_exp((0..k).map(|yi| b[[yp, yi]] + alpha[i - 1][yi]));
            }
            up[i - 1] = msg;
        }
    }
    let root = tree.root();
    let log_partition = log_sum_exp(alpha[root - 1].iter().cloned());

    // Downward pass: down[i-1][y_i] aggregates everything above node i.
    let mut down: Vec<Array1<f64>> = vec![Array1::zeros(k); n];
    let mut order: Vec<usize> = tree.topo_order().to_vec();
    order.reverse();
    for &i in &order {
        for &c in tree.children(i) {
            let b = &pots.edge[edge_of_child[c - 1]];
            let mut msg = Array1::zeros(k);
            for yc in 0..k {
                msg[yc] = log_sum_exp(
                    (0..k).map(|yp| b[[yp, yc]] + alpha[i - 1][yp] - up[c - 1][yp] + down[i - 1][yp]),
                );
            }
            down[c - 1] = msg;
        }
    }

    let node_marginals: Vec<Array1<f64>> = (1..=n)
        .map(|i| {
            let logm = &alpha[i - 1] + &down[i - 1];
            normalized_exp(&logm, log_partition)
        })
        .collect();

    let edge_marginals: Vec<Array2<f64>> = tree
        .edges()
        .iter()
        .map(|&(p, c)| {
            let b = &pots.edge[edge_of_child[c - 1]];
            let mut m = Array2::zeros((k, k));
            for yp in 0..k {
                for yc in 0..k {
                    let logv = b[[yp, yc]]
                        + alpha[p - 1][yp] - up[c - 1][yp] + down[p - 1][yp]
                        + alpha[c - 1][yc]
                        - log_partition;
                    m[[yp, yc]] = logv.exp();
                }
            }
            m
        })
        .collect();

    CrfBeliefs {
        node_marginals,
        edge_marginals,
        log_partition,
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalized_exp(logm: &Array1<f64>, log_z: f64) -> Array1<f64> {
    logm.mapv(|v| (v - log_z).exp())
}

/// Average log-likelihood minus the ridge penalty, and its gradient.
fn objective_and_gradient(
    template: &FeatureTemplate,
    dataset: &[Instance],
    params: &ModelParams,
    empirical: &MomentVector,
    lambda: f64,
) -> Result<(f64, MomentVector)> {
    let mut loglik = 0.0;
    let mut expected = MomentVector::zeros(template);
    let w = 1.0 / dataset.len() as f64;
    for instance in dataset {
        let labels = instance
            .labels
            .as_ref()
            .ok_or_else(|| AgmError::Training("instance has no gold labels".into()))?;
        let pots = assemble_potentials(params, instance)?;
        let beliefs = infer_potentials(&instance.tree, &pots);
        let mut score = 0.0;
        for i in instance.tree.nodes() {
            score += pots.node[i - 1][labels[i - 1] - 1];
        }
        for (j, &(p, c)) in instance.tree.edges().iter().enumerate() {
            score += pots.edge[j][[labels[p - 1] - 1, labels[c - 1] - 1]];
        }
        loglik += w * (score - beliefs.log_partition);
        accumulate_moments(
            &mut expected,
            template,
            instance,
            &beliefs.node_marginals,
            &beliefs.edge_marginals,
            w,
        );
    }
    let objective = loglik - 0.5 * lambda * params.squared_norm();
    let grad = MomentVector {
        node_part: &empirical.node_part - &expected.node_part - &(&params.theta_node * lambda),
        edge_part: &empirical.edge_part - &expected.edge_part - &(&params.theta_edge * lambda),
    };
    Ok((objective, grad))
}

/// Maximum-likelihood training by gradient ascent with an Armijo backtracking
/// line search; converges when the gradient's max-abs coordinate falls below
/// `grad_tol`.
pub fn train_crf(
    template: &FeatureTemplate,
    dataset: &[Instance],
    cfg: &CrfTrainConfig,
) -> Result<CrfModel> {
    if dataset.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    let empirical = empirical_moments(template, dataset)?;
    let mut params = ModelParams::zeros(*template);
    let (mut obj, mut grad) =
        objective_and_gradient(template, dataset, &params, &empirical, cfg.lambda)?;
    let mut converged = false;
    let mut step = 1.0f64;
    for _ in 0..cfg.max_iters {
        let gnorm_inf = grad.linf_norm();
        if gnorm_inf <= cfg.grad_tol {
            converged = true;
            break;
        }
        let gnorm2: f64 = grad.node_part.iter().map(|v| v * v).sum::<f64>()
            + grad.edge_part.iter().map(|v| v * v).sum::<f64>();
        // Backtrack from a slightly optimistic step.
        step = (step * 2.0).min(16.0);
        let mut accepted = false;
        while step >= 1e-14 {
            let mut trial = params.clone();
            trial.theta_node = &params.theta_node + &(&grad.node_part * step);
            trial.theta_edge = &params.theta_edge + &(&grad.edge_part * step);
            let (trial_obj, trial_grad) =
                objective_and_gradient(template, dataset, &trial, &empirical, cfg.lambda)?;
            if trial_obj >= obj + 1e-4 * step * gnorm2 {
                params = trial;
                obj = trial_obj;
                grad = trial_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No ascent direction at floating-point resolution.
            converged = grad.linf_norm() <= cfg.grad_tol;
            break;
        }
    }
    Ok(CrfModel {
        params,
        train_log_likelihood: obj,
        gradient_norm: grad.linf_norm(),
        converged,
    })
}

/// Bayes decoding for an additive loss: each node independently minimizes the
/// expected loss of its marginal, ties toward the smaller label.
pub fn crf_bayes_decode(
    model: &CrfModel,
    instance: &Instance,
    loss_spec: &LossSpec,
) -> Result<Prediction> {
    let beliefs = crf_infer(&model.params, instance)?;
    decode_marginals(&beliefs.node_marginals, instance.n(), loss_spec)
}

/// Bayes decoding from precomputed node marginals.
pub fn decode_marginals(
    node_marginals: &[Array1<f64>],
    n: usize,
    loss_spec: &LossSpec,
) -> Result<Prediction> {
    let mut labels = Vec::with_capacity(n);
    let mut total_expected = 0.0;
    for i in 1..=n {
        let loss = loss_spec.matrix_for_node(i)?;
        let expected = loss.entries().dot(&node_marginals[i - 1]);
        let mut best = 0;
        for a in 1..expected.len() {
            if expected[a] < expected[best] - 1e-12 {
                best = a;
            }
        }
        total_expected += expected[best];
        labels.push(best + 1);
    }
    Ok(Prediction::Map {
        labels,
        score: -total_expected,
    })
}

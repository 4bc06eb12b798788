//! Structured SVM with the margin-rescaled hinge
//! `max_y [ loss(y, gold) + theta'(Phi(x, y) - Phi(x, gold)) ]`,
//! trained by stochastic subgradient descent. The most violated assignment
//! comes from MAP decoding with the loss column of the gold label added to
//! the node potentials.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{AgmError, Result};
use crate::features::{
    accumulate_moments, assemble_potentials, instance_moments, EncodedTruth, FeatureTemplate,
    Instance, ModelParams, MomentVector,
};
use crate::learner::TrainConfig;
use crate::loss::LossFamily;
use crate::predict::viterbi_decode;

#[derive(Debug, Clone)]
pub struct SsvmModel {
    pub params: ModelParams,
    /// Average hinge over the training set at the returned parameters.
    pub final_hinge: f64,
}

/// Loss-augmented MAP: maximizes potential plus loss against the gold labels.
pub fn loss_augmented_decode(
    params: &ModelParams,
    instance: &Instance,
    loss: &LossFamily,
) -> Result<(Vec<usize>, f64)> {
    let gold = instance
        .labels
        .as_ref()
        .ok_or_else(|| AgmError::Training("instance has no gold labels".into()))?;
    let pots = assemble_potentials(params, instance)?;
    let spec = loss.spec_for_len(instance.n())?;
    let mut node = pots.node.clone();
    for i in instance.tree.nodes() {
        let l = spec.matrix_for_node(i)?;
        let col = l.entries().column(gold[i - 1] - 1);
        for (slot, &v) in node[i - 1].iter_mut().zip(col.iter()) {
            *slot += v;
        }
    }
    Ok(viterbi_decode(&instance.tree, &node, &pots.edge))
}

/// Hinge value of one instance at the given parameters.
pub fn hinge_value(params: &ModelParams, instance: &Instance, loss: &LossFamily) -> Result<f64> {
    let (_, augmented_score) = loss_augmented_decode(params, instance, loss)?;
    let gold_score = score_of(params, instance, None)?;
    Ok(augmented_score - gold_score)
}

fn score_of(
    params: &ModelParams,
    instance: &Instance,
    labels: Option<&[usize]>,
) -> Result<f64> {
    let gold;
    let labels = match labels {
        Some(l) => l,
        None => {
            gold = instance
                .labels
                .clone()
                .ok_or_else(|| AgmError::Training("instance has no gold labels".into()))?;
            &gold
        }
    };
    let pots = assemble_potentials(params, instance)?;
    let mut s = 0.0;
    for i in instance.tree.nodes() {
        s += pots.node[i - 1][labels[i - 1] - 1];
    }
    for (j, &(p, c)) in instance.tree.edges().iter().enumerate() {
        s += pots.edge[j][[labels[p - 1] - 1, labels[c - 1] - 1]];
    }
    Ok(s)
}

/// Stochastic subgradient training on average hinge plus `lambda/2 |theta|^2`,
/// with tail averaging of the iterates.
pub fn train_ssvm(
    template: &FeatureTemplate,
    dataset: &[Instance],
    loss: &LossFamily,
    cfg: &TrainConfig,
) -> Result<SsvmModel> {
    if dataset.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::zeros(*template);
    let total_updates = cfg.epochs * dataset.len().div_ceil(cfg.batch_size.max(1));
    let tail_start = total_updates - (total_updates as f64 * cfg.tail_fraction).ceil() as usize;
    let mut tail = ModelParams::zeros(*template);
    let mut tail_count = 0usize;

    let mut t = 0usize;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size.max(1)) {
            t += 1;
            let mut grad = MomentVector::zeros(template);
            let w = 1.0 / batch.len() as f64;
            for &m in batch {
                let instance = &dataset[m];
                let (violator, _) = loss_augmented_decode(&params, instance, loss)?;
                let truth = EncodedTruth::encode(
                    &instance.tree,
                    &violator,
                    template.k,
                )?;
                accumulate_moments(&mut grad, template, instance, &truth.z, &truth.big_z, w);
                let gold = instance_moments(template, instance)?;
                grad.node_part -= &(&gold.node_part * w);
                grad.edge_part -= &(&gold.edge_part * w);
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

            if t > tail_start {
                tail.theta_node += &params.theta_node;
                tail.theta_edge += &params.theta_edge;
                tail_count += 1;
            }
        }
    }
    if tail_count > 0 {
        params.theta_node = &tail.theta_node / tail_count as f64;
        params.theta_edge = &tail.theta_edge / tail_count as f64;
    }

    let mut hinge = 0.0;
    for instance in dataset {
        hinge += hinge_value(&params, instance, loss)?;
    }
    hinge /= dataset.len() as f64;

    Ok(SsvmModel {
        params,
        final_hinge: hinge,
    })
}

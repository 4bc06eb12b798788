//! Experiment orchestration: random train/test splits, per-metric training
//! and evaluation of each model kind, cross-validation of the ridge weight,
//! and report emission as an aligned text table plus per-instance CSV.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::baselines::{crf_bayes_decode, train_crf, train_ssvm, CrfTrainConfig};
use crate::data::DatasetFile;
use crate::error::{AgmError, Result};
use crate::features::Instance;
use crate::learner::{train_agm, TrainConfig};
use crate::loss::{evaluate_loss, LossFamily};
use crate::model_io::ModelKind;
use crate::predict::predict_map;
use crate::stats::wilcoxon_signed_rank;

pub const SIGNIFICANCE_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of instances used for training, strictly inside (0, 1).
    pub train_fraction: f64,
    pub num_splits: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            num_splits: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub metrics: Vec<LossFamily>,
    pub models: Vec<ModelKind>,
    pub train: TrainConfig,
    #[serde(default)]
    pub crf: CrfTrainConfig,
    pub split: SplitSpec,
    /// Ridge grid for cross-validation; empty means use `train.lambda`.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

fn default_cv_folds() -> usize {
    5
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() || self.models.is_empty() {
            return Err(AgmError::Config(
                "experiment needs at least one metric and one model".into(),
            ));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(AgmError::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.split.num_splits == 0 {
            return Err(AgmError::Config("num_splits must be at least 1".into()));
        }
        if self.lambda_grid.iter().any(|&l| l < 0.0) {
            return Err(AgmError::Config("lambda grid entries must be >= 0".into()));
        }
        Ok(())
    }

    pub fn parse_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| AgmError::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config serializes")
    }
}

/// Deterministic disjoint train/test split for one split index.
pub fn split_indices(
    n: usize,
    spec: &SplitSpec,
    split_id: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let stream = spec
        .seed
        .wrapping_add((split_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stream);
    indices.shuffle(&mut rng);
    let train_len = ((n as f64 * spec.train_fraction).round() as usize).clamp(1, n - 1);
    let train = indices[..train_len].to_vec();
    let test = indices[train_len..].to_vec();
    (train, test)
}

/// One evaluated (metric, model, split, instance) record.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub metric: String,
    pub model: String,
    pub model_index: usize,
    pub split: usize,
    pub instance: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct ReportCell {
    pub model: String,
    pub split_means: Vec<f64>,
    pub mean: f64,
    /// Best column or not significantly worse than the best.
    pub highlighted: bool,
    /// Two-sided p-value against the best column (1.0 for the best itself).
    pub p_against_best: f64,
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub metric: String,
    pub cells: Vec<ReportCell>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<LossRecord>,
    /// Chosen ridge weight per (metric, model) when a grid was searched.
    pub chosen_lambdas: Vec<(String, String, f64)>,
}

/// Runs the full protocol. Training happens once per (metric, model, split);
/// the committee of splits feeds the significance tests.
pub fn run_experiment(cfg: &ExperimentConfig, data: &DatasetFile) -> Result<ExperimentReport> {
    cfg.validate()?;
    data.validate()?;
    let template = data.template()?;
    let instances = data.labeled();
    if instances.len() < 2 {
        return Err(AgmError::Config(
            "experiment needs at least two labeled instances".into(),
        ));
    }
    for metric in &cfg.metrics {
        if metric.k != data.k {
            return Err(AgmError::Config(format!(
                "metric '{}' has k={} but the dataset has k={}",
                metric.describe(),
                metric.k,
                data.k
            )));
        }
    }

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut chosen_lambdas = Vec::new();

    for metric in &cfg.metrics {
        let metric_name = metric.describe();
        let mut cells: Vec<ReportCell> = Vec::new();
        for (model_index, &model) in cfg.models.iter().enumerate() {
            // Regularization choice: cross-validate on the first split's
            // training set when a grid is configured.
            let lambda = if cfg.lambda_grid.len() > 1 && model != ModelKind::Oracle {
                let (train_idx, _) = split_indices(instances.len(), &cfg.split, 0);
                let train: Vec<Instance> =
                    train_idx.iter().map(|&i| instances[i].clone()).collect();
                let (best, _) = cross_validate(cfg, model, metric, &train)?;
                chosen_lambdas.push((metric_name.clone(), model.name().to_string(), best));
                best
            } else {
                cfg.lambda_grid.first().copied().unwrap_or(cfg.train.lambda)
            };

            let mut split_means = Vec::with_capacity(cfg.split.num_splits);
            for split_id in 0..cfg.split.num_splits {
                let (train_idx, test_idx) = split_indices(instances.len(), &cfg.split, split_id);
                let train: Vec<Instance> =
                    train_idx.iter().map(|&i| instances[i].clone()).collect();
                let test: Vec<Instance> = test_idx.iter().map(|&i| instances[i].clone()).collect();
                let losses = train_and_eval(
                    cfg, model, metric, &template, &train, &test, lambda, split_id,
                )?;
                let mean = losses.iter().sum::<f64>() / losses.len() as f64;
                for (j, &l) in losses.iter().enumerate() {
                    records.push(LossRecord {
                        metric: metric_name.clone(),
                        model: model.name().to_string(),
                        model_index,
                        split: split_id,
                        instance: j,
                        loss: l,
                    });
                }
                split_means.push(mean);
            }
            let mean = split_means.iter().sum::<f64>() / split_means.len() as f64;
            cells.push(ReportCell {
                model: model.name().to_string(),
                split_means,
                mean,
                highlighted: false,
                p_against_best: 1.0,
            });
        }

        // Highlight the best column and everything statistically
        // indistinguishable from it.
        let best = (0..cells.len())
            .min_by(|&a, &b| cells[a].mean.partial_cmp(&cells[b].mean).unwrap())
            .expect("at least one model");
        let best_means = cells[best].split_means.clone();
        for (i, cell) in cells.iter_mut().enumerate() {
            if i == best {
                cell.highlighted = true;
                cell.p_against_best = 1.0;
            } else {
                let res = wilcoxon_signed_rank(&cell.split_means, &best_means);
                cell.p_against_best = res.p_value;
                cell.highlighted = res.p_value >= SIGNIFICANCE_ALPHA;
            }
        }
        rows.push(ReportRow {
            metric: metric_name,
            cells,
        });
    }

    Ok(ExperimentReport {
        rows,
        records,
        chosen_lambdas,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_and_eval(
    cfg: &ExperimentConfig,
    model: ModelKind,
    metric: &LossFamily,
    template: &crate::features::FeatureTemplate,
    train: &[Instance],
    test: &[Instance],
    lambda: f64,
    split_id: usize,
) -> Result<Vec<f64>> {
    let mut train_cfg = cfg.train;
    train_cfg.lambda = lambda;
    train_cfg.seed = cfg.train.seed.wrapping_add(split_id as u64);

    let predictions: Vec<Vec<usize>> = match model {
        ModelKind::Oracle => test
            .iter()
            .map(|inst| inst.labels.clone().expect("labeled instance"))
            .collect(),
        ModelKind::Agm => {
            let (params, _) = train_agm(template, train, metric, &train_cfg)?;
            test.iter()
                .map(|inst| predict_map(&params, inst).map(|p| p.labels()))
                .collect::<Result<_>>()?
        }
        ModelKind::Ssvm => {
            let model = train_ssvm(template, train, metric, &train_cfg)?;
            test.iter()
                .map(|inst| predict_map(&model.params, inst).map(|p| p.labels()))
                .collect::<Result<_>>()?
        }
        ModelKind::Crf => {
            let mut crf_cfg = cfg.crf;
            crf_cfg.lambda = lambda;
            let model = train_crf(template, train, &crf_cfg)?;
            test.iter()
                .map(|inst| crf_bayes_decode(&model, inst, &metric.spec_for_len(inst.n())?).map(|p| p.labels()))
                .collect::<Result<_>>()?
        }
    };

    let mut losses = Vec::with_capacity(test.len());
    for (inst, pred) in test.iter().zip(predictions.iter()) {
        let spec = metric.spec_for_len(inst.n())?;
        let gold = inst.labels.as_ref().expect("labeled instance");
        losses.push(evaluate_loss(&spec, pred, gold)?);
    }
    Ok(losses)
}

/// K-fold cross-validation of the ridge weight on a training set; returns the
/// winning lambda (ties to the smaller) and the per-lambda mean losses.
pub fn cross_validate(
    cfg: &ExperimentConfig,
    model: ModelKind,
    metric: &LossFamily,
    train: &[Instance],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if model == ModelKind::Oracle {
        return Err(AgmError::Config("the oracle decoder takes no lambda".into()));
    }
    let folds = cfg.cv_folds.max(2).min(train.len());
    if train.len() < 2 {
        return Err(AgmError::Config(
            "cross-validation needs at least two training instances".into(),
        ));
    }
    let template = crate::features::FeatureTemplate::new(
        train[0].node_inputs[0].len(),
        train[0].edge_inputs.first().map_or(0, |e| e.len()),
        metric.k,
    )?;

    let grid: Vec<f64> = if cfg.lambda_grid.is_empty() {
        vec![cfg.train.lambda]
    } else {
        cfg.lambda_grid.clone()
    };

    let mut table = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let mut fold_losses = Vec::new();
        for fold in 0..folds {
            let holdout: Vec<Instance> = train
                .iter()
                .enumerate()
                .filter(|(i, _)| i % folds == fold)
                .map(|(_, inst)| inst.clone())
                .collect();
            let kept: Vec<Instance> = train
                .iter()
                .enumerate()
                .filter(|(i, _)| i % folds != fold)
                .map(|(_, inst)| inst.clone())
                .collect();
            if holdout.is_empty() || kept.is_empty() {
                continue;
            }
            let losses = train_and_eval(
                cfg, model, metric, &template, &kept, &holdout, lambda, usize::MAX - fold,
            )?;
            fold_losses.extend(losses);
        }
        let mean = fold_losses.iter().sum::<f64>() / fold_losses.len().max(1) as f64;
        table.push((lambda, mean));
    }
    let best = table
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.partial_cmp(&b.0).unwrap()))
        .expect("non-empty grid");
    Ok((best.0, table))
}

impl ExperimentReport {
    /// Aligned text table, one row per metric and one column per model.
    /// Highlighted entries (best or statistically tied with the best) carry a
    /// trailing `*`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let width = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .max()
            .unwrap_or(10)
            .max(6);
        let _ = write!(out, "{:<width$}", "metric");
        if let Some(first) = self.rows.first() {
            for cell in &first.cells {
                let _ = write!(out, " {:>10}", cell.model);
            }
        }
        let _ = writeln!(out);
        for row in &self.rows {
            let _ = write!(out, "{:<width$}", row.metric);
            for cell in &row.cells {
                let mark = if cell.highlighted { "*" } else { " " };
                let _ = write!(out, " {:>9.4}{}", cell.mean, mark);
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(
            out,
            "* best, or not significantly worse (Wilcoxon signed-rank, alpha = {SIGNIFICANCE_ALPHA})"
        );
        if !self.chosen_lambdas.is_empty() {
            let _ = writeln!(out, "cross-validated lambda:");
            for (metric, model, lambda) in &self.chosen_lambdas {
                let _ = writeln!(out, "  {metric} / {model}: {lambda}");
            }
        }
        out
    }

    /// Per-instance records as CSV; split and report averages are exactly
    /// recomputable from these rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,model,model_index,split,instance,loss\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.metric, r.model, r.model_index, r.split, r.instance, r.loss
            );
        }
        out
    }
}

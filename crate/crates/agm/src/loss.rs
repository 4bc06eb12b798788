//! Additive per-node loss metrics.
//!
//! A [`LossMatrix`] is the payoff of the per-node prediction game as well as
//! the evaluation metric; a [`LossSpec`] describes how to build one for each
//! node of an instance. All built-in metrics have zero diagonal and treat the
//! label values for the ordinal metrics as `1..=k` in label order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{AgmError, Result};

/// `k x k` table with `entry[a][b] = loss(predicted = a+1, actual = b+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    entries: Array2<f64>,
}

impl LossMatrix {
    /// Validates non-negativity and finiteness; the zero-diagonal requirement
    /// applies to all built-in constructors and custom cost tables.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r == 0 {
            return Err(AgmError::InvalidLoss(format!(
                "loss matrix must be square and non-empty, got {r}x{c}"
            )));
        }
        for ((i, j), &v) in entries.indexed_iter() {
            if !v.is_finite() {
                return Err(AgmError::NonFinite(format!("loss entry ({i},{j})")));
            }
            if v < 0.0 {
                return Err(AgmError::InvalidLoss(format!(
                    "loss entry ({i},{j}) = {v} is negative"
                )));
            }
            if i == j && v != 0.0 {
                return Err(AgmError::InvalidLoss(format!(
                    "diagonal entry ({i},{i}) = {v} must be zero"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    /// Loss of predicting label `a` when the true label is `b` (both 1-based).
    pub fn loss(&self, a: usize, b: usize) -> f64 {
        self.entries[[a - 1, b - 1]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Multiplies every entry by `w` (node weighting).
    pub fn scaled(&self, w: f64) -> Result<Self> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(AgmError::InvalidLoss(format!(
                "loss weight must be positive and finite, got {w}"
            )));
        }
        Ok(Self {
            entries: &self.entries * w,
        })
    }

    /// If the matrix equals `w * (ones - identity)` for some `w > 0`, returns
    /// `w`. Enables the sorted fast path of the node-game solver.
    pub fn as_scaled_zero_one(&self) -> Option<f64> {
        let k = self.k();
        if k < 2 {
            return None;
        }
        let w = self.entries[[0, 1]];
        if !(w > 0.0) {
            return None;
        }
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 0.0 } else { w };
                if (self.entries[[i, j]] - expect).abs() > 1e-12 * w.max(1.0) {
                    return None;
                }
            }
        }
        Some(w)
    }
}

/// Which base metric a [`LossSpec`] builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    Absolute,
    Squared,
    CostSensitive,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::ZeroOne => "zero_one",
            LossKind::Absolute => "absolute",
            LossKind::Squared => "squared",
            LossKind::CostSensitive => "cost_sensitive",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = AgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_one" | "zero-one" => Ok(LossKind::ZeroOne),
            "absolute" => Ok(LossKind::Absolute),
            "squared" => Ok(LossKind::Squared),
            "cost_sensitive" | "cost-sensitive" => Ok(LossKind::CostSensitive),
            other => Err(AgmError::InvalidLoss(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// Loss metric description: base kind, label count, optional per-node weights,
/// and an explicit cost table for the cost-sensitive kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub k: usize,
    /// Per-node positive weights; `None` means every node weighs 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_weights: Option<Vec<f64>>,
    /// Explicit `k x k` cost table, row-major; required for `cost_sensitive`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<Vec<Vec<f64>>>,
}

impl LossSpec {
    pub fn new(kind: LossKind, k: usize) -> Self {
        Self {
            kind,
            k,
            node_weights: None,
            custom: None,
        }
    }

    /// Position weights `1, 2, ..., n`, normalized to mean 1 so weighted and
    /// unweighted metrics share scale.
    pub fn with_position_weights(mut self, n: usize) -> Self {
        let total: f64 = (1..=n).map(|i| i as f64).sum();
        let mean = total / n as f64;
        self.node_weights = Some((1..=n).map(|i| i as f64 / mean).collect());
        self
    }

    /// Cost-sensitive metric from a seeded random label order: the classes are
    /// permuted and the loss of confusing two classes is the distance between
    /// their positions in that order.
    pub fn cost_sensitive_from_seed(k: usize, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut rank = vec![0usize; k];
        for (pos, &label) in order.iter().enumerate() {
            rank[label] = pos;
        }
        let table: Vec<Vec<f64>> = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| (rank[a] as f64 - rank[b] as f64).abs())
                    .collect()
            })
            .collect();
        Self {
            kind: LossKind::CostSensitive,
            k,
            node_weights: None,
            custom: Some(table),
        }
    }

    /// A display name like `zero_one` or `absolute (weighted)`.
    pub fn describe(&self) -> String {
        if self.node_weights.is_some() {
            format!("{} (weighted)", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    /// Stable hash of the spec; stored in model files to catch mismatched
    /// train/eval metrics.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.kind.name().as_bytes());
        hasher.update(self.k.to_le_bytes());
        if let Some(w) = &self.node_weights {
            for v in w {
                hasher.update(v.to_le_bytes());
            }
        }
        if let Some(rows) = &self.custom {
            for row in rows {
                for v in row {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        let out = hasher.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn base_matrix(&self) -> Result<LossMatrix> {
        let k = self.k;
        if k < 2 {
            return Err(AgmError::InvalidLoss(format!(
                "label count must be at least 2, got {k}"
            )));
        }
        let entries = match self.kind {
            LossKind::ZeroOne => {
                Array2::from_shape_fn((k, k), |(a, b)| if a == b { 0.0 } else { 1.0 })
            }
            LossKind::Absolute => {
                Array2::from_shape_fn((k, k), |(a, b)| (a as f64 - b as f64).abs())
            }
            LossKind::Squared => {
                Array2::from_shape_fn((k, k), |(a, b)| (a as f64 - b as f64).powi(2))
            }
            LossKind::CostSensitive => {
                let rows = self.custom.as_ref().ok_or_else(|| {
                    AgmError::InvalidLoss("cost_sensitive requires a custom table".into())
                })?;
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(AgmError::InvalidLoss(format!(
                        "custom table must be {k}x{k}"
                    )));
                }
                Array2::from_shape_fn((k, k), |(a, b)| rows[a][b])
            }
        };
        LossMatrix::new(entries)
    }

    /// Loss matrix for `node` (1-based), applying any node weight.
    pub fn matrix_for_node(&self, node: usize) -> Result<LossMatrix> {
        let base = self.base_matrix()?;
        match &self.node_weights {
            None => Ok(base),
            Some(w) => {
                if node == 0 || node > w.len() {
                    return Err(AgmError::InvalidLoss(format!(
                        "node {node} outside weight vector of length {}",
                        w.len()
                    )));
                }
                base.scaled(w[node - 1])
            }
        }
    }

    /// Loss matrices for every node of an `n`-node instance.
    pub fn matrices(&self, n: usize) -> Result<Vec<LossMatrix>> {
        if let Some(w) = &self.node_weights {
            if w.len() != n {
                return Err(AgmError::InvalidLoss(format!(
                    "weight vector length {} does not match node count {n}",
                    w.len()
                )));
            }
        }
        (1..=n).map(|i| self.matrix_for_node(i)).collect()
    }
}

/// A loss metric that is independent of the instance length: position
/// weighting and seeded cost tables are materialized per `n` on demand.
/// This is the form metrics take in experiment configuration files, where
/// instances of different sizes share one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFamily {
    pub kind: LossKind,
    pub k: usize,
    /// Weight each node by its position (normalized to mean 1).
    #[serde(default)]
    pub weighted_by_position: bool,
    /// Seed for the generated cost-sensitive table (when no explicit table).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<Vec<Vec<f64>>>,
}

impl LossFamily {
    pub fn plain(kind: LossKind, k: usize) -> Self {
        Self {
            kind,
            k,
            weighted_by_position: false,
            cost_seed: None,
            custom: None,
        }
    }

    pub fn weighted(kind: LossKind, k: usize) -> Self {
        Self {
            weighted_by_position: true,
            ..Self::plain(kind, k)
        }
    }

    /// Materializes the spec for an `n`-node instance.
    pub fn spec_for_len(&self, n: usize) -> Result<LossSpec> {
        let mut spec = match self.kind {
            LossKind::CostSensitive => {
                if let Some(table) = &self.custom {
                    LossSpec {
                        kind: LossKind::CostSensitive,
                        k: self.k,
                        node_weights: None,
                        custom: Some(table.clone()),
                    }
                } else {
                    let seed = self.cost_seed.ok_or_else(|| {
                        AgmError::InvalidLoss(
                            "cost_sensitive needs either a custom table or a cost_seed".into(),
                        )
                    })?;
                    LossSpec::cost_sensitive_from_seed(self.k, seed)
                }
            }
            kind => LossSpec::new(kind, self.k),
        };
        if self.weighted_by_position {
            spec = spec.with_position_weights(n);
        }
        Ok(spec)
    }

    pub fn describe(&self) -> String {
        if self.weighted_by_position {
            format!("{} (weighted)", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    /// Digest of the family itself (length-independent).
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.kind.name().as_bytes());
        hasher.update(self.k.to_le_bytes());
        hasher.update([u8::from(self.weighted_by_position)]);
        if let Some(seed) = self.cost_seed {
            hasher.update(seed.to_le_bytes());
        }
        if let Some(rows) = &self.custom {
            for row in rows {
                for v in row {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        let out = hasher.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds the loss matrix for one node; see [`LossSpec::matrix_for_node`].
pub fn make_loss(spec: &LossSpec, node: usize) -> Result<LossMatrix> {
    spec.matrix_for_node(node)
}

/// Per-node average loss `sum_i L_i[pred_i][truth_i] / n`.
pub fn evaluate_loss(spec: &LossSpec, predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(AgmError::DimensionMismatch(format!(
            "predicted length {} vs truth length {}",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(AgmError::DimensionMismatch("empty label sequences".into()));
    }
    let n = predicted.len();
    let mut total = 0.0;
    for (i, (&a, &b)) in predicted.iter().zip(truth.iter()).enumerate() {
        if a == 0 || a > spec.k || b == 0 || b > spec.k {
            return Err(AgmError::InvalidLoss(format!(
                "label out of range 1..={} at node {}: predicted {a}, truth {b}",
                spec.k,
                i + 1
            )));
        }
        total += spec.matrix_for_node(i + 1)?.loss(a, b);
    }
    Ok(total / n as f64)
}

//! Feature template, instances, empirical moments, and potential assembly.
//!
//! The template crosses label indicators with the node input vector plus a
//! bias (parameters tied across nodes), and label-pair indicators with the
//! edge input vector plus a bias (tied across edges). Node parameters
//! therefore have length `k * (d + 1)` and edge parameters `k^2 * (d_e + 1)`.

use ndarray::{Array1, Array2};

use crate::error::{AgmError, Result};
use crate::graph::TreeGraph;

/// Identifier written into dataset and model files.
pub const TEMPLATE_ID: &str = "indicator-cross-v1";

/// Fixes the index layout of the tied indicator-cross feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureTemplate {
    /// Node input dimension (may be 0: bias-only node features).
    pub d: usize,
    /// Edge input dimension (may be 0: label-pair indicators only).
    pub d_e: usize,
    /// Label count.
    pub k: usize,
}

impl FeatureTemplate {
    pub fn new(d: usize, d_e: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(AgmError::Config(format!(
                "feature template needs k >= 2, got {k}"
            )));
        }
        Ok(Self { d, d_e, k })
    }

    /// Length of the node parameter vector: one block of `d + 1` weights
    /// (bias first) per label.
    pub fn node_dim(&self) -> usize {
        self.k * (self.d + 1)
    }

    /// Length of the edge parameter vector: one block of `d_e + 1` weights
    /// per ordered label pair `(parent, child)`.
    pub fn edge_dim(&self) -> usize {
        self.k * self.k * (self.d_e + 1)
    }

    fn node_block(&self, label0: usize) -> usize {
        label0 * (self.d + 1)
    }

    fn edge_block(&self, parent0: usize, child0: usize) -> usize {
        (parent0 * self.k + child0) * (self.d_e + 1)
    }
}

/// One structured example: a tree, per-node inputs, optional per-edge inputs,
/// and an optional gold label sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub tree: TreeGraph,
    /// `node_inputs[i-1]` is the input vector of node `i` (length `d`).
    pub node_inputs: Vec<Array1<f64>>,
    /// `edge_inputs[j]` belongs to `tree.edges()[j]` (length `d_e`); empty
    /// when `d_e == 0`.
    pub edge_inputs: Vec<Array1<f64>>,
    /// Gold labels in `1..=k`, indexed `[i-1]`.
    pub labels: Option<Vec<usize>>,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.tree.node_count()
    }

    /// Checks shapes against a template and label ranges against `k`.
    pub fn validate(&self, template: &FeatureTemplate) -> Result<()> {
        let n = self.n();
        if self.node_inputs.len() != n {
            return Err(AgmError::DimensionMismatch(format!(
                "{} node input rows for {} nodes",
                self.node_inputs.len(),
                n
            )));
        }
        for (i, x) in self.node_inputs.iter().enumerate() {
            if x.len() != template.d {
                return Err(AgmError::DimensionMismatch(format!(
                    "node {} input has length {}, template d = {}",
                    i + 1,
                    x.len(),
                    template.d
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(AgmError::NonFinite(format!("node {} input", i + 1)));
            }
        }
        let expected_edge_rows = if template.d_e == 0 { 0 } else { n - 1 };
        if self.edge_inputs.len() != expected_edge_rows {
            return Err(AgmError::DimensionMismatch(format!(
                "{} edge input rows, expected {expected_edge_rows}",
                self.edge_inputs.len()
            )));
        }
        for (j, x) in self.edge_inputs.iter().enumerate() {
            if x.len() != template.d_e {
                return Err(AgmError::DimensionMismatch(format!(
                    "edge {j} input has length {}, template d_e = {}",
                    x.len(),
                    template.d_e
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(AgmError::DimensionMismatch(format!(
                    "{} labels for {} nodes",
                    labels.len(),
                    n
                )));
            }
            for (i, &y) in labels.iter().enumerate() {
                if y == 0 || y > template.k {
                    return Err(AgmError::InvalidLoss(format!(
                        "label {y} at node {} outside 1..={}",
                        i + 1,
                        template.k
                    )));
                }
            }
        }
        Ok(())
    }

    /// Edge input for the edge whose child is `child`, as the `d_e + 1`
    /// augmented vector `[1, x_e]`.
    fn augmented_edge_input(&self, template: &FeatureTemplate, child: usize) -> Array1<f64> {
        let mut out = Array1::zeros(template.d_e + 1);
        out[0] = 1.0;
        if template.d_e > 0 {
            let j = self
                .tree
                .edges()
                .iter()
                .position(|&(_, c)| c == child)
                .expect("child indexes a real edge");
            out.slice_mut(ndarray::s![1..]).assign(&self.edge_inputs[j]);
        }
        out
    }

    fn augmented_node_input(&self, template: &FeatureTemplate, node: usize) -> Array1<f64> {
        let mut out = Array1::zeros(template.d + 1);
        out[0] = 1.0;
        if template.d > 0 {
            out.slice_mut(ndarray::s![1..]).assign(&self.node_inputs[node - 1]);
        }
        out
    }
}

/// One-hot encoding of a gold label sequence over a tree.
#[derive(Debug, Clone)]
pub struct EncodedTruth {
    /// `z[i-1]` is the one-hot node vector of node `i`.
    pub z: Vec<Array1<f64>>,
    /// `big_z[j]` is the one-hot pair matrix of edge `tree.edges()[j]`,
    /// rows indexed by the parent label, columns by the child label.
    pub big_z: Vec<Array2<f64>>,
}

impl EncodedTruth {
    pub fn encode(tree: &TreeGraph, labels: &[usize], k: usize) -> Result<Self> {
        if labels.len() != tree.node_count() {
            return Err(AgmError::DimensionMismatch(format!(
                "{} labels for {} nodes",
                labels.len(),
                tree.node_count()
            )));
        }
        let mut z = Vec::with_capacity(labels.len());
        for &y in labels {
            if y == 0 || y > k {
                return Err(AgmError::InvalidLoss(format!("label {y} outside 1..={k}")));
            }
            let mut v = Array1::zeros(k);
            v[y - 1] = 1.0;
            z.push(v);
        }
        let mut big_z = Vec::with_capacity(tree.edges().len());
        for &(p, c) in tree.edges() {
            let mut m = Array2::zeros((k, k));
            m[[labels[p - 1] - 1, labels[c - 1] - 1]] = 1.0;
            big_z.push(m);
        }
        Ok(Self { z, big_z })
    }
}

/// Lagrange multipliers of the moment-matching constraints: node and edge
/// parameter vectors laid out by a [`FeatureTemplate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub template: FeatureTemplate,
    pub theta_node: Array1<f64>,
    pub theta_edge: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(template: FeatureTemplate) -> Self {
        Self {
            template,
            theta_node: Array1::zeros(template.node_dim()),
            theta_edge: Array1::zeros(template.edge_dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_node.len() != self.template.node_dim()
            || self.theta_edge.len() != self.template.edge_dim()
        {
            return Err(AgmError::DimensionMismatch(format!(
                "parameter lengths ({}, {}) do not match template ({}, {})",
                self.theta_node.len(),
                self.theta_edge.len(),
                self.template.node_dim(),
                self.template.edge_dim()
            )));
        }
        if self.theta_node.iter().chain(self.theta_edge.iter()).any(|v| !v.is_finite()) {
            return Err(AgmError::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.theta_node.iter().map(|v| v * v).sum::<f64>()
            + self.theta_edge.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Node vectors `b_i` and edge matrices `B_{parent;child}` induced by the
/// parameters on a particular instance. The dummy edge above the root carries
/// no features and has zero potential; the root's mass lives in its node
/// vector.
#[derive(Debug, Clone)]
pub struct Potentials {
    /// `node[i-1]` is `b_i` (length `k`).
    pub node: Vec<Array1<f64>>,
    /// `edge[j]` is the `k x k` matrix of `tree.edges()[j]`, rows = parent
    /// label, columns = child label.
    pub edge: Vec<Array2<f64>>,
}

/// Moment vector in the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub node_part: Array1<f64>,
    pub edge_part: Array1<f64>,
}

impl MomentVector {
    pub fn zeros(template: &FeatureTemplate) -> Self {
        Self {
            node_part: Array1::zeros(template.node_dim()),
            edge_part: Array1::zeros(template.edge_dim()),
        }
    }

    /// Largest absolute coordinate across both parts.
    pub fn linf_norm(&self) -> f64 {
        self.node_part
            .iter()
            .chain(self.edge_part.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &MomentVector) -> MomentVector {
        MomentVector {
            node_part: &self.node_part - &other.node_part,
            edge_part: &self.edge_part - &other.edge_part,
        }
    }
}

/// Adds the feature vector of `(instance, node marginals z, edge marginals Z)`
/// scaled by `weight` into `acc`. One-hot marginals give the gold feature
/// vector; fractional marginals give expected features.
pub fn accumulate_moments(
    acc: &mut MomentVector,
    template: &FeatureTemplate,
    instance: &Instance,
    node_marginals: &[Array1<f64>],
    edge_marginals: &[Array2<f64>],
    weight: f64,
) {
    for node in instance.tree.nodes() {
        let aug = instance.augmented_node_input(template, node);
        let marg = &node_marginals[node - 1];
        for a in 0..template.k {
            let base = template.node_block(a);
            let m = marg[a];
            if m == 0.0 {
                continue;
            }
            for (j, &x) in aug.iter().enumerate() {
                acc.node_part[base + j] += weight * m * x;
            }
        }
    }
    for (j, &(_, child)) in instance.tree.edges().iter().enumerate() {
        let aug = instance.augmented_edge_input(template, child);
        let marg = &edge_marginals[j];
        for pa in 0..template.k {
            for ca in 0..template.k {
                let m = marg[[pa, ca]];
                if m == 0.0 {
                    continue;
                }
                let base = template.edge_block(pa, ca);
                for (t, &x) in aug.iter().enumerate() {
                    acc.edge_part[base + t] += weight * m * x;
                }
            }
        }
    }
}

/// Feature vector of a single labeled instance.
pub fn instance_moments(template: &FeatureTemplate, instance: &Instance) -> Result<MomentVector> {
    let labels = instance
        .labels
        .as_ref()
        .ok_or_else(|| AgmError::Training("instance has no gold labels".into()))?;
    let truth = EncodedTruth::encode(&instance.tree, labels, template.k)?;
    let mut acc = MomentVector::zeros(template);
    accumulate_moments(&mut acc, template, instance, &truth.z, &truth.big_z, 1.0);
    Ok(acc)
}

/// Mean gold feature vector over a labeled dataset.
pub fn empirical_moments(template: &FeatureTemplate, dataset: &[Instance]) -> Result<MomentVector> {
    if dataset.is_empty() {
        return Err(AgmError::EmptyDataset);
    }
    let mut acc = MomentVector::zeros(template);
    let w = 1.0 / dataset.len() as f64;
    for instance in dataset {
        let labels = instance
            .labels
            .as_ref()
            .ok_or_else(|| AgmError::Training("instance has no gold labels".into()))?;
        let truth = EncodedTruth::encode(&instance.tree, labels, template.k)?;
        accumulate_moments(&mut acc, template, instance, &truth.z, &truth.big_z, w);
    }
    Ok(acc)
}

/// Contracts the parameters with the instance's feature tensors.
pub fn assemble_potentials(params: &ModelParams, instance: &Instance) -> Result<Potentials> {
    params.validate()?;
    instance.validate(&params.template)?;
    let template = &params.template;
    let k = template.k;

    let mut node = Vec::with_capacity(instance.n());
    for i in instance.tree.nodes() {
        let aug = instance.augmented_node_input(template, i);
        let mut b = Array1::zeros(k);
        for a in 0..k {
            let base = template.node_block(a);
            let mut s = 0.0;
            for (j, &x) in aug.iter().enumerate() {
                s += params.theta_node[base + j] * x;
            }
            b[a] = s;
        }
        node.push(b);
    }

    let mut edge = Vec::with_capacity(instance.tree.edges().len());
    for &(_, child) in instance.tree.edges() {
        let aug = instance.augmented_edge_input(template, child);
        let mut m = Array2::zeros((k, k));
        for pa in 0..k {
            for ca in 0..k {
                let base = template.edge_block(pa, ca);
                let mut s = 0.0;
                for (t, &x) in aug.iter().enumerate() {
                    s += params.theta_edge[base + t] * x;
                }
                m[[pa, ca]] = s;
            }
        }
        edge.push(m);
    }

    Ok(Potentials { node, edge })
}

/// Convenience constructor for test and synthetic data: an instance with the
/// given tree and zero-dimensional inputs.
pub fn bias_only_instance(tree: TreeGraph, labels: Option<Vec<usize>>) -> Instance {
    let n = tree.node_count();
    Instance {
        tree,
        node_inputs: vec![Array1::zeros(0); n],
        edge_inputs: Vec::new(),
        labels,
    }
}

//! Line-oriented dataset files.
//!
//! ```text
//! agm-dataset v1 k=3 d=2 de=0 template=indicator-cross-v1
//! instance n=3 root=1 edges=1-2,2-3
//! 2 0.5 -1.25
//! 1 0 3.5
//! 3 1 2
//! ```
//!
//! One header line, then per-instance blocks: an `instance` line carrying the
//! tree, one line per node (gold label or `?`, then `d` feature values), and,
//! when `de > 0`, one line per edge (`p-c` then `de` values, in edge-list
//! order). Floats are written in shortest round-trip form so save/load is an
//! identity. Blank lines and `#` comments are ignored on input.

use ndarray::Array1;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AgmError, Result};
use crate::features::{FeatureTemplate, Instance, TEMPLATE_ID};
use crate::graph::TreeGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub k: usize,
    pub d: usize,
    pub d_e: usize,
    pub template_id: String,
    pub instances: Vec<Instance>,
}

impl DatasetFile {
    pub fn new(k: usize, d: usize, d_e: usize, instances: Vec<Instance>) -> Self {
        Self {
            k,
            d,
            d_e,
            template_id: TEMPLATE_ID.to_string(),
            instances,
        }
    }

    pub fn template(&self) -> Result<FeatureTemplate> {
        FeatureTemplate::new(self.d, self.d_e, self.k)
    }

    /// Instances that carry gold labels.
    pub fn labeled(&self) -> Vec<Instance> {
        self.instances
            .iter()
            .filter(|i| i.labels.is_some())
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let template = self.template()?;
        for (idx, instance) in self.instances.iter().enumerate() {
            instance.validate(&template).map_err(|e| {
                AgmError::Config(format!("instance {}: {e}", idx + 1))
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "agm-dataset v1 k={} d={} de={} template={}",
            self.k, self.d, self.d_e, self.template_id
        );
        for instance in &self.instances {
            let edges = if instance.tree.edges().is_empty() {
                "-".to_string()
            } else {
                instance
                    .tree
                    .edges()
                    .iter()
                    .map(|&(p, c)| format!("{p}-{c}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(
                out,
                "instance n={} root={} edges={}",
                instance.n(),
                instance.tree.root(),
                edges
            );
            for i in 1..=instance.n() {
                let label = match &instance.labels {
                    Some(l) => l[i - 1].to_string(),
                    None => "?".to_string(),
                };
                let _ = write!(out, "{label}");
                for v in instance.node_inputs[i - 1].iter() {
                    let _ = write!(out, " {v}");
                }
                let _ = writeln!(out);
            }
            if self.d_e > 0 {
                for (j, &(p, c)) in instance.tree.edges().iter().enumerate() {
                    let _ = write!(out, "{p}-{c}");
                    for v in instance.edge_inputs[j].iter() {
                        let _ = write!(out, " {v}");
                    }
                    let _ = writeln!(out);
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (header_line, header) = lines
            .next()
            .ok_or_else(|| AgmError::Parse {
                line: 0,
                msg: "empty dataset file".into(),
            })?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("agm-dataset") || parts.next() != Some("v1") {
            return Err(AgmError::Parse {
                line: header_line,
                msg: "expected header 'agm-dataset v1 ...'".into(),
            });
        }
        let mut k = None;
        let mut d = None;
        let mut de = None;
        let mut template_id = None;
        for part in parts {
            let (key, value) = part.split_once('=').ok_or_else(|| AgmError::Parse {
                line: header_line,
                msg: format!("malformed header field '{part}'"),
            })?;
            match key {
                "k" => k = Some(parse_usize(value, header_line)?),
                "d" => d = Some(parse_usize(value, header_line)?),
                "de" => de = Some(parse_usize(value, header_line)?),
                "template" => template_id = Some(value.to_string()),
                other => {
                    return Err(AgmError::Parse {
                        line: header_line,
                        msg: format!("unknown header field '{other}'"),
                    })
                }
            }
        }
        let (k, d, d_e) = match (k, d, de) {
            (Some(k), Some(d), Some(de)) => (k, d, de),
            _ => {
                return Err(AgmError::Parse {
                    line: header_line,
                    msg: "header must define k, d, and de".into(),
                })
            }
        };
        let template_id = template_id.unwrap_or_else(|| TEMPLATE_ID.to_string());
        if template_id != TEMPLATE_ID {
            return Err(AgmError::Parse {
                line: header_line,
                msg: format!("unsupported feature template '{template_id}'"),
            });
        }

        let mut instances = Vec::new();
        let mut pending = lines.peekable();
        while let Some((line_no, line)) = pending.next() {
            let rest = line.strip_prefix("instance ").ok_or_else(|| AgmError::Parse {
                line: line_no,
                msg: format!("expected 'instance ...', got '{line}'"),
            })?;
            let mut n = None;
            let mut root = None;
            let mut edges: Option<Vec<(usize, usize)>> = None;
            for part in rest.split_whitespace() {
                let (key, value) = part.split_once('=').ok_or_else(|| AgmError::Parse {
                    line: line_no,
                    msg: format!("malformed instance field '{part}'"),
                })?;
                match key {
                    "n" => n = Some(parse_usize(value, line_no)?),
                    "root" => root = Some(parse_usize(value, line_no)?),
                    "edges" => {
                        let mut list = Vec::new();
                        if value != "-" {
                            for pair in value.split(',') {
                                let (a, b) = pair.split_once('-').ok_or_else(|| AgmError::Parse {
                                    line: line_no,
                                    msg: format!("malformed edge '{pair}'"),
                                })?;
                                list.push((parse_usize(a, line_no)?, parse_usize(b, line_no)?));
                            }
                        }
                        edges = Some(list);
                    }
                    other => {
                        return Err(AgmError::Parse {
                            line: line_no,
                            msg: format!("unknown instance field '{other}'"),
                        })
                    }
                }
            }
            let (n, root, edges) = match (n, root, edges) {
                (Some(n), Some(r), Some(e)) => (n, r, e),
                _ => {
                    return Err(AgmError::Parse {
                        line: line_no,
                        msg: "instance line must define n, root, and edges".into(),
                    })
                }
            };
            let tree = TreeGraph::build(n, &edges, root).map_err(|e| AgmError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;

            let mut labels: Vec<usize> = Vec::with_capacity(n);
            let mut any_labeled = false;
            let mut node_inputs = Vec::with_capacity(n);
            for i in 1..=n {
                let (node_line_no, node_line) = pending.next().ok_or_else(|| AgmError::Parse {
                    line: line_no,
                    msg: format!("missing node line {i} of {n}"),
                })?;
                let mut fields = node_line.split_whitespace();
                let label_tok = fields.next().ok_or_else(|| AgmError::Parse {
                    line: node_line_no,
                    msg: "empty node line".into(),
                })?;
                if label_tok == "?" {
                    labels.push(0);
                } else {
                    let y = parse_usize(label_tok, node_line_no)?;
                    if y == 0 || y > k {
                        return Err(AgmError::Parse {
                            line: node_line_no,
                            msg: format!("label {y} outside 1..={k} (instance {})", instances.len() + 1),
                        });
                    }
                    labels.push(y);
                    any_labeled = true;
                }
                let values: Vec<f64> = fields
                    .map(|tok| parse_f64(tok, node_line_no))
                    .collect::<Result<_>>()?;
                if values.len() != d {
                    return Err(AgmError::Parse {
                        line: node_line_no,
                        msg: format!("node has {} feature values, header says d={d}", values.len()),
                    });
                }
                node_inputs.push(Array1::from_vec(values));
            }
            if any_labeled && labels.contains(&0) {
                return Err(AgmError::Parse {
                    line: line_no,
                    msg: "instances must be fully labeled or fully unlabeled".into(),
                });
            }

            let mut edge_inputs = Vec::new();
            if d_e > 0 {
                for &(p, c) in tree.edges() {
                    let (edge_line_no, edge_line) =
                        pending.next().ok_or_else(|| AgmError::Parse {
                            line: line_no,
                            msg: format!("missing edge line for edge {p}-{c}"),
                        })?;
                    let mut fields = edge_line.split_whitespace();
                    let tag = fields.next().unwrap_or_default();
                    if tag != format!("{p}-{c}") {
                        return Err(AgmError::Parse {
                            line: edge_line_no,
                            msg: format!("expected edge '{p}-{c}', got '{tag}'"),
                        });
                    }
                    let values: Vec<f64> = fields
                        .map(|tok| parse_f64(tok, edge_line_no))
                        .collect::<Result<_>>()?;
                    if values.len() != d_e {
                        return Err(AgmError::Parse {
                            line: edge_line_no,
                            msg: format!(
                                "edge has {} feature values, header says de={d_e}",
                                values.len()
                            ),
                        });
                    }
                    edge_inputs.push(Array1::from_vec(values));
                }
            }

            instances.push(Instance {
                tree,
                node_inputs,
                edge_inputs,
                labels: if any_labeled { Some(labels) } else { None },
            });
        }

        let file = DatasetFile {
            k,
            d,
            d_e,
            template_id,
            instances,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| AgmError::Parse {
        line,
        msg: format!("expected an integer, got '{tok}'"),
    })
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| AgmError::Parse {
        line,
        msg: format!("expected a number, got '{tok}'"),
    })?;
    if !v.is_finite() {
        return Err(AgmError::Parse {
            line,
            msg: format!("non-finite value '{tok}'"),
        });
    }
    Ok(v)
}

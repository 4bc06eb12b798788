//! Versioned text model files.
//!
//! ```text
//! agm-model v1
//! kind agm
//! template indicator-cross-v1
//! k 3
//! d 2
//! de 0
//! loss zero_one
//! losshash 0a1b2c3d4e5f6071
//! thetav 9
//! <9 lines>
//! thetae 9
//! <9 lines>
//! ```
//!
//! Values are written in shortest round-trip decimal form. CRF models, which
//! train without a loss metric, carry `loss -` and `losshash -`.

use ndarray::Array1;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AgmError, Result};
use crate::features::{FeatureTemplate, ModelParams, TEMPLATE_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Agm,
    Crf,
    Ssvm,
    /// Harness check: "decodes" the gold labels. Never trained or saved.
    Oracle,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Agm => "agm",
            ModelKind::Crf => "crf",
            ModelKind::Ssvm => "ssvm",
            ModelKind::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = AgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agm" => Ok(ModelKind::Agm),
            "crf" => Ok(ModelKind::Crf),
            "ssvm" => Ok(ModelKind::Ssvm),
            "oracle" => Ok(ModelKind::Oracle),
            other => Err(AgmError::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SavedModel {
    pub kind: ModelKind,
    pub params: ModelParams,
    /// Loss description and digest the model was trained with, when any.
    pub loss_name: Option<String>,
    pub loss_digest: Option<String>,
}

pub fn save_model(
    path: &Path,
    kind: ModelKind,
    params: &ModelParams,
    loss: Option<(&str, &str)>,
) -> Result<()> {
    if kind == ModelKind::Oracle {
        return Err(AgmError::Config("the oracle decoder has no model file".into()));
    }
    let mut out = String::new();
    let t = &params.template;
    let _ = writeln!(out, "agm-model v1");
    let _ = writeln!(out, "kind {}", kind.name());
    let _ = writeln!(out, "template {TEMPLATE_ID}");
    let _ = writeln!(out, "k {}", t.k);
    let _ = writeln!(out, "d {}", t.d);
    let _ = writeln!(out, "de {}", t.d_e);
    match loss {
        Some((name, digest)) => {
            let _ = writeln!(out, "loss {name}");
            let _ = writeln!(out, "losshash {digest}");
        }
        None => {
            let _ = writeln!(out, "loss -");
            let _ = writeln!(out, "losshash -");
        }
    }
    let _ = writeln!(out, "thetav {}", params.theta_node.len());
    for v in params.theta_node.iter() {
        let _ = writeln!(out, "{v}");
    }
    let _ = writeln!(out, "thetae {}", params.theta_edge.len());
    for v in params.theta_edge.iter() {
        let _ = writeln!(out, "{v}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied().ok_or(AgmError::Parse {
            line: self.lines.last().map(|(n, _)| *n).unwrap_or(0),
            msg: "unexpected end of model file".into(),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let (no, line) = self.next()?;
        let value = line.strip_prefix(key).ok_or_else(|| AgmError::Parse {
            line: no,
            msg: format!("expected '{key} ...', got '{line}'"),
        })?;
        Ok((no, value.trim().to_string()))
    }

    fn vector(&mut self, key: &str, expected_len: usize) -> Result<Array1<f64>> {
        let (no, header) = self.field(key)?;
        let len: usize = header.parse().map_err(|_| AgmError::Parse {
            line: no,
            msg: format!("expected '{key} <len>'"),
        })?;
        if len != expected_len {
            return Err(AgmError::Parse {
                line: no,
                msg: format!("{key} length {len} does not match template ({expected_len})"),
            });
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let (vno, vline) = self.next()?;
            let v: f64 = vline.parse().map_err(|_| AgmError::Parse {
                line: vno,
                msg: format!("bad value '{vline}'"),
            })?;
            values.push(v);
        }
        Ok(Array1::from_vec(values))
    }
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path)?;
    let mut cursor = Cursor {
        lines: text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect(),
        pos: 0,
    };

    let (no, magic) = cursor.next()?;
    if magic != "agm-model v1" {
        return Err(AgmError::Parse {
            line: no,
            msg: format!("bad magic '{magic}'"),
        });
    }
    let kind: ModelKind = cursor.field("kind")?.1.parse()?;
    let (no, template_id) = cursor.field("template")?;
    if template_id != TEMPLATE_ID {
        return Err(AgmError::Parse {
            line: no,
            msg: format!("unsupported template '{template_id}'"),
        });
    }
    let parse_dim = |(no, s): (usize, String)| -> Result<usize> {
        s.parse().map_err(|_| AgmError::Parse {
            line: no,
            msg: format!("expected an integer, got '{s}'"),
        })
    };
    let k = parse_dim(cursor.field("k")?)?;
    let d = parse_dim(cursor.field("d")?)?;
    let d_e = parse_dim(cursor.field("de")?)?;
    let (_, loss_name) = cursor.field("loss")?;
    let (_, loss_digest) = cursor.field("losshash")?;

    let template = FeatureTemplate::new(d, d_e, k)?;
    let theta_node = cursor.vector("thetav", template.node_dim())?;
    let theta_edge = cursor.vector("thetae", template.edge_dim())?;

    let none_if_dash = |s: String| if s == "-" { None } else { Some(s) };
    Ok(SavedModel {
        kind,
        params: ModelParams {
            template,
            theta_node,
            theta_edge,
        },
        loss_name: none_if_dash(loss_name),
        loss_digest: none_if_dash(loss_digest),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let template = FeatureTemplate::new(2, 1, 3).unwrap();
        let mut params = ModelParams::zeros(template);
        params.theta_node.mapv_inplace(|_| rng.random_range(-5.0..5.0));
        params.theta_edge.mapv_inplace(|_| rng.random_range(-5.0..5.0));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&path, ModelKind::Agm, &params, Some(("zero_one", "deadbeef"))).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.kind, ModelKind::Agm);
        assert_eq!(loaded.loss_name.as_deref(), Some("zero_one"));
        assert_eq!(loaded.params.theta_node, params.theta_node);
        assert_eq!(loaded.params.theta_edge, params.theta_edge);
    }

    #[test]
    fn crf_model_without_loss() {
        let template = FeatureTemplate::new(0, 0, 2).unwrap();
        let params = ModelParams::zeros(template);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crf.txt");
        save_model(&path, ModelKind::Crf, &params, None).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.kind, ModelKind::Crf);
        assert!(loaded.loss_name.is_none());
    }

    #[test]
    fn length_mismatch_rejected() {
        let template = FeatureTemplate::new(0, 0, 2).unwrap();
        let params = ModelParams::zeros(template);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&path, ModelKind::Ssvm, &params, None).unwrap();
        let mangled = std::fs::read_to_string(&path)
            .unwrap()
            .replace("thetav 2", "thetav 3");
        std::fs::write(&path, mangled).unwrap();
        assert!(load_model(&path).is_err());
    }
}

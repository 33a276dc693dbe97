//! Task heads over refined features and scene-graph matrix assembly.
//!
//! The scene graph is a matrix: object labels (or background) on the
//! diagonal, predicate labels (or irrelevant) for every ordered pair off
//! the diagonal. An edge survives into the assembled graph exactly when
//! both endpoints are non-background and the predicate is non-irrelevant.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Value};
use crate::error::{Error, Result};
use crate::geometry::Bbox;

/// Head dimensions. Classification heads reserve label 0 for the null
/// class (background for objects, irrelevant for predicates); real
/// categories are shifted by one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeadConfig {
    pub feature_dim: usize,
    pub c_obj: usize,
    pub c_pred: usize,
    pub caption_box_regression: bool,
}

pub fn register_params(
    store: &mut ParamStore,
    config: &HeadConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let d = config.feature_dim;
    let std = 1.0 / (d as f64).sqrt();
    store.register_normal("heads.object_cls.w", vec![config.c_obj + 1, d], std, rng)?;
    store.register_zeros("heads.object_cls.b", vec![config.c_obj + 1])?;
    store.register_normal("heads.predicate_cls.w", vec![config.c_pred + 1, d], std, rng)?;
    store.register_zeros("heads.predicate_cls.b", vec![config.c_pred + 1])?;
    store.register_normal("heads.object_reg.w", vec![4 * config.c_obj, d], std, rng)?;
    store.register_zeros("heads.object_reg.b", vec![4 * config.c_obj])?;
    if config.caption_box_regression {
        store.register_normal("heads.caption_reg.w", vec![4, d], std, rng)?;
        store.register_zeros("heads.caption_reg.b", vec![4])?;
    }
    Ok(())
}

/// Head parameters bound onto a tape.
pub struct HeadParams {
    object_cls: (Value, Value),
    predicate_cls: (Value, Value),
    object_reg: (Value, Value),
    caption_reg: Option<(Value, Value)>,
}

impl HeadParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore, config: &HeadConfig) -> Result<Self> {
        let caption_reg = if config.caption_box_regression {
            Some((
                tape.param(store, "heads.caption_reg.w")?,
                tape.param(store, "heads.caption_reg.b")?,
            ))
        } else {
            None
        };
        Ok(HeadParams {
            object_cls: (
                tape.param(store, "heads.object_cls.w")?,
                tape.param(store, "heads.object_cls.b")?,
            ),
            predicate_cls: (
                tape.param(store, "heads.predicate_cls.w")?,
                tape.param(store, "heads.predicate_cls.b")?,
            ),
            object_reg: (
                tape.param(store, "heads.object_reg.w")?,
                tape.param(store, "heads.object_reg.b")?,
            ),
            caption_reg,
        })
    }
}

fn apply_linear_head(
    tape: &mut Tape,
    head: (Value, Value),
    rows: &[Value],
) -> Result<Vec<Value>> {
    rows.iter()
        .map(|&x| tape.linear(x, head.0, Some(head.1)))
        .collect()
}

/// Object class logits, one row of `c_obj + 1` per object node.
pub fn classify_objects(
    tape: &mut Tape,
    params: &HeadParams,
    x_obj: &[Value],
) -> Result<Vec<Value>> {
    apply_linear_head(tape, params.object_cls, x_obj)
}

/// Predicate class logits, one row of `c_pred + 1` per phrase node.
pub fn classify_predicates(
    tape: &mut Tape,
    params: &HeadParams,
    x_phr: &[Value],
) -> Result<Vec<Value>> {
    apply_linear_head(tape, params.predicate_cls, x_phr)
}

/// Class-specific box deltas, `4 * c_obj` per object node.
pub fn regress_boxes(tape: &mut Tape, params: &HeadParams, x_obj: &[Value]) -> Result<Vec<Value>> {
    apply_linear_head(tape, params.object_reg, x_obj)
}

/// Class-agnostic caption box deltas, when the head is enabled.
pub fn regress_caption_boxes(
    tape: &mut Tape,
    params: &HeadParams,
    x_cap: &[Value],
) -> Result<Option<Vec<Value>>> {
    match params.caption_reg {
        Some(head) => Ok(Some(apply_linear_head(tape, head, x_cap)?)),
        None => Ok(None),
    }
}

/// Flat index of the ordered pair `(i, j)` in an `n`-object matrix's
/// off-diagonal storage.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j > i { j - 1 } else { j }
}

/// Inverse of [`pair_index`].
pub fn pair_at(n: usize, index: usize) -> (usize, usize) {
    let i = index / (n - 1);
    let r = index % (n - 1);
    let j = if r >= i { r + 1 } else { r };
    (i, j)
}

/// Matrix form of one scene-graph prediction. Label 0 means background
/// (diagonal) or irrelevant (off-diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraphMatrix {
    pub n: usize,
    pub object_labels: Vec<usize>,
    pub object_scores: Vec<f64>,
    /// Off-diagonal entries addressed via [`pair_index`], length n(n-1).
    pub predicate_labels: Vec<usize>,
    pub predicate_scores: Vec<f64>,
}

impl SceneGraphMatrix {
    pub fn validate(&self, c_obj: usize, c_pred: usize) -> Result<()> {
        let off = if self.n == 0 { 0 } else { self.n * (self.n - 1) };
        if self.object_labels.len() != self.n
            || self.object_scores.len() != self.n
            || self.predicate_labels.len() != off
            || self.predicate_scores.len() != off
        {
            return Err(Error::ShapeMismatch {
                context: "scene graph matrix",
                left: vec![self.object_labels.len(), self.predicate_labels.len()],
                right: vec![self.n, off],
            });
        }
        if self.object_labels.iter().any(|&l| l > c_obj) {
            return Err(Error::invalid("object label out of range"));
        }
        if self.predicate_labels.iter().any(|&l| l > c_pred) {
            return Err(Error::invalid("predicate label out of range"));
        }
        Ok(())
    }
}

/// A surviving detection in an assembled scene graph; `category` is the
/// real (unshifted) class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    #[serde(rename = "box")]
    pub bbox: Bbox,
    pub label: usize,
    pub score: f64,
}

/// Directed relation between surviving objects; indices refer to the
/// prediction's object list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub s: usize,
    pub p: usize,
    pub o: usize,
    pub score: f64,
}

/// Decoded caption attached to a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionOutput {
    #[serde(rename = "box")]
    pub bbox: Bbox,
    pub text: String,
    pub score: f64,
}

/// Assembled scene graph: non-background objects and the surviving edges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneGraphPrediction {
    pub objects: Vec<DetectedObject>,
    pub edges: Vec<RelationEdge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<CaptionOutput>,
}

impl SceneGraphPrediction {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prediction serializes")
    }

    /// DOT rendering of the predicted graph (objects red, edges labeled
    /// with predicate ids).
    pub fn to_dot(&self, predicate_name: impl Fn(usize) -> String) -> String {
        let mut out = String::from("digraph prediction {\n");
        for (i, obj) in self.objects.iter().enumerate() {
            out.push_str(&format!(
                "  n{i} [label=\"{} ({:.2})\", style=filled, fillcolor=red];\n",
                obj.label, obj.score
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  n{} -> n{} [label=\"{}\"];\n",
                e.s,
                e.o,
                predicate_name(e.p)
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Emit the edge `(i, p, j)` exactly when objects `i` and `j` are
/// non-background and the pair's predicate is non-irrelevant. Edge score
/// is the product of subject, predicate and object scores. Deterministic
/// and idempotent given the matrix.
pub fn assemble_scene_graph(
    matrix: &SceneGraphMatrix,
    boxes: &[Bbox],
) -> Result<SceneGraphPrediction> {
    if boxes.len() != matrix.n {
        return Err(Error::ShapeMismatch {
            context: "assemble_scene_graph boxes",
            left: vec![boxes.len()],
            right: vec![matrix.n],
        });
    }
    let mut remap = vec![None; matrix.n];
    let mut objects = Vec::new();
    for i in 0..matrix.n {
        if matrix.object_labels[i] > 0 {
            remap[i] = Some(objects.len());
            objects.push(DetectedObject {
                bbox: boxes[i],
                label: matrix.object_labels[i] - 1,
                score: matrix.object_scores[i],
            });
        }
    }
    let mut edges = Vec::new();
    for i in 0..matrix.n {
        for j in 0..matrix.n {
            if i == j {
                continue;
            }
            let (Some(si), Some(sj)) = (remap[i], remap[j]) else {
                continue;
            };
            let idx = pair_index(matrix.n, i, j);
            if matrix.predicate_labels[idx] == 0 {
                continue;
            }
            edges.push(RelationEdge {
                s: si,
                p: matrix.predicate_labels[idx] - 1,
                o: sj,
                score: matrix.object_scores[i]
                    * matrix.predicate_scores[idx]
                    * matrix.object_scores[j],
            });
        }
    }
    Ok(SceneGraphPrediction {
        objects,
        edges,
        captions: Vec::new(),
    })
}

/// Sum of the per-task losses with unit weights. Absent components count
/// as zero.
pub fn joint_loss(
    tape: &mut Tape,
    object_cls: Option<Value>,
    object_reg: Option<Value>,
    predicate_cls: Option<Value>,
    caption: Option<Value>,
) -> Result<Value> {
    let mut total: Option<Value> = None;
    for part in [object_cls, object_reg, predicate_cls, caption].into_iter().flatten() {
        total = Some(match total {
            None => part,
            Some(t) => tape.add(t, part)?,
        });
    }
    Ok(match total {
        Some(v) => v,
        None => tape.zeros(1),
    })
}

/// Softmax over a logit row (plain data, no tape).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

//! Synthetic scene corpus with exact ground truth.
//!
//! Scenes are boxes on a canvas; relations between objects follow a fixed
//! geometric rule table, so every ground-truth predicate can be recomputed
//! from the two boxes alone. Region captions are templated sentences over
//! sampled triplets. ROI features come from a fixed random projection of
//! generative state, standing in for a convolutional backbone.

mod corpus;
mod features;
mod filters;
mod generate;
mod sample;
mod vocab;

pub use corpus::{read_corpus, write_corpus, CorpusMeta};
pub use features::{
    featurize_rois, perturb_ground_truth_proposals, Featurizer, FeaturizerConfig, PerturbConfig,
    ProposalSet,
};
pub use filters::{apply_cleansing_filters, CleansingConfig};
pub use generate::{generate_scene, GenConfig};
pub use sample::{sample_minibatch, CaptionTarget, Minibatch, ObjectTarget, SampleConfig};
pub use vocab::{Vocabulary, END_TOKEN, START_TOKEN, UNKNOWN_TOKEN};

use serde::{Deserialize, Serialize};

use crate::geometry::Bbox;

/// One placed object: box, category id and latent generative attributes
/// (color one-hot plus normalized size). Attributes are derived
/// deterministically from the category and box, so they survive
/// serialization without being stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub bbox: Bbox,
    pub category: usize,
    pub attributes: Vec<f64>,
}

/// Directed subject-predicate-object relation between two objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriplet {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

/// A region with a templated sentence; `tokens` excludes the start token
/// and ends with the end token.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCaption {
    pub bbox: Bbox,
    pub tokens: Vec<usize>,
}

/// Full ground truth for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub canvas: (f64, f64),
    pub objects: Vec<ObjectInstance>,
    pub triplets: Vec<RelationTriplet>,
    pub captions: Vec<RegionCaption>,
}

/// Number of geometric predicate rules; `c_pred` must be at least this.
pub const PREDICATE_RULE_COUNT: usize = 6;

pub const PRED_LEFT_OF: usize = 0;
pub const PRED_RIGHT_OF: usize = 1;
pub const PRED_ABOVE: usize = 2;
pub const PRED_BELOW: usize = 3;
pub const PRED_CONTAINS: usize = 4;
pub const PRED_INSIDE: usize = 5;

const PREDICATE_NAMES: [&str; PREDICATE_RULE_COUNT] =
    ["left_of", "right_of", "above", "below", "contains", "inside"];

/// Words a predicate contributes to a caption sentence.
pub fn predicate_words(predicate: usize) -> &'static [&'static str] {
    match predicate {
        PRED_LEFT_OF => &["is", "left", "of"],
        PRED_RIGHT_OF => &["is", "right", "of"],
        PRED_ABOVE => &["is", "above"],
        PRED_BELOW => &["is", "below"],
        PRED_CONTAINS => &["contains"],
        PRED_INSIDE => &["is", "inside"],
        _ => &[],
    }
}

pub fn predicate_name(predicate: usize) -> String {
    PREDICATE_NAMES
        .get(predicate)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("pred{predicate}"))
}

const CATEGORY_NAMES: [&str; 12] = [
    "person", "dog", "cat", "car", "tree", "house", "ball", "chair", "table", "bird", "cup",
    "book",
];

pub fn category_name(category: usize) -> String {
    CATEGORY_NAMES
        .get(category)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("obj{category}"))
}

pub const COLOR_COUNT: usize = 8;

const COLOR_NAMES: [&str; COLOR_COUNT] = [
    "red", "blue", "green", "yellow", "purple", "orange", "black", "white",
];

/// Each category carries a fixed color; the multiplier spreads neighboring
/// categories across the palette.
pub fn color_of_category(category: usize) -> usize {
    (category * 5 + 3) % COLOR_COUNT
}

pub fn color_name(color: usize) -> &'static str {
    COLOR_NAMES[color % COLOR_COUNT]
}

/// Attribute vector: color one-hot followed by normalized width/height.
pub const ATTRIBUTE_DIM: usize = COLOR_COUNT + 2;

pub fn attribute_vector(category: usize, bbox: &Bbox, canvas: (f64, f64)) -> Vec<f64> {
    let mut v = vec![0.0; ATTRIBUTE_DIM];
    v[color_of_category(category)] = 1.0;
    v[COLOR_COUNT] = bbox.width() / canvas.0;
    v[COLOR_COUNT + 1] = bbox.height() / canvas.1;
    v
}

/// The deterministic rule table: containment first, then the dominant
/// center offset decides between horizontal and vertical relations.
pub fn geometric_predicate(subject: &Bbox, object: &Bbox) -> usize {
    if subject.contains(object) {
        return PRED_CONTAINS;
    }
    if object.contains(subject) {
        return PRED_INSIDE;
    }
    let (scx, scy) = subject.center();
    let (ocx, ocy) = object.center();
    let dx = ocx - scx;
    let dy = ocy - scy;
    if dx.abs() >= dy.abs() {
        if dx >= 0.0 {
            PRED_LEFT_OF
        } else {
            PRED_RIGHT_OF
        }
    } else if dy >= 0.0 {
        PRED_ABOVE
    } else {
        PRED_BELOW
    }
}

impl SceneAnnotation {
    /// Union box of a triplet's endpoints.
    pub fn triplet_union(&self, t: &RelationTriplet) -> Bbox {
        self.objects[t.subject]
            .bbox
            .union_with(&self.objects[t.object].bbox)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> Bbox {
        Bbox::new(x1, y1, x2, y2)
    }

    #[test]
    fn rule_table_directional_pairs_are_consistent() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let c = b(30.0, 2.0, 40.0, 12.0);
        assert_eq!(geometric_predicate(&a, &c), PRED_LEFT_OF);
        assert_eq!(geometric_predicate(&c, &a), PRED_RIGHT_OF);

        let top = b(0.0, 0.0, 10.0, 10.0);
        let bottom = b(1.0, 40.0, 11.0, 50.0);
        assert_eq!(geometric_predicate(&top, &bottom), PRED_ABOVE);
        assert_eq!(geometric_predicate(&bottom, &top), PRED_BELOW);
    }

    #[test]
    fn rule_table_containment() {
        let outer = b(0.0, 0.0, 50.0, 50.0);
        let inner = b(10.0, 10.0, 20.0, 20.0);
        assert_eq!(geometric_predicate(&outer, &inner), PRED_CONTAINS);
        assert_eq!(geometric_predicate(&inner, &outer), PRED_INSIDE);
    }

    #[test]
    fn attribute_vector_layout() {
        let bbox = b(0.0, 0.0, 32.0, 64.0);
        let v = attribute_vector(0, &bbox, (128.0, 128.0));
        assert_eq!(v.len(), ATTRIBUTE_DIM);
        assert_eq!(v[color_of_category(0)], 1.0);
        assert_eq!(v[COLOR_COUNT], 0.25);
        assert_eq!(v[COLOR_COUNT + 1], 0.5);
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Bbox;

use super::vocab::{Vocabulary, END_TOKEN};
use super::{
    attribute_vector, category_name, color_name, color_of_category, geometric_predicate,
    predicate_words, ObjectInstance, RegionCaption, RelationTriplet, SceneAnnotation,
    PREDICATE_RULE_COUNT,
};

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub c_obj: usize,
    pub c_pred: usize,
    pub canvas_w: f64,
    pub canvas_h: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Upper bound on captions per scene; each caption describes one
    /// sampled triplet.
    pub max_captions: usize,
    pub min_object_size: f64,
    pub max_object_size: f64,
    pub max_caption_len: usize,
    /// Chance that a new object is placed inside an earlier one, so the
    /// containment predicates actually occur.
    pub nest_probability: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            c_obj: 12,
            c_pred: 6,
            canvas_w: 128.0,
            canvas_h: 128.0,
            min_objects: 2,
            max_objects: 8,
            max_captions: 3,
            min_object_size: 10.0,
            max_object_size: 48.0,
            max_caption_len: 12,
            nest_probability: 0.2,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_pred < PREDICATE_RULE_COUNT {
            return Err(Error::invalid(format!(
                "c_pred = {} but the geometric rule table defines {} predicates",
                self.c_pred, PREDICATE_RULE_COUNT
            )));
        }
        if self.c_obj == 0 {
            return Err(Error::invalid("c_obj must be positive"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::invalid("object count range is empty"));
        }
        if self.min_object_size <= 0.0 || self.min_object_size > self.max_object_size {
            return Err(Error::invalid("object size range is empty"));
        }
        if self.max_object_size >= self.canvas_w.min(self.canvas_h) {
            return Err(Error::invalid("objects must fit on the canvas"));
        }
        if self.max_caption_len < 12 {
            return Err(Error::invalid(
                "max_caption_len must fit the longest template (12)",
            ));
        }
        Ok(())
    }
}

/// Generate one scene. Deterministic for a fixed `(config, seed)` pair.
///
/// Objects are placed uniformly (occasionally nested inside an earlier
/// object); every ordered pair of objects yields a triplet whose predicate
/// follows [`geometric_predicate`]; captions are templated sentences over
/// sampled triplets, with the triplet's union box as the caption region.
pub fn generate_scene(config: &GenConfig, vocab: &Vocabulary, seed: u64) -> Result<SceneAnnotation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canvas = (config.canvas_w, config.canvas_h);

    let n = rng.gen_range(config.min_objects..=config.max_objects);
    let mut objects: Vec<ObjectInstance> = Vec::with_capacity(n);
    for i in 0..n {
        let host = if i > 0 && rng.gen_bool(config.nest_probability) {
            // Pick a previous object large enough to hold a nested box.
            let candidates: Vec<usize> = (0..objects.len())
                .filter(|&j| {
                    objects[j].bbox.width() > 2.2 * config.min_object_size
                        && objects[j].bbox.height() > 2.2 * config.min_object_size
                })
                .collect();
            candidates.choose(&mut rng).copied()
        } else {
            None
        };
        let bbox = match host {
            Some(j) => {
                let outer = objects[j].bbox;
                let w = rng.gen_range(config.min_object_size..outer.width() / 2.0);
                let h = rng.gen_range(config.min_object_size..outer.height() / 2.0);
                let x1 = rng.gen_range(outer.x1..outer.x2 - w);
                let y1 = rng.gen_range(outer.y1..outer.y2 - h);
                Bbox::new(x1, y1, x1 + w, y1 + h)
            }
            None => {
                let w = rng.gen_range(config.min_object_size..=config.max_object_size);
                let h = rng.gen_range(config.min_object_size..=config.max_object_size);
                let x1 = rng.gen_range(0.0..config.canvas_w - w);
                let y1 = rng.gen_range(0.0..config.canvas_h - h);
                Bbox::new(x1, y1, x1 + w, y1 + h)
            }
        };
        let category = rng.gen_range(0..config.c_obj);
        objects.push(ObjectInstance {
            bbox,
            category,
            attributes: attribute_vector(category, &bbox, canvas),
        });
    }

    let mut triplets = Vec::new();
    for s in 0..n {
        for o in 0..n {
            if s == o {
                continue;
            }
            triplets.push(RelationTriplet {
                subject: s,
                object: o,
                predicate: geometric_predicate(&objects[s].bbox, &objects[o].bbox),
            });
        }
    }

    let mut captions = Vec::new();
    if !triplets.is_empty() && config.max_captions > 0 {
        let count = rng.gen_range(1..=config.max_captions.min(triplets.len()));
        let mut picks: Vec<usize> = (0..triplets.len()).collect();
        picks.shuffle(&mut rng);
        picks.truncate(count);
        picks.sort_unstable();
        for idx in picks {
            let t = &triplets[idx];
            let tokens = caption_tokens(vocab, &objects[t.subject], t.predicate, &objects[t.object]);
            debug_assert!(tokens.len() <= config.max_caption_len);
            captions.push(RegionCaption {
                bbox: objects[t.subject].bbox.union_with(&objects[t.object].bbox),
                tokens,
            });
        }
    }

    Ok(SceneAnnotation {
        canvas,
        objects,
        triplets,
        captions,
    })
}

/// "a <color> <category> <predicate words> a <color> <category>" + end.
fn caption_tokens(
    vocab: &Vocabulary,
    subject: &ObjectInstance,
    predicate: usize,
    object: &ObjectInstance,
) -> Vec<usize> {
    let mut words: Vec<String> = Vec::new();
    for obj_words in [
        describe(subject),
        predicate_words(predicate)
            .iter()
            .map(|w| w.to_string())
            .collect(),
        describe(object),
    ] {
        words.extend(obj_words);
    }
    let mut tokens: Vec<usize> = words.iter().map(|w| vocab.id(w)).collect();
    tokens.push(END_TOKEN);
    tokens
}

fn describe(obj: &ObjectInstance) -> Vec<String> {
    vec![
        "a".to_string(),
        color_name(color_of_category(obj.category)).to_string(),
        category_name(obj.category),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PRED_LEFT_OF, PRED_RIGHT_OF};

    fn vocab() -> Vocabulary {
        Vocabulary::for_scene_config(12)
    }

    #[test]
    fn two_object_scene_has_both_directional_triplets() {
        let config = GenConfig {
            min_objects: 2,
            max_objects: 2,
            nest_probability: 0.0,
            ..GenConfig::default()
        };
        let v = vocab();
        for seed in 0..20 {
            let scene = generate_scene(&config, &v, seed).unwrap();
            assert_eq!(scene.triplets.len(), 2);
            let a = &scene.objects[0].bbox;
            let b = &scene.objects[1].bbox;
            let p01 = geometric_predicate(a, b);
            let p10 = geometric_predicate(b, a);
            assert!(scene
                .triplets
                .contains(&RelationTriplet { subject: 0, object: 1, predicate: p01 }));
            assert!(scene
                .triplets
                .contains(&RelationTriplet { subject: 1, object: 0, predicate: p10 }));
            if p01 == PRED_LEFT_OF {
                assert_eq!(p10, PRED_RIGHT_OF);
            }
        }
    }

    #[test]
    fn single_object_scene_is_bare() {
        let config = GenConfig {
            min_objects: 1,
            max_objects: 1,
            ..GenConfig::default()
        };
        let scene = generate_scene(&config, &vocab(), 5).unwrap();
        assert!(scene.triplets.is_empty());
        assert!(scene.captions.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let config = GenConfig::default();
        let v = vocab();
        let a = generate_scene(&config, &v, 123).unwrap();
        let b = generate_scene(&config, &v, 123).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&config, &v, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn predicates_recomputable_from_boxes() {
        // Self-consistency oracle over many scenes.
        let config = GenConfig::default();
        let v = vocab();
        for seed in 0..50 {
            let scene = generate_scene(&config, &v, seed).unwrap();
            for t in &scene.triplets {
                assert_eq!(
                    t.predicate,
                    geometric_predicate(
                        &scene.objects[t.subject].bbox,
                        &scene.objects[t.object].bbox
                    )
                );
            }
        }
    }

    #[test]
    fn captions_cover_their_triplet_union() {
        use crate::geometry::coverage_fraction;
        let config = GenConfig::default();
        let v = vocab();
        for seed in 0..50 {
            let scene = generate_scene(&config, &v, seed).unwrap();
            for cap in &scene.captions {
                assert!(cap.tokens.len() <= config.max_caption_len);
                assert_eq!(*cap.tokens.last().unwrap(), END_TOKEN);
                let covered = scene.triplets.iter().any(|t| {
                    let u = scene.triplet_union(t);
                    u.area() > 0.0 && coverage_fraction(&u, &cap.bbox).unwrap() >= 0.7
                });
                assert!(covered, "caption box covers no triplet union");
            }
        }
    }

    #[test]
    fn rejects_insufficient_predicate_budget() {
        let config = GenConfig {
            c_pred: 5,
            ..GenConfig::default()
        };
        assert!(generate_scene(&config, &vocab(), 0).is_err());
    }

    #[test]
    fn containment_occurs_with_nesting() {
        use crate::dataset::PRED_CONTAINS;
        let config = GenConfig {
            min_objects: 5,
            max_objects: 8,
            nest_probability: 0.5,
            ..GenConfig::default()
        };
        let v = vocab();
        let found = (0..40).any(|seed| {
            generate_scene(&config, &v, seed)
                .unwrap()
                .triplets
                .iter()
                .any(|t| t.predicate == PRED_CONTAINS)
        });
        assert!(found);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vocab::UNKNOWN_TOKEN;
use super::{RelationTriplet, SceneAnnotation};

/// Corpus cleansing thresholds. Counterparts of the usual dataset
/// preparation steps: drop tiny boxes, keep only frequent categories,
/// predicates and words.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CleansingConfig {
    pub min_object_edge: f64,
    pub min_caption_edge: f64,
    pub top_objects: usize,
    pub top_predicates: usize,
    pub top_words: usize,
}

/// Apply all cleansing filters to a corpus. Idempotent: running the filter
/// twice equals running it once.
///
/// Order: size filters first, then frequency ranking on the survivors.
/// Objects outside the top-K categories are removed (triplets referencing
/// them dropped, indices remapped); triplets with unranked predicates are
/// dropped; unranked caption words become the unknown token.
pub fn apply_cleansing_filters(
    scenes: &[SceneAnnotation],
    config: &CleansingConfig,
) -> Result<Vec<SceneAnnotation>> {
    if config.min_object_edge <= 0.0 || config.min_caption_edge <= 0.0 {
        return Err(Error::invalid("cleansing thresholds must be positive"));
    }
    if config.top_objects == 0 || config.top_predicates == 0 || config.top_words == 0 {
        return Err(Error::invalid("top-K cleansing budgets must be positive"));
    }

    // Pass 1: size filters.
    let mut sized: Vec<SceneAnnotation> = scenes
        .iter()
        .map(|scene| {
            let keep: Vec<bool> = scene
                .objects
                .iter()
                .map(|o| o.bbox.shorter_edge() >= config.min_object_edge)
                .collect();
            let mut filtered = retain_objects(scene, &keep);
            filtered
                .captions
                .retain(|c| c.bbox.shorter_edge() >= config.min_caption_edge);
            filtered
        })
        .collect();

    // Corpus statistics over the survivors.
    let mut cat_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pred_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut word_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for scene in &sized {
        for o in &scene.objects {
            *cat_counts.entry(o.category).or_default() += 1;
        }
        for t in &scene.triplets {
            *pred_counts.entry(t.predicate).or_default() += 1;
        }
        for c in &scene.captions {
            for &tok in &c.tokens {
                if tok > UNKNOWN_TOKEN {
                    *word_counts.entry(tok).or_default() += 1;
                }
            }
        }
    }
    let kept_cats = top_k(&cat_counts, config.top_objects);
    let kept_preds = top_k(&pred_counts, config.top_predicates);
    let kept_words = top_k(&word_counts, config.top_words);

    // Pass 2: frequency filters.
    for scene in &mut sized {
        let keep: Vec<bool> = scene
            .objects
            .iter()
            .map(|o| kept_cats.contains(&o.category))
            .collect();
        *scene = retain_objects(scene, &keep);
        scene.triplets.retain(|t| kept_preds.contains(&t.predicate));
        for c in &mut scene.captions {
            for tok in &mut c.tokens {
                if *tok > UNKNOWN_TOKEN && !kept_words.contains(tok) {
                    *tok = UNKNOWN_TOKEN;
                }
            }
        }
    }
    Ok(sized)
}

/// Top-K ids by count, ties broken by lower id.
fn top_k(counts: &BTreeMap<usize, usize>, k: usize) -> Vec<usize> {
    let mut ranked: Vec<(usize, usize)> = counts.iter().map(|(&id, &c)| (id, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked.into_iter().map(|(id, _)| id).collect()
}

/// Drop objects where `keep` is false, remapping triplet indices and
/// removing triplets that reference a dropped object.
fn retain_objects(scene: &SceneAnnotation, keep: &[bool]) -> SceneAnnotation {
    let mut remap = vec![None; scene.objects.len()];
    let mut objects = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        if keep[i] {
            remap[i] = Some(objects.len());
            objects.push(obj.clone());
        }
    }
    let triplets = scene
        .triplets
        .iter()
        .filter_map(|t| {
            Some(RelationTriplet {
                subject: remap[t.subject]?,
                object: remap[t.object]?,
                predicate: t.predicate,
            })
        })
        .collect();
    SceneAnnotation {
        canvas: scene.canvas,
        objects,
        triplets,
        captions: scene.captions.clone(),
    }
}

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode_box_delta, iou, ScoredBox};

use super::vocab::END_TOKEN;
use super::SceneAnnotation;

/// Mini-batch budgets. Positive fraction applies to phrase pairs only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub objects: usize,
    pub captions: usize,
    pub phrases: usize,
    pub phrase_positive_fraction: f64,
    /// IoU at or above which a proposal counts as matching a ground-truth
    /// box.
    pub fg_iou: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            objects: 256,
            captions: 128,
            phrases: 512,
            phrase_positive_fraction: 0.25,
            fg_iou: 0.5,
        }
    }
}

/// Classification / regression target for one sampled object ROI.
/// `class` 0 is the background label; real categories are shifted by one.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTarget {
    pub class: usize,
    pub delta: Option<[f64; 4]>,
    pub matched_gt: Option<usize>,
}

/// Caption target for one sampled caption ROI. Negatives carry the
/// single-token end sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionTarget {
    pub tokens: Vec<usize>,
    pub delta: Option<[f64; 4]>,
    pub matched_gt: Option<usize>,
}

/// Sampled training mini-batch for one scene. Phrase pairs index into
/// `object_rois` (local indices).
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub object_rois: Vec<usize>,
    pub object_targets: Vec<ObjectTarget>,
    pub caption_rois: Vec<usize>,
    pub caption_targets: Vec<CaptionTarget>,
    pub phrase_pairs: Vec<(usize, usize)>,
    /// Predicate class per pair; 0 is the irrelevant label.
    pub phrase_targets: Vec<usize>,
}

/// Sample object ROIs, caption ROIs and phrase pairs with labels.
///
/// Positive ROIs match a ground-truth box of their branch at IoU >=
/// `fg_iou`; a phrase pair is positive when both endpoints match distinct
/// objects that form an annotated triplet. Negatives get the background /
/// irrelevant / end-token labels. Phrase positives are capped at the
/// configured fraction; remaining slots fill with negatives.
pub fn sample_minibatch(
    scene: &SceneAnnotation,
    object_rois: &[ScoredBox],
    caption_rois: &[ScoredBox],
    config: &SampleConfig,
    seed: u64,
) -> Result<Minibatch> {
    if object_rois.is_empty() {
        return Err(Error::invalid("sample_minibatch: zero object proposals"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let object_rois_sel = choose(object_rois.len(), config.objects, &mut rng);
    let object_targets: Vec<ObjectTarget> = object_rois_sel
        .iter()
        .map(|&i| object_target(scene, &object_rois[i], config.fg_iou))
        .collect::<Result<_>>()?;

    let caption_rois_sel = choose(caption_rois.len(), config.captions, &mut rng);
    let caption_targets: Vec<CaptionTarget> = caption_rois_sel
        .iter()
        .map(|&i| caption_target(scene, &caption_rois[i], config.fg_iou))
        .collect::<Result<_>>()?;

    // Phrase candidates over the sampled objects, in deterministic order.
    let triplet_lookup: HashMap<(usize, usize), usize> = scene
        .triplets
        .iter()
        .map(|t| ((t.subject, t.object), t.predicate))
        .collect();
    let n = object_rois_sel.len();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let label = match (object_targets[a].matched_gt, object_targets[b].matched_gt) {
                (Some(s), Some(o)) if s != o => {
                    triplet_lookup.get(&(s, o)).map(|&p| p + 1).unwrap_or(0)
                }
                _ => 0,
            };
            if label > 0 {
                positives.push(((a, b), label));
            } else {
                negatives.push(((a, b), label));
            }
        }
    }

    let pos_cap = (config.phrases as f64 * config.phrase_positive_fraction).round() as usize;
    let mut pos_take = positives.len().min(pos_cap);
    let mut neg_take = negatives.len().min(config.phrases - pos_take);
    if pos_take > neg_take / 3 {
        // Keep the positive fraction at or below the configured 25%.
        pos_take = neg_take / 3;
        neg_take = negatives.len().min(config.phrases - pos_take);
    }
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut picked: Vec<((usize, usize), usize)> = positives
        .into_iter()
        .take(pos_take)
        .chain(negatives.into_iter().take(neg_take))
        .collect();
    picked.sort_by_key(|&(pair, _)| pair);

    let (phrase_pairs, phrase_targets) = picked.into_iter().unzip();

    Ok(Minibatch {
        object_rois: object_rois_sel,
        object_targets,
        caption_rois: caption_rois_sel,
        caption_targets,
        phrase_pairs,
        phrase_targets,
    })
}

/// Up to `k` distinct indices from `0..n`, returned sorted.
fn choose(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if n > k {
        all.shuffle(rng);
        all.truncate(k);
        all.sort_unstable();
    }
    all
}

fn object_target(scene: &SceneAnnotation, roi: &ScoredBox, fg_iou: f64) -> Result<ObjectTarget> {
    let mut best = 0.0;
    let mut matched = None;
    for (g, obj) in scene.objects.iter().enumerate() {
        let v = iou(&roi.bbox, &obj.bbox);
        if v > best {
            best = v;
            matched = Some(g);
        }
    }
    if best >= fg_iou {
        let g = matched.unwrap();
        Ok(ObjectTarget {
            class: scene.objects[g].category + 1,
            delta: Some(encode_box_delta(&roi.bbox, &scene.objects[g].bbox)?),
            matched_gt: Some(g),
        })
    } else {
        Ok(ObjectTarget {
            class: 0,
            delta: None,
            matched_gt: None,
        })
    }
}

fn caption_target(scene: &SceneAnnotation, roi: &ScoredBox, fg_iou: f64) -> Result<CaptionTarget> {
    let mut best = 0.0;
    let mut matched = None;
    for (g, cap) in scene.captions.iter().enumerate() {
        let v = iou(&roi.bbox, &cap.bbox);
        if v > best {
            best = v;
            matched = Some(g);
        }
    }
    if best >= fg_iou {
        let g = matched.unwrap();
        Ok(CaptionTarget {
            tokens: scene.captions[g].tokens.clone(),
            delta: Some(encode_box_delta(&roi.bbox, &scene.captions[g].bbox)?),
            matched_gt: Some(g),
        })
    } else {
        Ok(CaptionTarget {
            tokens: vec![END_TOKEN],
            delta: None,
            matched_gt: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        generate_scene, perturb_ground_truth_proposals, GenConfig, PerturbConfig, Vocabulary,
    };
    use crate::geometry::Bbox;

    fn setup(seed: u64) -> (SceneAnnotation, Vec<ScoredBox>, Vec<ScoredBox>) {
        let vocab = Vocabulary::for_scene_config(12);
        let scene = generate_scene(&GenConfig::default(), &vocab, seed).unwrap();
        let (obj, cap) = perturb_ground_truth_proposals(&scene, &PerturbConfig::default(), seed);
        (scene, obj, cap)
    }

    #[test]
    fn takes_all_when_under_budget() {
        let (scene, obj, cap) = setup(1);
        let mb = sample_minibatch(&scene, &obj, &cap, &SampleConfig::default(), 0).unwrap();
        assert_eq!(mb.object_rois.len(), obj.len());
        assert_eq!(mb.caption_rois.len(), cap.len());
    }

    #[test]
    fn errors_on_zero_proposals() {
        let (scene, _, cap) = setup(2);
        assert!(sample_minibatch(&scene, &[], &cap, &SampleConfig::default(), 0).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (scene, obj, cap) = setup(3);
        let cfg = SampleConfig::default();
        let a = sample_minibatch(&scene, &obj, &cap, &cfg, 5).unwrap();
        let b = sample_minibatch(&scene, &obj, &cap, &cfg, 5).unwrap();
        assert_eq!(a.object_rois, b.object_rois);
        assert_eq!(a.phrase_pairs, b.phrase_pairs);
        assert_eq!(a.phrase_targets, b.phrase_targets);
    }

    #[test]
    fn phrase_positive_fraction_never_exceeds_quarter() {
        let cfg = SampleConfig::default();
        for seed in 0..30 {
            let (scene, obj, cap) = setup(seed);
            let mb = sample_minibatch(&scene, &obj, &cap, &cfg, seed).unwrap();
            let pos = mb.phrase_targets.iter().filter(|&&t| t > 0).count();
            let total = mb.phrase_targets.len().max(1);
            assert!(
                pos as f64 <= total as f64 * cfg.phrase_positive_fraction + 1.0,
                "seed {seed}: {pos}/{total}"
            );
        }
    }

    #[test]
    fn caps_positives_at_quarter_of_batch() {
        // 8 objects x 2 copies + 10 distractors = 26 proposals -> 650
        // ordered pairs, roughly 220 positive (both endpoints matched to
        // distinct related objects) and 420+ negative: sampling must take
        // 128 positives and fill 384 negatives.
        let vocab = Vocabulary::for_scene_config(12);
        let gen = GenConfig {
            min_objects: 8,
            max_objects: 8,
            max_object_size: 14.0,
            min_object_size: 10.0,
            nest_probability: 0.0,
            ..GenConfig::default()
        };
        let scene = generate_scene(&gen, &vocab, 11).unwrap();
        let cfg_perturb = PerturbConfig {
            jitter: 0.05,
            copies: 2,
            distractors: 10,
            score_noise: 0.0,
        };
        let (obj, cap) = perturb_ground_truth_proposals(&scene, &cfg_perturb, 0);
        let mb = sample_minibatch(&scene, &obj, &cap, &SampleConfig::default(), 0).unwrap();
        let pos = mb.phrase_targets.iter().filter(|&&t| t > 0).count();
        let neg = mb.phrase_targets.len() - pos;
        assert_eq!(pos, 128);
        assert_eq!(neg, 384);
    }

    #[test]
    fn negative_captions_get_end_token() {
        let (scene, obj, _) = setup(7);
        let far = vec![ScoredBox {
            bbox: Bbox::new(0.0, 0.0, 3.0, 3.0),
            score: 0.1,
            index: 0,
        }];
        let mb = sample_minibatch(&scene, &obj, &far, &SampleConfig::default(), 0).unwrap();
        assert_eq!(mb.caption_targets[0].tokens, vec![END_TOKEN]);
        assert!(mb.caption_targets[0].delta.is_none());
    }

    #[test]
    fn positive_objects_carry_regression_targets() {
        let (scene, obj, cap) = setup(9);
        let mb = sample_minibatch(&scene, &obj, &cap, &SampleConfig::default(), 1).unwrap();
        let mut saw_positive = false;
        for (roi_idx, target) in mb.object_rois.iter().zip(&mb.object_targets) {
            if target.class > 0 {
                saw_positive = true;
                assert!(target.delta.is_some());
                let gt = target.matched_gt.unwrap();
                assert!(iou(&obj[*roi_idx].bbox, &scene.objects[gt].bbox) >= 0.5);
            }
        }
        assert!(saw_positive);
    }
}

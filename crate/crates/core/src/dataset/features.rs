use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{coverage_fraction, iou, Bbox, ScoredBox};

use super::{SceneAnnotation, ATTRIBUTE_DIM};

/// Shape of the ROI feature map. `d_in` is the projected feature width fed
/// to the model; the raw width is `c_obj + 4 + ATTRIBUTE_DIM`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub d_in: usize,
    pub c_obj: usize,
    pub noise_sigma: f64,
}

/// Fixed random projection standing in for a convolutional backbone.
///
/// The raw descriptor per ROI concatenates: the one-hot category of the
/// best-overlapping object (zeros when max IoU < 0.5), normalized box
/// geometry, and the mean attribute vector of objects the ROI covers. A
/// shared seeded Gaussian matrix projects this to `d_in` dims; optional
/// Gaussian noise is added per call.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeaturizerConfig,
    projection: Vec<f64>, // d_in x raw_dim, row-major
}

impl Featurizer {
    pub fn new(config: FeaturizerConfig, projection_seed: u64) -> Self {
        let raw = config.c_obj + 4 + ATTRIBUTE_DIM;
        let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
        let dist = Normal::new(0.0, 1.0 / (raw as f64).sqrt()).unwrap();
        let projection = (0..config.d_in * raw).map(|_| dist.sample(&mut rng)).collect();
        Featurizer { config, projection }
    }

    pub fn d_in(&self) -> usize {
        self.config.d_in
    }

    fn raw_dim(&self) -> usize {
        self.config.c_obj + 4 + ATTRIBUTE_DIM
    }

    /// Feature for a single ROI. The RNG is only consulted when
    /// `noise_sigma > 0`, so noise-free calls are reproducible by
    /// construction.
    pub fn feature(
        &self,
        scene: &SceneAnnotation,
        roi: &Bbox,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let raw_dim = self.raw_dim();
        let mut raw = vec![0.0; raw_dim];

        let mut best_iou = 0.0;
        let mut best_cat = None;
        for obj in &scene.objects {
            let v = iou(roi, &obj.bbox);
            if v > best_iou {
                best_iou = v;
                best_cat = Some(obj.category);
            }
        }
        if best_iou >= 0.5 {
            let cat = best_cat.unwrap();
            if cat >= self.config.c_obj {
                return Err(Error::invalid(format!(
                    "featurizer built for {} categories, scene has category {cat}",
                    self.config.c_obj
                )));
            }
            raw[cat] = 1.0;
        }

        let (w, h) = scene.canvas;
        let (cx, cy) = roi.center();
        raw[self.config.c_obj] = cx / w;
        raw[self.config.c_obj + 1] = cy / h;
        raw[self.config.c_obj + 2] = roi.width() / w;
        raw[self.config.c_obj + 3] = roi.height() / h;

        let mut covered = 0usize;
        let attr_off = self.config.c_obj + 4;
        for obj in &scene.objects {
            if obj.bbox.area() <= 0.0 {
                continue;
            }
            if coverage_fraction(&obj.bbox, roi)? >= 0.5 {
                if obj.attributes.len() != ATTRIBUTE_DIM {
                    return Err(Error::ShapeMismatch {
                        context: "featurizer attribute dim",
                        left: vec![obj.attributes.len()],
                        right: vec![ATTRIBUTE_DIM],
                    });
                }
                for (k, a) in obj.attributes.iter().enumerate() {
                    raw[attr_off + k] += a;
                }
                covered += 1;
            }
        }
        if covered > 0 {
            for v in &mut raw[attr_off..] {
                *v /= covered as f64;
            }
        }

        let mut out = vec![0.0; self.config.d_in];
        for (i, slot) in out.iter_mut().enumerate() {
            let row = &self.projection[i * raw_dim..(i + 1) * raw_dim];
            let mut acc = 0.0;
            for (p, r) in row.iter().zip(&raw) {
                acc += p * r;
            }
            *slot = acc;
        }
        if self.config.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.config.noise_sigma).unwrap();
            for v in &mut out {
                *v += noise.sample(rng);
            }
        }
        Ok(out)
    }

    pub fn features_for_boxes(
        &self,
        scene: &SceneAnnotation,
        boxes: &[Bbox],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        boxes.iter().map(|b| self.feature(scene, b, rng)).collect()
    }
}

/// Object and caption proposals plus their projected features, keyed by a
/// roi id that is unique across both lists (captions follow objects).
#[derive(Debug, Clone)]
pub struct ProposalSet {
    pub object_rois: Vec<ScoredBox>,
    pub caption_rois: Vec<ScoredBox>,
    pub features: BTreeMap<usize, Vec<f64>>,
}

impl ProposalSet {
    pub fn object_feature(&self, i: usize) -> &[f64] {
        &self.features[&i]
    }

    pub fn caption_feature(&self, i: usize) -> &[f64] {
        &self.features[&(self.object_rois.len() + i)]
    }
}

/// Featurize object and caption ROIs into a [`ProposalSet`].
pub fn featurize_rois(
    scene: &SceneAnnotation,
    object_rois: Vec<ScoredBox>,
    caption_rois: Vec<ScoredBox>,
    featurizer: &Featurizer,
    rng: &mut ChaCha8Rng,
) -> Result<ProposalSet> {
    let mut features = BTreeMap::new();
    for (i, roi) in object_rois.iter().enumerate() {
        features.insert(i, featurizer.feature(scene, &roi.bbox, rng)?);
    }
    for (i, roi) in caption_rois.iter().enumerate() {
        features.insert(object_rois.len() + i, featurizer.feature(scene, &roi.bbox, rng)?);
    }
    Ok(ProposalSet {
        object_rois,
        caption_rois,
        features,
    })
}

/// Proposal synthesis parameters (the stand-in for a proposal network).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Corner jitter as a fraction of box width/height.
    pub jitter: f64,
    /// Jittered copies emitted per ground-truth box.
    pub copies: usize,
    /// Random distractor boxes added per branch.
    pub distractors: usize,
    /// Uniform score noise half-width.
    pub score_noise: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            jitter: 0.1,
            copies: 2,
            distractors: 3,
            score_noise: 0.1,
        }
    }
}

/// Jittered ground-truth boxes plus random distractors, each with a
/// synthetic score (overlap with its source, plus noise, clamped to
/// `[0, 1]`). Deterministic for a fixed seed.
pub fn perturb_ground_truth_proposals(
    scene: &SceneAnnotation,
    config: &PerturbConfig,
    seed: u64,
) -> (Vec<ScoredBox>, Vec<ScoredBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let object_boxes: Vec<Bbox> = scene.objects.iter().map(|o| o.bbox).collect();
    let caption_boxes: Vec<Bbox> = scene.captions.iter().map(|c| c.bbox).collect();
    let objects = perturb_branch(&object_boxes, scene.canvas, config, &mut rng);
    let captions = perturb_branch(&caption_boxes, scene.canvas, config, &mut rng);
    (objects, captions)
}

fn perturb_branch(
    sources: &[Bbox],
    canvas: (f64, f64),
    config: &PerturbConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<ScoredBox> {
    let mut out = Vec::new();
    let mut index = 0;
    for src in sources {
        for _ in 0..config.copies {
            let jittered = jitter_box(src, config.jitter, canvas, rng);
            let score = noisy_score(iou(&jittered, src), config.score_noise, rng);
            out.push(ScoredBox {
                bbox: jittered,
                score,
                index,
            });
            index += 1;
        }
    }
    for _ in 0..config.distractors {
        let w = rng.gen_range(0.05 * canvas.0..0.4 * canvas.0);
        let h = rng.gen_range(0.05 * canvas.1..0.4 * canvas.1);
        let x1 = rng.gen_range(0.0..canvas.0 - w);
        let y1 = rng.gen_range(0.0..canvas.1 - h);
        let bbox = Bbox::new(x1, y1, x1 + w, y1 + h);
        let best = sources.iter().map(|s| iou(&bbox, s)).fold(0.0, f64::max);
        let score = noisy_score(best, config.score_noise, rng);
        out.push(ScoredBox { bbox, score, index });
        index += 1;
    }
    out
}

fn jitter_box(src: &Bbox, jitter: f64, canvas: (f64, f64), rng: &mut ChaCha8Rng) -> Bbox {
    if jitter <= 0.0 {
        return *src;
    }
    let (w, h) = (src.width(), src.height());
    let mut x1 = src.x1 + rng.gen_range(-jitter..jitter) * w;
    let mut x2 = src.x2 + rng.gen_range(-jitter..jitter) * w;
    let mut y1 = src.y1 + rng.gen_range(-jitter..jitter) * h;
    let mut y2 = src.y2 + rng.gen_range(-jitter..jitter) * h;
    if x1 > x2 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y1 > y2 {
        std::mem::swap(&mut y1, &mut y2);
    }
    Bbox::new(x1, y1, x2, y2).clamp_to(canvas.0, canvas.1)
}

fn noisy_score(base: f64, noise: f64, rng: &mut ChaCha8Rng) -> f64 {
    let s = if noise > 0.0 {
        base + rng.gen_range(-noise..noise)
    } else {
        base
    };
    s.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_scene, GenConfig, Vocabulary};

    fn scene(seed: u64) -> SceneAnnotation {
        let vocab = Vocabulary::for_scene_config(12);
        generate_scene(&GenConfig::default(), &vocab, seed).unwrap()
    }

    fn featurizer(noise: f64) -> Featurizer {
        Featurizer::new(
            FeaturizerConfig {
                d_in: 64,
                c_obj: 12,
                noise_sigma: noise,
            },
            11,
        )
    }

    #[test]
    fn noise_free_features_are_deterministic() {
        let sc = scene(1);
        let f = featurizer(0.0);
        let roi = sc.objects[0].bbox;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = f.feature(&sc, &roi, &mut rng).unwrap();
        let b = f.feature(&sc, &roi, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn identical_generative_inputs_give_identical_features() {
        // Two scenes that agree on content produce the same ROI feature.
        let sc = scene(2);
        let f = featurizer(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let roi = Bbox::new(10.0, 10.0, 40.0, 40.0);
        let a = f.feature(&sc, &roi, &mut rng).unwrap();
        let b = f.feature(&sc.clone(), &roi, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn featurize_rois_assigns_unique_ids_and_uniform_dims() {
        let sc = scene(3);
        let f = featurizer(0.05);
        let (obj, cap) = perturb_ground_truth_proposals(&sc, &PerturbConfig::default(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set = featurize_rois(&sc, obj, cap, &f, &mut rng).unwrap();
        assert_eq!(
            set.features.len(),
            set.object_rois.len() + set.caption_rois.len()
        );
        for feat in set.features.values() {
            assert_eq!(feat.len(), 64);
        }
    }

    #[test]
    fn zero_jitter_no_distractors_reproduces_ground_truth() {
        let sc = scene(4);
        let cfg = PerturbConfig {
            jitter: 0.0,
            copies: 1,
            distractors: 0,
            score_noise: 0.0,
        };
        let (obj, cap) = perturb_ground_truth_proposals(&sc, &cfg, 0);
        assert_eq!(obj.len(), sc.objects.len());
        for (roi, gt) in obj.iter().zip(&sc.objects) {
            assert_eq!(roi.bbox, gt.bbox);
            assert_eq!(roi.score, 1.0);
        }
        assert_eq!(cap.len(), sc.captions.len());
    }

    #[test]
    fn jittered_proposals_keep_iou_above_half() {
        // Monte-Carlo over the jitter distribution at jitter = 0.1.
        let sc = scene(5);
        let cfg = PerturbConfig {
            jitter: 0.1,
            copies: 1,
            distractors: 0,
            score_noise: 0.0,
        };
        let mut draws = 0;
        let mut seed = 0;
        while draws < 1000 {
            let (obj, _) = perturb_ground_truth_proposals(&sc, &cfg, seed);
            for (roi, gt) in obj.iter().zip(&sc.objects) {
                assert!(
                    iou(&roi.bbox, &gt.bbox) > 0.5,
                    "seed {seed}: iou {}",
                    iou(&roi.bbox, &gt.bbox)
                );
                draws += 1;
            }
            seed += 1;
        }
    }

    #[test]
    fn perturbation_is_seed_deterministic() {
        let sc = scene(6);
        let cfg = PerturbConfig::default();
        let a = perturb_ground_truth_proposals(&sc, &cfg, 42);
        let b = perturb_ground_truth_proposals(&sc, &cfg, 42);
        assert_eq!(a, b);
    }
}

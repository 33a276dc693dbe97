//! Scene-graph and detection metrics.
//!
//! Three triplet-recall protocols with progressively stricter matching:
//!
//! - PredCls: ground-truth boxes and object labels are given, only the
//!   predicate is compared (predictions are anchored to ground-truth
//!   object indices).
//! - PhrCls: ground-truth boxes given; predicate and both object labels
//!   are compared.
//! - SGGen: nothing given; all three labels must match and both boxes
//!   must overlap their ground truth at IoU > 0.5.
//!
//! Each ground-truth triplet is matched by at most one prediction, greedily
//! in score order. Rec@K aggregates as the mean of per-image recalls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Bbox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskMode {
    PredCls,
    PhrCls,
    SgGen,
}

impl TaskMode {
    pub fn name(&self) -> &'static str {
        match self {
            TaskMode::PredCls => "PredCls",
            TaskMode::PhrCls => "PhrCls",
            TaskMode::SgGen => "SGGen",
        }
    }
}

/// One ground-truth relation with everything the three protocols need.
#[derive(Debug, Clone, Copy)]
pub struct GtTriplet {
    pub subject_idx: usize,
    pub object_idx: usize,
    pub subject_box: Bbox,
    pub object_box: Bbox,
    pub subject_category: usize,
    pub predicate: usize,
    pub object_category: usize,
}

/// One scored triplet prediction. `subject_gt` / `object_gt` anchor the
/// prediction to ground-truth object indices when ground-truth boxes were
/// fed to the model (PredCls / PhrCls); `pair` is the proposal pair it came
/// from and breaks score ties deterministically.
#[derive(Debug, Clone, Copy)]
pub struct PredictedTriplet {
    pub pair: (usize, usize),
    pub subject_gt: Option<usize>,
    pub object_gt: Option<usize>,
    pub subject_box: Bbox,
    pub object_box: Bbox,
    pub subject_label: usize,
    pub predicate: usize,
    pub object_label: usize,
    pub score: f64,
}

fn matches(mode: TaskMode, pred: &PredictedTriplet, gt: &GtTriplet) -> bool {
    match mode {
        TaskMode::PredCls => {
            pred.subject_gt == Some(gt.subject_idx)
                && pred.object_gt == Some(gt.object_idx)
                && pred.predicate == gt.predicate
        }
        TaskMode::PhrCls => {
            pred.subject_gt == Some(gt.subject_idx)
                && pred.object_gt == Some(gt.object_idx)
                && pred.predicate == gt.predicate
                && pred.subject_label == gt.subject_category
                && pred.object_label == gt.object_category
        }
        TaskMode::SgGen => {
            pred.predicate == gt.predicate
                && pred.subject_label == gt.subject_category
                && pred.object_label == gt.object_category
                && iou(&pred.subject_box, &gt.subject_box) > 0.5
                && iou(&pred.object_box, &gt.object_box) > 0.5
        }
    }
}

/// Sort predictions by descending score; equal scores resolve by the
/// (subject, object) pair lexicographically.
fn ranked(predictions: &[PredictedTriplet]) -> Vec<&PredictedTriplet> {
    let mut order: Vec<&PredictedTriplet> = predictions.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.pair.cmp(&b.pair))
    });
    order
}

/// Per-image recall counts: hits at each K plus the ground-truth total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecall {
    pub hits: Vec<usize>,
    pub total: usize,
}

/// Greedy top-K matching for one image. `k_values` must be positive and
/// ascending hits are guaranteed by the single-pass sweep.
pub fn recall_at_k(
    predictions: &[PredictedTriplet],
    ground_truth: &[GtTriplet],
    k_values: &[usize],
    mode: TaskMode,
) -> Result<ImageRecall> {
    if k_values.is_empty() || k_values.iter().any(|&k| k == 0) {
        return Err(Error::invalid("recall_at_k: K values must be positive"));
    }
    let order = ranked(predictions);
    let max_k = *k_values.iter().max().unwrap();

    let mut matched = vec![false; ground_truth.len()];
    let mut hits_at = vec![0usize; k_values.len()];
    let mut hits = 0usize;
    for (rank, pred) in order.iter().take(max_k).enumerate() {
        if let Some(slot) = ground_truth
            .iter()
            .enumerate()
            .position(|(g, gt)| !matched[g] && matches(mode, pred, gt))
        {
            matched[slot] = true;
            hits += 1;
        }
        for (ki, &k) in k_values.iter().enumerate() {
            if rank + 1 == k {
                hits_at[ki] = hits;
            }
        }
    }
    // Cutoffs past the last prediction keep the final tally.
    for (ki, &k) in k_values.iter().enumerate() {
        if k > order.len() {
            hits_at[ki] = hits;
        }
    }
    Ok(ImageRecall {
        hits: hits_at,
        total: ground_truth.len(),
    })
}

/// Aggregate Rec@K over a corpus: mean of per-image recalls, skipping
/// images without ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub task: String,
    pub k_values: Vec<usize>,
    pub recall: Vec<f64>,
    pub n_images: usize,
    #[serde(skip)]
    pub per_image: Vec<ImageRecall>,
}

impl RecallReport {
    pub fn aggregate(mode: TaskMode, k_values: &[usize], per_image: Vec<ImageRecall>) -> Self {
        let mut sums = vec![0.0; k_values.len()];
        let mut counted = 0usize;
        for img in &per_image {
            if img.total == 0 {
                continue;
            }
            counted += 1;
            for (s, &h) in sums.iter_mut().zip(&img.hits) {
                *s += h as f64 / img.total as f64;
            }
        }
        let recall = sums
            .iter()
            .map(|s| if counted > 0 { s / counted as f64 } else { 0.0 })
            .collect();
        RecallReport {
            task: mode.name().to_string(),
            k_values: k_values.to_vec(),
            recall,
            n_images: per_image.len(),
            per_image,
        }
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.k_values
            .iter()
            .position(|&kk| kk == k)
            .map(|i| self.recall[i])
    }
}

/// One detection for mAP computation; `category` is a real class id.
#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub bbox: Bbox,
    pub category: usize,
    pub score: f64,
}

/// Per-class average precision with IoU > `iou_threshold` matching,
/// all-points interpolation. Classes without ground truth are `None` and
/// excluded from the mean.
pub fn mean_average_precision(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<(Bbox, usize)>],
    n_classes: usize,
    iou_threshold: f64,
) -> (f64, Vec<Option<f64>>) {
    assert_eq!(detections.len(), ground_truth.len());
    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        per_class.push(class_ap(detections, ground_truth, c, iou_threshold));
    }
    let present: Vec<f64> = per_class.iter().filter_map(|a| *a).collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (map, per_class)
}

fn class_ap(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<(Bbox, usize)>],
    class: usize,
    iou_threshold: f64,
) -> Option<f64> {
    let n_gt: usize = ground_truth
        .iter()
        .map(|g| g.iter().filter(|(_, c)| *c == class).count())
        .sum();
    if n_gt == 0 {
        return None;
    }
    // (image, det index, score), ranked by score then insertion order.
    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    for (img, dets) in detections.iter().enumerate() {
        for (di, d) in dets.iter().enumerate() {
            if d.category == class {
                ranked.push((img, di, d.score));
            }
        }
    }
    ranked.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.0, a.1).cmp(&(b.0, b.1)))
    });

    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for &(img, di, _) in &ranked {
        let det = &detections[img][di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, (gbox, gc)) in ground_truth[img].iter().enumerate() {
            if *gc != class || matched[img][gi] {
                continue;
            }
            let v = iou(&det.bbox, gbox);
            if v > iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[img][gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }
    Some(average_precision(&tp_flags, n_gt))
}

/// AP from ranked true-positive flags: sum of recall increments times the
/// interpolated (right-max) precision.
pub fn average_precision(tp_flags: &[bool], n_gt: usize) -> f64 {
    let n = tp_flags.len();
    let mut precision = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (k, &flag) in tp_flags.iter().enumerate() {
        if flag {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Interpolated precision: max over the suffix.
    let mut interp = precision.clone();
    for k in (0..n.saturating_sub(1)).rev() {
        interp[k] = interp[k].max(interp[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut tp2 = 0usize;
    for (k, &flag) in tp_flags.iter().enumerate() {
        if flag {
            tp2 += 1;
            let recall = tp2 as f64 / n_gt as f64;
            ap += (recall - prev_recall) * interp[k];
            prev_recall = recall;
        }
    }
    ap
}

/// Fraction of ground-truth boxes whose true class is among the k
/// highest-scoring classes. Ties resolve toward the lower class id.
pub fn topk_accuracy(class_scores: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    assert_eq!(class_scores.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for (scores, &label) in class_scores.iter().zip(labels) {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        if order.iter().take(k).any(|&c| c == label) {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Detection summary: mAP over detections plus top-1/top-5 classification
/// accuracy measured with ground-truth boxes fed as proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub map: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub top1: f64,
    pub top5: f64,
}

pub fn detection_metrics(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<(Bbox, usize)>],
    n_classes: usize,
    gt_class_scores: &[Vec<f64>],
    gt_labels: &[usize],
) -> DetectionMetrics {
    let (map, per_class_ap) = mean_average_precision(detections, ground_truth, n_classes, 0.5);
    DetectionMetrics {
        map,
        per_class_ap,
        top1: topk_accuracy(gt_class_scores, gt_labels, 1),
        top5: topk_accuracy(gt_class_scores, gt_labels, 5),
    }
}

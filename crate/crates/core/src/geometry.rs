//! Axis-aligned box arithmetic, overlap measures, non-maximum suppression
//! and anchor clustering. All coordinates are real-valued pixels; boxes are
//! closed rectangles with `x1 <= x2`, `y1 <= y2` (no +1 pixel convention).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Bbox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        debug_assert!(x1 <= x2 && y1 <= y2, "invalid box corners");
        Bbox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn shorter_edge(&self) -> f64 {
        self.width().min(self.height())
    }

    /// Tight union of two boxes.
    pub fn union_with(&self, other: &Bbox) -> Bbox {
        Bbox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn intersection_area(&self, other: &Bbox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// `other` lies entirely within `self`.
    pub fn contains(&self, other: &Bbox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    /// Clamp the box to `[0, w] x [0, h]`, preserving corner ordering.
    pub fn clamp_to(&self, w: f64, h: f64) -> Bbox {
        let x1 = self.x1.clamp(0.0, w);
        let y1 = self.y1.clamp(0.0, h);
        let x2 = self.x2.clamp(x1, w);
        let y2 = self.y2.clamp(y1, h);
        Bbox { x1, y1, x2, y2 }
    }
}

/// A proposal box with a confidence score and a stable id within its set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: Bbox,
    pub score: f64,
    pub index: usize,
}

/// Anchor shape in (log width, log height) space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub log_w: f64,
    pub log_h: f64,
}

/// Intersection over union. Returns 0 when the union has zero area.
pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Fraction of `inner`'s area covered by `outer`.
///
/// Errors when `inner` has zero area (a degenerate phrase box).
pub fn coverage_fraction(inner: &Bbox, outer: &Bbox) -> Result<f64> {
    let area = inner.area();
    if area <= 0.0 {
        return Err(Error::invalid(format!(
            "coverage_fraction: inner box has zero area ({inner:?})"
        )));
    }
    Ok(inner.intersection_area(outer) / area)
}

/// Greedy non-maximum suppression in descending score order.
///
/// A candidate is dropped when its IoU with an already retained box exceeds
/// `iou_threshold`. Equal scores are resolved by lower index first, so the
/// output is deterministic. Output is sorted by descending score.
pub fn nms(candidates: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    debug_assert!(iou_threshold > 0.0 && iou_threshold <= 1.0);
    let mut order: Vec<&ScoredBox> = candidates.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });

    let mut kept: Vec<ScoredBox> = Vec::new();
    for cand in order {
        if kept.iter().all(|k| iou(&k.bbox, &cand.bbox) <= iou_threshold) {
            kept.push(*cand);
        }
    }
    kept
}

/// Lloyd's k-means over (log w, log h) with k-means++ seeding.
///
/// Deterministic for a fixed seed; stops when assignments are stable or
/// after 100 iterations.
pub fn kmeans_anchors(boxes: &[Bbox], k: usize, seed: u64) -> Result<Vec<Anchor>> {
    if k == 0 {
        return Err(Error::invalid("kmeans_anchors: k must be >= 1"));
    }
    if boxes.len() < k {
        return Err(Error::invalid(format!(
            "kmeans_anchors: {} boxes for k={k}",
            boxes.len()
        )));
    }
    let mut points = Vec::with_capacity(boxes.len());
    for b in boxes {
        if b.width() <= 0.0 || b.height() <= 0.0 {
            return Err(Error::invalid(
                "kmeans_anchors: boxes must have positive width and height",
            ));
        }
        points.push([b.width().ln(), b.height().ln()]);
    }
    let mut distinct = points.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "kmeans_anchors: only {} distinct points for k={k}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_init(&points, k, &mut rng);

    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let nearest = nearest_center(p, &centers);
            if assignment[i] != nearest {
                assignment[i] = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
    }

    Ok(centers
        .into_iter()
        .map(|c| Anchor {
            log_w: c[0],
            log_h: c[1],
        })
        .collect())
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn nearest_center(p: &[f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn kmeans_pp_init(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    while centers.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            // All remaining points coincide with a center; pick any point.
            centers.push(points[rng.gen_range(0..points.len())]);
            continue;
        }
        let mut draw = rng.gen::<f64>() * total;
        let mut chosen = points.len() - 1;
        for (i, d) in dists.iter().enumerate() {
            draw -= d;
            if draw <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(points[chosen]);
    }
    centers
}

/// Center/size box regression target: `(dx, dy, dw, dh)` with
/// `dx = (cx_t - cx_p) / w_p`, `dw = ln(w_t / w_p)` and the y/h analogues.
pub fn encode_box_delta(proposal: &Bbox, target: &Bbox) -> Result<[f64; 4]> {
    let (pw, ph) = (proposal.width(), proposal.height());
    if pw <= 0.0 || ph <= 0.0 {
        return Err(Error::invalid("encode_box_delta: degenerate proposal"));
    }
    let (tw, th) = (target.width(), target.height());
    if tw <= 0.0 || th <= 0.0 {
        return Err(Error::invalid("encode_box_delta: non-positive target size"));
    }
    let (pcx, pcy) = proposal.center();
    let (tcx, tcy) = target.center();
    Ok([
        (tcx - pcx) / pw,
        (tcy - pcy) / ph,
        (tw / pw).ln(),
        (th / ph).ln(),
    ])
}

/// Inverse of [`encode_box_delta`].
pub fn decode_box_delta(proposal: &Bbox, delta: &[f64; 4]) -> Bbox {
    let (pw, ph) = (proposal.width(), proposal.height());
    let (pcx, pcy) = proposal.center();
    let cx = pcx + delta[0] * pw;
    let cy = pcy + delta[1] * ph;
    let w = pw * delta[2].exp();
    let h = ph * delta[3].exp();
    Bbox {
        x1: cx - w / 2.0,
        y1: cy - h / 2.0,
        x2: cx + w / 2.0,
        y2: cy + h / 2.0,
    }
}

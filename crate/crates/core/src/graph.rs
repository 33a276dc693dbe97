//! Per-image topology connecting object, phrase and caption nodes.
//!
//! Phrases are ordered object pairs; every phrase links to its subject via
//! a subject-predicate edge and to its object via a predicate-object edge.
//! Phrase-caption edges are undirected and exist when the caption box
//! covers enough of the phrase box. Objects and captions are never
//! connected directly.

use crate::error::{Error, Result};
use crate::geometry::{coverage_fraction, Bbox};

/// Default coverage threshold for phrase-caption edges.
pub const PHRASE_CAPTION_COVERAGE: f64 = 0.7;

/// Node levels of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Object,
    Phrase,
    Caption,
}

/// Reference to one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub level: Level,
    pub index: usize,
}

/// Which endpoint role an object plays for a phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRole {
    AsSubject,
    AsObject,
}

/// Edge lists plus adjacency indexes for O(degree) incident queries.
/// Immutable once built; rebuilt per image.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    pub n_objects: usize,
    pub n_phrases: usize,
    pub n_captions: usize,
    /// (object, phrase) subject-predicate links; one entry per phrase.
    pub edges_sp: Vec<(usize, usize)>,
    /// (object, phrase) predicate-object links; one entry per phrase.
    pub edges_op: Vec<(usize, usize)>,
    /// (phrase, caption) undirected coverage links, no duplicates.
    pub edges_pr: Vec<(usize, usize)>,
    /// phrase -> (subject object, object object).
    pub phrase_endpoints: Vec<(usize, usize)>,

    subject_phrases: Vec<Vec<usize>>,
    object_phrases: Vec<Vec<usize>>,
    phrase_captions: Vec<Vec<usize>>,
    caption_phrases: Vec<Vec<usize>>,
}

/// All ordered pairs `(i, j)`, `i != j`, with the tight union of the two
/// object boxes as the phrase box.
pub fn pair_phrases(object_boxes: &[Bbox]) -> (Vec<Bbox>, Vec<(usize, usize)>) {
    let n = object_boxes.len();
    let mut boxes = Vec::with_capacity(n.saturating_sub(1) * n);
    let mut endpoints = Vec::with_capacity(boxes.capacity());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            boxes.push(object_boxes[i].union_with(&object_boxes[j]));
            endpoints.push((i, j));
        }
    }
    (boxes, endpoints)
}

/// Edge (p, r) iff the caption box covers at least `threshold` of the
/// phrase box. Zero-area phrase boxes never connect.
pub fn connect_phrase_caption(
    phrase_boxes: &[Bbox],
    caption_boxes: &[Bbox],
    threshold: f64,
) -> Result<Vec<(usize, usize)>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "phrase-caption coverage threshold {threshold} outside (0, 1]"
        )));
    }
    let mut edges = Vec::new();
    for (p, pb) in phrase_boxes.iter().enumerate() {
        if pb.area() <= 0.0 {
            continue;
        }
        for (r, rb) in caption_boxes.iter().enumerate() {
            if coverage_fraction(pb, rb)? >= threshold {
                edges.push((p, r));
            }
        }
    }
    Ok(edges)
}

/// Full dynamic graph over object and caption proposals: phrases from all
/// ordered object pairs, phrase-caption edges from box coverage.
pub fn build_graph(
    object_boxes: &[Bbox],
    caption_boxes: &[Bbox],
    coverage_threshold: f64,
) -> Result<(GraphTopology, Vec<Bbox>)> {
    let (phrase_boxes, endpoints) = pair_phrases(object_boxes);
    let topology = build_graph_with_pairs(
        object_boxes,
        &endpoints,
        &phrase_boxes,
        caption_boxes,
        coverage_threshold,
    )?;
    Ok((topology, phrase_boxes))
}

/// Graph construction over an explicit phrase set (training samples a
/// subset of the full pair grid).
pub fn build_graph_with_pairs(
    object_boxes: &[Bbox],
    phrase_endpoints: &[(usize, usize)],
    phrase_boxes: &[Bbox],
    caption_boxes: &[Bbox],
    coverage_threshold: f64,
) -> Result<GraphTopology> {
    if phrase_endpoints.len() != phrase_boxes.len() {
        return Err(Error::ShapeMismatch {
            context: "build_graph_with_pairs",
            left: vec![phrase_endpoints.len()],
            right: vec![phrase_boxes.len()],
        });
    }
    let n_objects = object_boxes.len();
    let n_phrases = phrase_endpoints.len();
    let n_captions = caption_boxes.len();

    let mut edges_sp = Vec::with_capacity(n_phrases);
    let mut edges_op = Vec::with_capacity(n_phrases);
    let mut subject_phrases = vec![Vec::new(); n_objects];
    let mut object_phrases = vec![Vec::new(); n_objects];
    for (p, &(s, o)) in phrase_endpoints.iter().enumerate() {
        if s >= n_objects || o >= n_objects {
            return Err(Error::IndexOutOfRange(format!(
                "phrase {p} endpoints ({s}, {o}) with {n_objects} objects"
            )));
        }
        if s == o {
            return Err(Error::invalid(format!(
                "phrase {p} pairs object {s} with itself"
            )));
        }
        edges_sp.push((s, p));
        edges_op.push((o, p));
        subject_phrases[s].push(p);
        object_phrases[o].push(p);
    }

    let edges_pr = connect_phrase_caption(phrase_boxes, caption_boxes, coverage_threshold)?;
    let mut phrase_captions = vec![Vec::new(); n_phrases];
    let mut caption_phrases = vec![Vec::new(); n_captions];
    for &(p, r) in &edges_pr {
        phrase_captions[p].push(r);
        caption_phrases[r].push(p);
    }

    Ok(GraphTopology {
        n_objects,
        n_phrases,
        n_captions,
        edges_sp,
        edges_op,
        edges_pr,
        phrase_endpoints: phrase_endpoints.to_vec(),
        subject_phrases,
        object_phrases,
        phrase_captions,
        caption_phrases,
    })
}

impl GraphTopology {
    /// Phrases incident to `object_idx` in the given endpoint role.
    pub fn incident_phrases(&self, object_idx: usize, role: EdgeRole) -> Result<&[usize]> {
        if object_idx >= self.n_objects {
            return Err(Error::IndexOutOfRange(format!(
                "object {object_idx} of {}",
                self.n_objects
            )));
        }
        Ok(match role {
            EdgeRole::AsSubject => &self.subject_phrases[object_idx],
            EdgeRole::AsObject => &self.object_phrases[object_idx],
        })
    }

    pub fn captions_of_phrase(&self, phrase_idx: usize) -> &[usize] {
        &self.phrase_captions[phrase_idx]
    }

    pub fn phrases_of_caption(&self, caption_idx: usize) -> &[usize] {
        &self.caption_phrases[caption_idx]
    }

    /// DOT rendering: objects red, phrases green, captions yellow.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph scene {\n  rankdir=BT;\n");
        for i in 0..self.n_objects {
            out.push_str(&format!(
                "  o{i} [label=\"obj {i}\", style=filled, fillcolor=red];\n"
            ));
        }
        for p in 0..self.n_phrases {
            out.push_str(&format!(
                "  p{p} [label=\"phr {p}\", style=filled, fillcolor=green];\n"
            ));
        }
        for r in 0..self.n_captions {
            out.push_str(&format!(
                "  r{r} [label=\"cap {r}\", style=filled, fillcolor=yellow];\n"
            ));
        }
        for &(o, p) in &self.edges_sp {
            out.push_str(&format!("  o{o} -- p{p} [label=\"s\"];\n"));
        }
        for &(o, p) in &self.edges_op {
            out.push_str(&format!("  o{o} -- p{p} [label=\"o\"];\n"));
        }
        for &(p, r) in &self.edges_pr {
            out.push_str(&format!("  p{p} -- r{r};\n"));
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> Bbox {
        Bbox::new(x1, y1, x2, y2)
    }

    fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<Bbox> {
        (0..n)
            .map(|_| {
                let x1 = rng.gen_range(0.0..90.0);
                let y1 = rng.gen_range(0.0..90.0);
                b(
                    x1,
                    y1,
                    x1 + rng.gen_range(4.0..38.0),
                    y1 + rng.gen_range(4.0..38.0),
                )
            })
            .collect()
    }

    #[test]
    fn pair_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 0..=12 {
            let boxes = random_boxes(&mut rng, n);
            let (phrases, endpoints) = pair_phrases(&boxes);
            let expect = if n == 0 { 0 } else { n * (n - 1) };
            assert_eq!(phrases.len(), expect);
            assert_eq!(endpoints.len(), expect);
        }
    }

    #[test]
    fn two_object_pairs_share_union_box() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let c = b(20.0, 5.0, 30.0, 25.0);
        let (phrases, endpoints) = pair_phrases(&[a, c]);
        assert_eq!(endpoints, vec![(0, 1), (1, 0)]);
        let u = a.union_with(&c);
        assert_eq!(phrases[0], u);
        assert_eq!(phrases[1], u);
    }

    #[test]
    fn caption_containing_phrase_gets_edge() {
        let phrase = b(10.0, 10.0, 30.0, 30.0);
        let caption = b(0.0, 0.0, 50.0, 50.0);
        let edges = connect_phrase_caption(&[phrase], &[caption], 0.7).unwrap();
        assert_eq!(edges, vec![(0, 0)]);
        let far = b(200.0, 200.0, 250.0, 250.0);
        assert!(connect_phrase_caption(&[phrase], &[far], 0.7)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn coverage_edges_match_allpairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let phrases = random_boxes(&mut rng, 20);
            let captions = random_boxes(&mut rng, 5);
            let got = connect_phrase_caption(&phrases, &captions, 0.7).unwrap();
            let mut want = Vec::new();
            for (p, pb) in phrases.iter().enumerate() {
                for (r, rb) in captions.iter().enumerate() {
                    if pb.intersection_area(rb) / pb.area() >= 0.7 {
                        want.push((p, r));
                    }
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn graph_with_no_objects_keeps_isolated_captions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let captions = random_boxes(&mut rng, 4);
        let (topo, phrase_boxes) = build_graph(&[], &captions, 0.7).unwrap();
        assert_eq!(topo.n_phrases, 0);
        assert_eq!(topo.n_captions, 4);
        assert!(phrase_boxes.is_empty());
        assert!(topo.edges_pr.is_empty());
        for r in 0..4 {
            assert!(topo.phrases_of_caption(r).is_empty());
        }
    }

    #[test]
    fn graph_with_no_captions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let objects = random_boxes(&mut rng, 5);
        let (topo, _) = build_graph(&objects, &[], 0.7).unwrap();
        assert_eq!(topo.n_phrases, 20);
        assert!(topo.edges_pr.is_empty());
    }

    #[test]
    fn incident_queries_and_partition_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let objects = random_boxes(&mut rng, 6);
        let (topo, _) = build_graph(&objects, &[], 0.7).unwrap();
        let mut all: Vec<usize> = Vec::new();
        for i in 0..6 {
            let subj = topo.incident_phrases(i, EdgeRole::AsSubject).unwrap();
            assert_eq!(subj.len(), 5);
            assert_eq!(
                topo.incident_phrases(i, EdgeRole::AsObject).unwrap().len(),
                5
            );
            all.extend_from_slice(subj);
        }
        all.sort_unstable();
        let expect: Vec<usize> = (0..topo.n_phrases).collect();
        assert_eq!(all, expect);
        assert!(topo.incident_phrases(6, EdgeRole::AsSubject).is_err());
    }

    #[test]
    fn two_objects_subject_query() {
        let (topo, _) = build_graph(&[b(0.0, 0.0, 5.0, 5.0), b(10.0, 0.0, 15.0, 5.0)], &[], 0.7)
            .unwrap();
        let phrases = topo.incident_phrases(0, EdgeRole::AsSubject).unwrap();
        assert_eq!(phrases.len(), 1);
        assert_eq!(topo.phrase_endpoints[phrases[0]], (0, 1));
    }

    #[test]
    fn topology_invariants_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let n = rng.gen_range(0..=10);
            let k = rng.gen_range(0..=5);
            let objects = random_boxes(&mut rng, n);
            let captions = random_boxes(&mut rng, k);
            let (topo, phrase_boxes) = build_graph(&objects, &captions, 0.7).unwrap();

            assert_eq!(topo.n_phrases, if n == 0 { 0 } else { n * (n - 1) });
            // Every phrase appears exactly once per directed edge set and
            // the edges agree with the endpoint map.
            let mut sp_seen = vec![0usize; topo.n_phrases];
            for &(o, p) in &topo.edges_sp {
                sp_seen[p] += 1;
                assert_eq!(topo.phrase_endpoints[p].0, o);
            }
            let mut op_seen = vec![0usize; topo.n_phrases];
            for &(o, p) in &topo.edges_op {
                op_seen[p] += 1;
                assert_eq!(topo.phrase_endpoints[p].1, o);
            }
            assert!(sp_seen.iter().all(|&c| c == 1));
            assert!(op_seen.iter().all(|&c| c == 1));
            for &(s, o) in &topo.phrase_endpoints {
                assert_ne!(s, o);
            }
            // No duplicate phrase-caption edges, and they match the oracle.
            let mut pr = topo.edges_pr.clone();
            pr.sort_unstable();
            pr.dedup();
            assert_eq!(pr.len(), topo.edges_pr.len());
            let mut want = Vec::new();
            for (p, pb) in phrase_boxes.iter().enumerate() {
                for (r, rb) in captions.iter().enumerate() {
                    if pb.area() > 0.0 && pb.intersection_area(rb) / pb.area() >= 0.7 {
                        want.push((p, r));
                    }
                }
            }
            assert_eq!(topo.edges_pr, want);
        }
    }

    #[test]
    fn dot_export_mentions_every_node() {
        let (topo, _) = build_graph(
            &[b(0.0, 0.0, 5.0, 5.0), b(10.0, 0.0, 15.0, 5.0)],
            &[b(0.0, 0.0, 20.0, 10.0)],
            0.7,
        )
        .unwrap();
        let dot = topo.to_dot();
        assert!(dot.contains("fillcolor=red"));
        assert!(dot.contains("fillcolor=green"));
        assert!(dot.contains("fillcolor=yellow"));
        assert!(dot.contains("o0 -- p0"));
    }

    #[test]
    fn rejects_self_pairs_and_bad_indices() {
        let objects = [b(0.0, 0.0, 5.0, 5.0), b(10.0, 0.0, 15.0, 5.0)];
        let pb = [objects[0]];
        assert!(build_graph_with_pairs(&objects, &[(0, 0)], &pb, &[], 0.7).is_err());
        assert!(build_graph_with_pairs(&objects, &[(0, 7)], &pb, &[], 0.7).is_err());
    }
}

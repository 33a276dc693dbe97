//! Corpus files are line-delimited JSON: a versioned schema header line
//! followed by one scene record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Bbox;

use super::{attribute_vector, ObjectInstance, RegionCaption, RelationTriplet, SceneAnnotation};

pub const CORPUS_SCHEMA: &str = "scene-corpus-v1";

/// Header line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub schema: String,
    pub c_obj: usize,
    pub c_pred: usize,
    pub vocab_size: usize,
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    category: usize,
}

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    s: usize,
    o: usize,
    p: usize,
}

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    tokens: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    canvas: [f64; 2],
    objects: Vec<ObjectRecord>,
    triplets: Vec<TripletRecord>,
    captions: Vec<CaptionRecord>,
}

fn to_record(scene: &SceneAnnotation) -> SceneRecord {
    SceneRecord {
        canvas: [scene.canvas.0, scene.canvas.1],
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectRecord {
                bbox: [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2],
                category: o.category,
            })
            .collect(),
        triplets: scene
            .triplets
            .iter()
            .map(|t| TripletRecord {
                s: t.subject,
                o: t.object,
                p: t.predicate,
            })
            .collect(),
        captions: scene
            .captions
            .iter()
            .map(|c| CaptionRecord {
                bbox: [c.bbox.x1, c.bbox.y1, c.bbox.x2, c.bbox.y2],
                tokens: c.tokens.clone(),
            })
            .collect(),
    }
}

fn from_record(rec: SceneRecord) -> Result<SceneAnnotation> {
    let canvas = (rec.canvas[0], rec.canvas[1]);
    let objects: Vec<ObjectInstance> = rec
        .objects
        .into_iter()
        .map(|o| {
            let bbox = Bbox::new(o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3]);
            ObjectInstance {
                bbox,
                category: o.category,
                attributes: attribute_vector(o.category, &bbox, canvas),
            }
        })
        .collect();
    for t in &rec.triplets {
        if t.s >= objects.len() || t.o >= objects.len() || t.s == t.o {
            return Err(Error::Parse(format!(
                "triplet ({}, {}, {}) references invalid objects",
                t.s, t.p, t.o
            )));
        }
    }
    Ok(SceneAnnotation {
        canvas,
        objects,
        triplets: rec
            .triplets
            .into_iter()
            .map(|t| RelationTriplet {
                subject: t.s,
                object: t.o,
                predicate: t.p,
            })
            .collect(),
        captions: rec
            .captions
            .into_iter()
            .map(|c| RegionCaption {
                bbox: Bbox::new(c.bbox[0], c.bbox[1], c.bbox[2], c.bbox[3]),
                tokens: c.tokens,
            })
            .collect(),
    })
}

pub fn write_corpus(path: &Path, scenes: &[SceneAnnotation], meta: &CorpusMeta) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, meta).map_err(|e| Error::Parse(e.to_string()))?;
    out.write_all(b"\n")?;
    for scene in scenes {
        serde_json::to_writer(&mut out, &to_record(scene))
            .map_err(|e| Error::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<(Vec<SceneAnnotation>, CorpusMeta)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty corpus file", path.display())))??;
    let meta: CorpusMeta =
        serde_json::from_str(&header).map_err(|e| Error::Parse(format!("corpus header: {e}")))?;
    if meta.schema != CORPUS_SCHEMA {
        return Err(Error::Parse(format!(
            "unsupported corpus schema `{}` (expected `{CORPUS_SCHEMA}`)",
            meta.schema
        )));
    }
    let mut scenes = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("corpus line {}: {e}", lineno + 2)))?;
        scenes.push(from_record(rec)?);
    }
    Ok((scenes, meta))
}

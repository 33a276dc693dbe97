//! Multi-level scene understanding on synthetic scenes.
//!
//! The pipeline aligns three kinds of regions per image — objects, phrases
//! (ordered object pairs) and captions — in a dynamically constructed graph,
//! refines their features with gated message passing, and decodes a scene
//! graph (object labels on the diagonal, predicates off-diagonal) together
//! with region captions. Training runs on a generated corpus with exact
//! ground truth; evaluation reports Recall@K for the PredCls / PhrCls /
//! SGGen protocols plus detection mAP and top-k accuracy.
//!
//! Everything is CPU-only `f64` on a minimal reverse-mode tape; no external
//! ML framework is involved.

pub mod autodiff;
pub mod caption;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod graph;
pub mod heads;
pub mod model;
pub mod refine;

pub use error::{Error, Result};

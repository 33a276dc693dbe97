//! The full multi-level model: specialization, message passing, task heads
//! and the caption decoder, together with the joint training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Value};
use crate::caption::{self, CaptionConfig, CaptionParams};
use crate::config::ExperimentConfig;
use crate::dataset::{CaptionTarget, ObjectTarget};
use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::heads::{self, HeadConfig, HeadParams};
use crate::refine::{self, NodeFeatures, RefineConfig, RefineParams};

/// Model hyperparameters reduced to what the forward pass needs.
#[derive(Debug, Clone)]
pub struct Model {
    pub refine: RefineConfig,
    pub heads: HeadConfig,
    pub caption: CaptionConfig,
    pub refine_iterations: usize,
    pub message_passing: bool,
    pub caption_branch: bool,
    pub caption_supervision: bool,
}

impl Model {
    pub fn from_experiment(config: &ExperimentConfig, vocab_size: usize) -> Model {
        let m = &config.model;
        Model {
            refine: RefineConfig {
                input_dim: config.features.d_in,
                feature_dim: m.feature_dim,
                gate_templates: m.gate_templates,
                normalize_gate: m.normalize_gate,
            },
            heads: HeadConfig {
                feature_dim: m.feature_dim,
                c_obj: config.dataset.gen.c_obj,
                c_pred: config.dataset.gen.c_pred,
                caption_box_regression: m.caption_branch
                    && m.caption_supervision
                    && m.caption_box_regression,
            },
            caption: CaptionConfig {
                feature_dim: m.feature_dim,
                embed_dim: m.caption_embed_dim,
                hidden_dim: m.caption_hidden_dim,
                vocab_size,
                max_len: config.dataset.gen.max_caption_len,
            },
            refine_iterations: m.refine_iterations,
            message_passing: m.message_passing,
            caption_branch: m.caption_branch,
            caption_supervision: m.caption_supervision,
        }
    }

    /// Whether the language model (and its losses) exist at all.
    pub fn has_language_model(&self) -> bool {
        self.caption_branch && self.caption_supervision
    }

    /// Fresh parameter store with every trainable tensor registered.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        refine::register_params(&mut store, &self.refine, &mut rng)?;
        heads::register_params(&mut store, &self.heads, &mut rng)?;
        if self.has_language_model() {
            caption::register_params(&mut store, &self.caption, &mut rng)?;
        }
        Ok(store)
    }

    /// Specialization, `refine_iterations` message-passing steps (when
    /// enabled) and all head logits/deltas.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        topology: &GraphTopology,
        object_inputs: &[Vec<f64>],
        phrase_inputs: &[Vec<f64>],
        caption_inputs: &[Vec<f64>],
    ) -> Result<ForwardPass> {
        let specialized =
            refine::specialize(tape, store, object_inputs, phrase_inputs, caption_inputs)?;
        let features = if self.message_passing && self.refine_iterations > 0 {
            let params = RefineParams::bind(tape, store, &self.refine)?;
            refine::run_refinement(tape, topology, specialized, &params, self.refine_iterations)?
        } else {
            specialized
        };
        let head_params = HeadParams::bind(tape, store, &self.heads)?;
        let object_logits = heads::classify_objects(tape, &head_params, &features.objects)?;
        let predicate_logits = heads::classify_predicates(tape, &head_params, &features.phrases)?;
        let object_deltas = heads::regress_boxes(tape, &head_params, &features.objects)?;
        let caption_deltas =
            heads::regress_caption_boxes(tape, &head_params, &features.captions)?;
        let caption_params = if self.has_language_model() {
            Some(CaptionParams::bind(tape, store, &self.caption)?)
        } else {
            None
        };
        Ok(ForwardPass {
            features,
            object_logits,
            predicate_logits,
            object_deltas,
            caption_deltas,
            caption_params,
        })
    }

    /// Joint loss over one sampled scene:
    /// `L_obj_cls + L_obj_reg + L_pred_cls + L_caption`, each a mean over
    /// its samples, regression restricted to positives.
    pub fn training_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        example: &TrainingExample,
    ) -> Result<Value> {
        let pass = self.forward(
            tape,
            store,
            &example.topology,
            &example.object_inputs,
            &example.phrase_inputs,
            &example.caption_inputs,
        )?;
        if example.object_targets.len() != pass.object_logits.len()
            || example.phrase_targets.len() != pass.predicate_logits.len()
        {
            return Err(Error::ShapeMismatch {
                context: "training_loss targets",
                left: vec![example.object_targets.len(), example.phrase_targets.len()],
                right: vec![pass.object_logits.len(), pass.predicate_logits.len()],
            });
        }

        let object_cls = mean_cross_entropy(
            tape,
            &pass.object_logits,
            example.object_targets.iter().map(|t| t.class),
        )?;

        let mut reg_terms = Vec::new();
        for (i, target) in example.object_targets.iter().enumerate() {
            if let (Some(delta), true) = (target.delta, target.class > 0) {
                let class_offset = 4 * (target.class - 1);
                let pred = tape.slice(pass.object_deltas[i], class_offset, 4)?;
                reg_terms.push(tape.smooth_l1(pred, &delta)?);
            }
        }
        let object_reg = mean_of_scalars(tape, &reg_terms)?;

        let predicate_cls = mean_cross_entropy(
            tape,
            &pass.predicate_logits,
            example.phrase_targets.iter().copied(),
        )?;

        let caption_total = if let Some(cap_params) = &pass.caption_params {
            let mut word_terms = Vec::new();
            let mut reg_terms = Vec::new();
            for (k, target) in example.caption_targets.iter().enumerate() {
                word_terms.push(caption::caption_loss(
                    tape,
                    cap_params,
                    pass.features.captions[k],
                    &target.tokens,
                )?);
                if let (Some(deltas), Some(delta)) = (&pass.caption_deltas, target.delta) {
                    reg_terms.push(tape.smooth_l1(deltas[k], &delta)?);
                }
            }
            let word = mean_of_scalars(tape, &word_terms)?;
            let reg = mean_of_scalars(tape, &reg_terms)?;
            match (word, reg) {
                (Some(w), Some(r)) => Some(tape.add(w, r)?),
                (w, r) => w.or(r),
            }
        } else {
            None
        };

        heads::joint_loss(tape, object_cls, object_reg, predicate_cls, caption_total)
    }
}

/// One fully prepared training example: restricted topology over the
/// sampled nodes, raw branch features and aligned targets.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub topology: GraphTopology,
    pub object_inputs: Vec<Vec<f64>>,
    pub phrase_inputs: Vec<Vec<f64>>,
    pub caption_inputs: Vec<Vec<f64>>,
    pub object_targets: Vec<ObjectTarget>,
    pub phrase_targets: Vec<usize>,
    pub caption_targets: Vec<CaptionTarget>,
}

/// Everything one forward pass produces.
pub struct ForwardPass {
    pub features: NodeFeatures,
    pub object_logits: Vec<Value>,
    pub predicate_logits: Vec<Value>,
    /// Class-specific deltas, `4 * c_obj` per object node.
    pub object_deltas: Vec<Value>,
    pub caption_deltas: Option<Vec<Value>>,
    pub caption_params: Option<CaptionParams>,
}

fn mean_cross_entropy(
    tape: &mut Tape,
    logits: &[Value],
    labels: impl Iterator<Item = usize>,
) -> Result<Option<Value>> {
    let mut terms = Vec::new();
    for (row, label) in logits.iter().zip(labels) {
        terms.push(tape.softmax_cross_entropy(*row, label)?);
    }
    mean_of_scalars(tape, &terms)
}

fn mean_of_scalars(tape: &mut Tape, terms: &[Value]) -> Result<Option<Value>> {
    if terms.is_empty() {
        return Ok(None);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    Ok(Some(tape.scale_const(total, 1.0 / terms.len() as f64)))
}

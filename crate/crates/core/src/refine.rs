//! Feature specialization and iterative gated merge-and-refine message
//! passing over the dynamic graph.
//!
//! Each refinement step merges neighbor features per edge direction with a
//! learned gate, then adds a transformed residual:
//!
//! ```text
//! merged_d(i) = (1/|E_d(i)|) sum_{j in E_d(i)} gate_d(x_i, x_j) * x_j
//! gate_d(x, y) = sum_{g=1..G} sigmoid(w_g . [x, y])
//! x_i(t+1) = x_i(t) + sum_d W_d . relu(merged_d(i))
//! ```
//!
//! Object updates pull from incident phrases (subject and object roles
//! separately), phrase updates pull from both endpoints and any linked
//! captions, caption updates pull from linked phrases. All three levels
//! update simultaneously within one step. Nodes with no incident edges in
//! a direction skip that term, so isolated nodes pass through unchanged.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Value};
use crate::error::{Error, Result};
use crate::graph::{EdgeRole, GraphTopology};

/// Message-passing hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Raw ROI feature width fed to the specialization stacks.
    pub input_dim: usize,
    /// Node feature width after specialization.
    pub feature_dim: usize,
    /// Gate template count G.
    pub gate_templates: usize,
    /// Divide the gate sum by G (off by default; the gate is used exactly
    /// as the sum of G sigmoid responses).
    pub normalize_gate: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            input_dim: 64,
            feature_dim: 64,
            gate_templates: 16,
            normalize_gate: false,
        }
    }
}

/// The six edge directions messages travel along. Each owns an independent
/// gate block and transform matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    PhraseToSubject,
    PhraseToObject,
    SubjectToPhrase,
    ObjectToPhrase,
    CaptionToPhrase,
    PhraseToCaption,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::PhraseToSubject,
        Direction::PhraseToObject,
        Direction::SubjectToPhrase,
        Direction::ObjectToPhrase,
        Direction::CaptionToPhrase,
        Direction::PhraseToCaption,
    ];

    fn tag(self) -> &'static str {
        match self {
            Direction::PhraseToSubject => "p_to_s",
            Direction::PhraseToObject => "p_to_o",
            Direction::SubjectToPhrase => "s_to_p",
            Direction::ObjectToPhrase => "o_to_p",
            Direction::CaptionToPhrase => "r_to_p",
            Direction::PhraseToCaption => "p_to_r",
        }
    }

    fn index(self) -> usize {
        match self {
            Direction::PhraseToSubject => 0,
            Direction::PhraseToObject => 1,
            Direction::SubjectToPhrase => 2,
            Direction::ObjectToPhrase => 3,
            Direction::CaptionToPhrase => 4,
            Direction::PhraseToCaption => 5,
        }
    }
}

const BRANCHES: [&str; 3] = ["object", "phrase", "caption"];

/// Register all specialization, gate and transform parameters.
///
/// Transforms start near zero (std 0.01) so early training stays close to
/// the residual identity; specialization layers use 1/sqrt(fan_in).
pub fn register_params(
    store: &mut ParamStore,
    config: &RefineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let d_in = config.input_dim;
    let d = config.feature_dim;
    let g = config.gate_templates;
    if d_in == 0 || d == 0 || g == 0 {
        return Err(Error::invalid("refine dims must be positive"));
    }
    for branch in BRANCHES {
        let s1 = 1.0 / (d_in as f64).sqrt();
        let s2 = 1.0 / (d as f64).sqrt();
        store.register_normal(&format!("specialize.{branch}.l1.w"), vec![d, d_in], s1, rng)?;
        store.register_zeros(&format!("specialize.{branch}.l1.b"), vec![d])?;
        store.register_normal(&format!("specialize.{branch}.l2.w"), vec![d, d], s2, rng)?;
        store.register_zeros(&format!("specialize.{branch}.l2.b"), vec![d])?;
    }
    for dir in Direction::ALL {
        let gate_std = 1.0 / (2.0 * d as f64).sqrt();
        store.register_normal(
            &format!("refine.gate.{}", dir.tag()),
            vec![g, 2 * d],
            gate_std,
            rng,
        )?;
        store.register_normal(&format!("refine.transform.{}", dir.tag()), vec![d, d], 0.01, rng)?;
    }
    Ok(())
}

/// Gate and transform parameters bound onto a tape for one forward pass.
pub struct RefineParams {
    gates: [Value; 6],
    transforms: [Value; 6],
    gate_templates: usize,
    normalize_gate: bool,
}

impl RefineParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore, config: &RefineConfig) -> Result<Self> {
        let mut gates = [Value(usize::MAX); 6];
        let mut transforms = [Value(usize::MAX); 6];
        for dir in Direction::ALL {
            gates[dir.index()] = tape.param(store, &format!("refine.gate.{}", dir.tag()))?;
            transforms[dir.index()] =
                tape.param(store, &format!("refine.transform.{}", dir.tag()))?;
        }
        Ok(RefineParams {
            gates,
            transforms,
            gate_templates: config.gate_templates,
            normalize_gate: config.normalize_gate,
        })
    }

    pub fn gate(&self, dir: Direction) -> Value {
        self.gates[dir.index()]
    }

    pub fn transform(&self, dir: Direction) -> Value {
        self.transforms[dir.index()]
    }
}

/// Per-level node features at one refinement step.
#[derive(Debug, Clone)]
pub struct NodeFeatures {
    pub objects: Vec<Value>,
    pub phrases: Vec<Value>,
    pub captions: Vec<Value>,
    pub step: usize,
}

impl NodeFeatures {
    fn matches(&self, topology: &GraphTopology) -> bool {
        self.objects.len() == topology.n_objects
            && self.phrases.len() == topology.n_phrases
            && self.captions.len() == topology.n_captions
    }
}

/// Two-layer per-branch specialization: `l2(relu(l1(x)))`, one stack per
/// branch, no weight sharing. Outputs are pre-activation features.
pub fn specialize(
    tape: &mut Tape,
    store: &ParamStore,
    object_inputs: &[Vec<f64>],
    phrase_inputs: &[Vec<f64>],
    caption_inputs: &[Vec<f64>],
) -> Result<NodeFeatures> {
    let mut run_branch = |branch: &str, inputs: &[Vec<f64>]| -> Result<Vec<Value>> {
        let w1 = tape.param(store, &format!("specialize.{branch}.l1.w"))?;
        let b1 = tape.param(store, &format!("specialize.{branch}.l1.b"))?;
        let w2 = tape.param(store, &format!("specialize.{branch}.l2.w"))?;
        let b2 = tape.param(store, &format!("specialize.{branch}.l2.b"))?;
        inputs
            .iter()
            .map(|x| {
                let leaf = tape.constant_vec(x.clone());
                let h = tape.linear(leaf, w1, Some(b1))?;
                let h = tape.relu(h);
                tape.linear(h, w2, Some(b2))
            })
            .collect()
    };
    Ok(NodeFeatures {
        objects: run_branch("object", object_inputs)?,
        phrases: run_branch("phrase", phrase_inputs)?,
        captions: run_branch("caption", caption_inputs)?,
        step: 0,
    })
}

/// Gate value for one edge: the sum of G sigmoid template responses on
/// `[x_target, x_source]`. Range `[0, G]` unless normalization is on.
pub fn gate_value(
    tape: &mut Tape,
    x_target: Value,
    x_source: Value,
    gate_w: Value,
    gate_templates: usize,
    normalize: bool,
) -> Result<Value> {
    let joint = tape.concat(&[x_target, x_source])?;
    let responses = tape.linear(joint, gate_w, None)?;
    let activated = tape.sigmoid(responses);
    let total = tape.sum(activated);
    Ok(if normalize {
        tape.scale_const(total, 1.0 / gate_templates as f64)
    } else {
        total
    })
}

/// Gated average of the features incident to `target` along `direction`.
/// Returns `None` when the incident set is empty (the zero-message case);
/// callers skip the corresponding residual term, which equals adding a
/// zero vector.
pub fn merge(
    tape: &mut Tape,
    topology: &GraphTopology,
    features: &NodeFeatures,
    target: usize,
    direction: Direction,
    params: &RefineParams,
) -> Result<Option<Value>> {
    let (x_target, sources): (Value, Vec<Value>) = match direction {
        Direction::PhraseToSubject => (
            features.objects[target],
            topology
                .incident_phrases(target, EdgeRole::AsSubject)?
                .iter()
                .map(|&p| features.phrases[p])
                .collect(),
        ),
        Direction::PhraseToObject => (
            features.objects[target],
            topology
                .incident_phrases(target, EdgeRole::AsObject)?
                .iter()
                .map(|&p| features.phrases[p])
                .collect(),
        ),
        Direction::SubjectToPhrase => (
            features.phrases[target],
            vec![features.objects[topology.phrase_endpoints[target].0]],
        ),
        Direction::ObjectToPhrase => (
            features.phrases[target],
            vec![features.objects[topology.phrase_endpoints[target].1]],
        ),
        Direction::CaptionToPhrase => (
            features.phrases[target],
            topology
                .captions_of_phrase(target)
                .iter()
                .map(|&r| features.captions[r])
                .collect(),
        ),
        Direction::PhraseToCaption => (
            features.captions[target],
            topology
                .phrases_of_caption(target)
                .iter()
                .map(|&p| features.phrases[p])
                .collect(),
        ),
    };
    if sources.is_empty() {
        return Ok(None);
    }
    let gate_w = params.gate(direction);
    let gated: Vec<Value> = sources
        .into_iter()
        .map(|src| {
            let g = gate_value(
                tape,
                x_target,
                src,
                gate_w,
                params.gate_templates,
                params.normalize_gate,
            )?;
            tape.scale(src, g)
        })
        .collect::<Result<_>>()?;
    Ok(Some(tape.mean_of(&gated)?))
}

fn residual_update(
    tape: &mut Tape,
    topology: &GraphTopology,
    features: &NodeFeatures,
    target: usize,
    current: Value,
    directions: &[Direction],
    params: &RefineParams,
) -> Result<Value> {
    let mut out = current;
    for &dir in directions {
        if let Some(merged) = merge(tape, topology, features, target, dir, params)? {
            let activated = tape.relu(merged);
            let transformed = tape.linear(activated, params.transform(dir), None)?;
            out = tape.add(out, transformed)?;
        }
    }
    Ok(out)
}

/// One object-level update: residual over the subject- and object-role
/// phrase merges.
pub fn refine_objects(
    tape: &mut Tape,
    topology: &GraphTopology,
    features: &NodeFeatures,
    params: &RefineParams,
) -> Result<Vec<Value>> {
    check_rows(topology, features)?;
    (0..topology.n_objects)
        .map(|i| {
            residual_update(
                tape,
                topology,
                features,
                i,
                features.objects[i],
                &[Direction::PhraseToSubject, Direction::PhraseToObject],
                params,
            )
        })
        .collect()
}

/// One phrase-level update: residual over subject, object and caption
/// merges.
pub fn refine_phrases(
    tape: &mut Tape,
    topology: &GraphTopology,
    features: &NodeFeatures,
    params: &RefineParams,
) -> Result<Vec<Value>> {
    check_rows(topology, features)?;
    (0..topology.n_phrases)
        .map(|j| {
            residual_update(
                tape,
                topology,
                features,
                j,
                features.phrases[j],
                &[
                    Direction::SubjectToPhrase,
                    Direction::ObjectToPhrase,
                    Direction::CaptionToPhrase,
                ],
                params,
            )
        })
        .collect()
}

/// One caption-level update: residual over the phrase merge.
pub fn refine_captions(
    tape: &mut Tape,
    topology: &GraphTopology,
    features: &NodeFeatures,
    params: &RefineParams,
) -> Result<Vec<Value>> {
    check_rows(topology, features)?;
    (0..topology.n_captions)
        .map(|k| {
            residual_update(
                tape,
                topology,
                features,
                k,
                features.captions[k],
                &[Direction::PhraseToCaption],
                params,
            )
        })
        .collect()
}

fn check_rows(topology: &GraphTopology, features: &NodeFeatures) -> Result<()> {
    if !features.matches(topology) {
        return Err(Error::ShapeMismatch {
            context: "refine: feature rows vs topology",
            left: vec![
                features.objects.len(),
                features.phrases.len(),
                features.captions.len(),
            ],
            right: vec![topology.n_objects, topology.n_phrases, topology.n_captions],
        });
    }
    Ok(())
}

/// Apply `iterations` simultaneous refinement steps: every merge at step t
/// reads features of step t, and all three levels commit together.
pub fn run_refinement(
    tape: &mut Tape,
    topology: &GraphTopology,
    features: NodeFeatures,
    params: &RefineParams,
    iterations: usize,
) -> Result<NodeFeatures> {
    let mut current = features;
    for _ in 0..iterations {
        let objects = refine_objects(tape, topology, &current, params)?;
        let phrases = refine_phrases(tape, topology, &current, params)?;
        let captions = refine_captions(tape, topology, &current, params)?;
        current = NodeFeatures {
            objects,
            phrases,
            captions,
            step: current.step + 1,
        };
    }
    Ok(current)
}

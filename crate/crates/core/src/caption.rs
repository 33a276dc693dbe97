//! Region caption generation: image encoder, word embedding, a two-layer
//! recurrent decoder with input/forget/output/candidate gates, and a word
//! decoder.
//!
//! Decoding protocol: step 0 feeds the encoded region feature, step 1
//! feeds the start token, and every later step feeds the previous word
//! (ground truth under teacher forcing, the argmax prediction under greedy
//! decoding) until the end token or the maximum length.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Value};
use crate::dataset::{END_TOKEN, START_TOKEN};
use crate::error::{Error, Result};

/// Language model sizes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CaptionConfig {
    /// Width of the refined caption feature fed to the image encoder.
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        CaptionConfig {
            feature_dim: 64,
            embed_dim: 32,
            hidden_dim: 64,
            vocab_size: 32,
            max_len: 12,
        }
    }
}

const GATES: [&str; 4] = ["input", "forget", "output", "cell"];

/// Register all language-model parameters under the `caption.` prefix
/// (the optimizer splits on this prefix: these weights train with Adam).
pub fn register_params(
    store: &mut ParamStore,
    config: &CaptionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let d = config.feature_dim;
    let e = config.embed_dim;
    let h = config.hidden_dim;
    let v = config.vocab_size;
    if e == 0 || h == 0 || v <= UNKNOWN_MIN_VOCAB {
        return Err(Error::invalid("caption config dims too small"));
    }
    store.register_normal("caption.image_encoder.w", vec![e, d], 1.0 / (d as f64).sqrt(), rng)?;
    store.register_zeros("caption.image_encoder.b", vec![e])?;
    store.register_normal("caption.embedding", vec![v, e], 0.1, rng)?;
    for (layer, in_dim) in [(1usize, e), (2usize, h)] {
        let std = 1.0 / ((in_dim + h) as f64).sqrt();
        for gate in GATES {
            store.register_normal(
                &format!("caption.lstm{layer}.{gate}.w"),
                vec![h, in_dim + h],
                std,
                rng,
            )?;
            store.register_zeros(&format!("caption.lstm{layer}.{gate}.b"), vec![h])?;
        }
    }
    store.register_normal("caption.word_decoder.w", vec![v, h], 1.0 / (h as f64).sqrt(), rng)?;
    store.register_zeros("caption.word_decoder.b", vec![v])?;
    Ok(())
}

const UNKNOWN_MIN_VOCAB: usize = 2; // vocab must at least hold the reserved tokens

struct GateParams {
    w: Value,
    b: Value,
}

struct LayerParams {
    input: GateParams,
    forget: GateParams,
    output: GateParams,
    cell: GateParams,
}

/// Language-model parameters bound onto a tape.
pub struct CaptionParams {
    encoder_w: Value,
    encoder_b: Value,
    embedding: Value,
    layers: [LayerParams; 2],
    decoder_w: Value,
    decoder_b: Value,
    hidden_dim: usize,
}

impl CaptionParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore, config: &CaptionConfig) -> Result<Self> {
        let mut layer = |l: usize| -> Result<LayerParams> {
            let mut gate = |g: &str| -> Result<GateParams> {
                Ok(GateParams {
                    w: tape.param(store, &format!("caption.lstm{l}.{g}.w"))?,
                    b: tape.param(store, &format!("caption.lstm{l}.{g}.b"))?,
                })
            };
            Ok(LayerParams {
                input: gate("input")?,
                forget: gate("forget")?,
                output: gate("output")?,
                cell: gate("cell")?,
            })
        };
        let layers = [layer(1)?, layer(2)?];
        Ok(CaptionParams {
            encoder_w: tape.param(store, "caption.image_encoder.w")?,
            encoder_b: tape.param(store, "caption.image_encoder.b")?,
            embedding: tape.param(store, "caption.embedding")?,
            layers,
            decoder_w: tape.param(store, "caption.word_decoder.w")?,
            decoder_b: tape.param(store, "caption.word_decoder.b")?,
            hidden_dim: config.hidden_dim,
        })
    }
}

/// Hidden and cell vectors for both layers.
pub struct DecoderState {
    layers: Vec<(Value, Value)>,
}

impl DecoderState {
    pub fn zeros(tape: &mut Tape, hidden_dim: usize) -> Self {
        let layers = (0..2)
            .map(|_| (tape.zeros(hidden_dim), tape.zeros(hidden_dim)))
            .collect();
        DecoderState { layers }
    }
}

/// One gated-cell update for one layer:
/// `c' = f*c + i*tanh(candidate)`, `h' = o*tanh(c')`.
fn cell_step(
    tape: &mut Tape,
    layer: &LayerParams,
    input: Value,
    state: (Value, Value),
) -> Result<(Value, (Value, Value))> {
    let (h, c) = state;
    let z = tape.concat(&[input, h])?;
    let mut gate = |p: &GateParams| -> Result<Value> {
        let lin = tape.linear(z, p.w, Some(p.b))?;
        Ok(tape.sigmoid(lin))
    };
    let i = gate(&layer.input)?;
    let f = gate(&layer.forget)?;
    let o = gate(&layer.output)?;
    let cand_lin = tape.linear(z, layer.cell.w, Some(layer.cell.b))?;
    let cand = tape.tanh(cand_lin);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, cand)?;
    let c_next = tape.add(keep, write)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, (h_next, c_next)))
}

/// Public single-layer step (layer index 0 or 1); layer 1 consumes layer
/// 0's output.
pub fn recurrent_step(
    tape: &mut Tape,
    params: &CaptionParams,
    layer: usize,
    input: Value,
    state: (Value, Value),
) -> Result<(Value, (Value, Value))> {
    let lp = params
        .layers
        .get(layer)
        .ok_or_else(|| Error::IndexOutOfRange(format!("lstm layer {layer}")))?;
    cell_step(tape, lp, input, state)
}

/// Feed one input vector through both layers, returning word logits.
fn forward_step(
    tape: &mut Tape,
    params: &CaptionParams,
    input: Value,
    state: &mut DecoderState,
) -> Result<Value> {
    let (h1, s1) = cell_step(tape, &params.layers[0], input, state.layers[0])?;
    let (h2, s2) = cell_step(tape, &params.layers[1], h1, state.layers[1])?;
    state.layers[0] = s1;
    state.layers[1] = s2;
    tape.linear(h2, params.decoder_w, Some(params.decoder_b))
}

/// Teacher-forced mean cross-entropy over all predicted positions.
/// `tokens` must be non-empty and end with the end token.
pub fn caption_loss(
    tape: &mut Tape,
    params: &CaptionParams,
    x_cap: Value,
    tokens: &[usize],
) -> Result<Value> {
    if tokens.is_empty() {
        return Err(Error::invalid("caption_loss: empty token sequence"));
    }
    if *tokens.last().unwrap() != END_TOKEN {
        return Err(Error::invalid(
            "caption_loss: sequence must end with the end token",
        ));
    }
    let mut state = DecoderState::zeros(tape, params.hidden_dim);
    let image = tape.linear(x_cap, params.encoder_w, Some(params.encoder_b))?;
    forward_step(tape, params, image, &mut state)?; // step 0 output unused

    let mut total: Option<Value> = None;
    let mut prev = START_TOKEN;
    for &target in tokens {
        let input = tape.row(params.embedding, prev)?;
        let logits = forward_step(tape, params, input, &mut state)?;
        let ce = tape.softmax_cross_entropy(logits, target)?;
        total = Some(match total {
            None => ce,
            Some(t) => tape.add(t, ce)?,
        });
        prev = target;
    }
    Ok(tape.scale_const(total.unwrap(), 1.0 / tokens.len() as f64))
}

/// Greedy argmax decoding. Stops at the end token (excluded from the
/// output) or after `max_len` emitted words. Returns the tokens and the
/// mean log-probability of every decoding step taken.
pub fn decode_greedy(
    tape: &mut Tape,
    params: &CaptionParams,
    x_cap: Value,
    max_len: usize,
) -> Result<(Vec<usize>, f64)> {
    if max_len == 0 {
        return Err(Error::invalid("decode_greedy: max_len must be >= 1"));
    }
    let mut state = DecoderState::zeros(tape, params.hidden_dim);
    let image = tape.linear(x_cap, params.encoder_w, Some(params.encoder_b))?;
    forward_step(tape, params, image, &mut state)?;

    let mut out = Vec::new();
    let mut log_probs = Vec::new();
    let mut prev = START_TOKEN;
    loop {
        let input = tape.row(params.embedding, prev)?;
        let logits = forward_step(tape, params, input, &mut state)?;
        let (token, logp) = argmax_log_prob(tape.data(logits));
        log_probs.push(logp);
        if token == END_TOKEN {
            break;
        }
        out.push(token);
        if out.len() >= max_len {
            break;
        }
        prev = token;
    }
    let score = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((out, score))
}

fn argmax_log_prob(logits: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    let max = logits[best];
    let z: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    (best, -z.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{adam_step, grad_check, AdamState};
    use rand::Rng;
    use rand::SeedableRng;

    fn config() -> CaptionConfig {
        CaptionConfig {
            feature_dim: 6,
            embed_dim: 5,
            hidden_dim: 7,
            vocab_size: 9,
            max_len: 8,
        }
    }

    fn store_with(config: &CaptionConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        register_params(&mut store, config, &mut rng).unwrap();
        store
    }

    fn zero_store(config: &CaptionConfig) -> ParamStore {
        let mut store = store_with(config, 0);
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            let p = store.get_mut(&name).unwrap();
            for v in &mut p.data {
                *v = 0.0;
            }
        }
        store
    }

    #[test]
    fn single_end_token_uniform_logits_gives_log_v() {
        let cfg = config();
        let store = zero_store(&cfg);
        let mut tape = Tape::new();
        let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
        let x = tape.constant_vec(vec![0.3; cfg.feature_dim]);
        let loss = caption_loss(&mut tape, &params, x, &[END_TOKEN]).unwrap();
        assert!((tape.scalar(loss) - (cfg.vocab_size as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let cfg = config();
        let store = store_with(&cfg, 1);
        let mut tape = Tape::new();
        let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
        let x = tape.constant_vec(vec![0.0; cfg.feature_dim]);
        assert!(caption_loss(&mut tape, &params, x, &[]).is_err());
        assert!(caption_loss(&mut tape, &params, x, &[4, 5]).is_err());
    }

    #[test]
    fn zero_weights_zero_state_give_zero_cell_output() {
        let cfg = config();
        let store = zero_store(&cfg);
        let mut tape = Tape::new();
        let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
        let input = tape.zeros(cfg.embed_dim);
        let state = (tape.zeros(cfg.hidden_dim), tape.zeros(cfg.hidden_dim));
        let (out, _) = recurrent_step(&mut tape, &params, 0, input, state).unwrap();
        assert_eq!(tape.data(out), vec![0.0; cfg.hidden_dim].as_slice());
    }

    #[test]
    fn recurrence_is_deterministic() {
        let cfg = config();
        let store = store_with(&cfg, 5);
        let run = || {
            let mut tape = Tape::new();
            let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
            let input = tape.constant_vec(vec![0.2; cfg.embed_dim]);
            let state = (tape.zeros(cfg.hidden_dim), tape.zeros(cfg.hidden_dim));
            let (out, _) = recurrent_step(&mut tape, &params, 0, input, state).unwrap();
            tape.data(out).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn forced_end_gives_empty_decode() {
        let cfg = config();
        let mut store = zero_store(&cfg);
        {
            let b = store.get_mut("caption.word_decoder.b").unwrap();
            b.data[END_TOKEN] = 10.0;
        }
        let mut tape = Tape::new();
        let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
        let x = tape.constant_vec(vec![0.5; cfg.feature_dim]);
        let (tokens, _) = decode_greedy(&mut tape, &params, x, cfg.max_len).unwrap();
        assert!(tokens.is_empty());
    }

    #[test]
    fn decode_length_is_bounded() {
        let cfg = config();
        // Bias toward a non-end token so decoding would run forever.
        let mut store = zero_store(&cfg);
        {
            let b = store.get_mut("caption.word_decoder.b").unwrap();
            b.data[4] = 10.0;
        }
        let mut tape = Tape::new();
        let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
        let x = tape.constant_vec(vec![0.5; cfg.feature_dim]);
        for max_len in [1usize, 3, 8] {
            let (tokens, _) = decode_greedy(&mut tape, &params, x, max_len).unwrap();
            assert!(tokens.len() <= max_len);
        }
    }

    #[test]
    fn loss_is_invariant_to_batch_order() {
        let cfg = config();
        let store = store_with(&cfg, 9);
        let captions: Vec<Vec<usize>> = vec![vec![3, 4, END_TOKEN], vec![5, END_TOKEN], vec![6, 7, 8, END_TOKEN]];
        let features: Vec<Vec<f64>> = vec![vec![0.1; 6], vec![-0.4; 6], vec![0.7; 6]];
        let batch_loss = |order: &[usize]| -> f64 {
            let mut tape = Tape::new();
            let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
            let mut total: Option<Value> = None;
            for &i in order {
                let x = tape.constant_vec(features[i].clone());
                let l = caption_loss(&mut tape, &params, x, &captions[i]).unwrap();
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l).unwrap(),
                });
            }
            let mean = tape.scale_const(total.unwrap(), 1.0 / order.len() as f64);
            tape.scalar(mean)
        };
        let a = batch_loss(&[0, 1, 2]);
        let b = batch_loss(&[2, 0, 1]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_through_unrolled_steps() {
        let cfg = config();
        let mut store = store_with(&cfg, 11);
        let tokens = vec![3, 4, 5, 6, END_TOKEN]; // 5 unrolled positions
        let report = grad_check(&mut store, 1e-3, 4, 42, |s, tape| {
            let params = CaptionParams::bind(tape, s, &cfg)?;
            let x = tape.constant_vec(vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.4]);
            caption_loss(tape, &params, x, &tokens)
        })
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn overfits_a_tiny_corpus_and_reproduces_it_greedily() {
        let cfg = CaptionConfig {
            feature_dim: 6,
            embed_dim: 8,
            hidden_dim: 16,
            vocab_size: 10,
            max_len: 6,
        };
        let mut store = store_with(&cfg, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let captions: Vec<Vec<usize>> = vec![
            vec![3, 4, 5, END_TOKEN],
            vec![6, 7, END_TOKEN],
            vec![8, 9, 3, END_TOKEN],
        ];
        let features: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut adam = AdamState::new();
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let mut tape = Tape::new();
            let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
            let mut total: Option<Value> = None;
            for (x, toks) in features.iter().zip(&captions) {
                let xv = tape.constant_vec(x.clone());
                let l = caption_loss(&mut tape, &params, xv, toks).unwrap();
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l).unwrap(),
                });
            }
            let loss = tape.scale_const(total.unwrap(), 1.0 / 3.0);
            tape.backward(loss).unwrap();
            store.zero_grads();
            tape.flush_grads(&mut store).unwrap();
            adam_step(&mut store, &mut adam, 0.01, 0.9, 0.999, 1e-8, |_| true).unwrap();
            last = tape.scalar(loss);
        }
        assert!(last < 0.05, "final loss {last}");
        let mut tape = Tape::new();
        let params = CaptionParams::bind(&mut tape, &store, &cfg).unwrap();
        for (x, toks) in features.iter().zip(&captions) {
            let xv = tape.constant_vec(x.clone());
            let (decoded, _) = decode_greedy(&mut tape, &params, xv, cfg.max_len).unwrap();
            let want: Vec<usize> = toks[..toks.len() - 1].to_vec();
            assert_eq!(decoded, want);
        }
    }
}

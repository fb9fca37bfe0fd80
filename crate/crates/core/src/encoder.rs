//! Multi-head self-attention encoder over word-piece embeddings.
//!
//! Post-norm layout: each sublayer's output is dropped out, added to the
//! residual stream, then layer-normalized. Position information comes
//! from learned embeddings added to the token embeddings. There are no
//! segment embeddings; inputs are single sentences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::{contract, Graph, Result, Tensor};

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub num_heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults, small enough for finite-difference testing.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            num_layers: 2,
            hidden: 32,
            num_heads: 4,
            ffn: 64,
            vocab_size,
            max_positions: 64,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0
            || self.hidden == 0
            || self.num_heads == 0
            || self.ffn == 0
            || self.vocab_size == 0
            || self.max_positions == 0
        {
            return Err(contract("encoder", "all size fields must be positive"));
        }
        if !self.hidden.is_multiple_of(self.num_heads) {
            return Err(contract(
                "encoder",
                format!("hidden {} not divisible by {} heads", self.hidden, self.num_heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(contract("encoder", format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams<S: Scalar> {
    pub wq: Tensor<S>,
    pub bq: Tensor<S>,
    pub wk: Tensor<S>,
    pub bk: Tensor<S>,
    pub wv: Tensor<S>,
    pub bv: Tensor<S>,
    pub wo: Tensor<S>,
    pub bo: Tensor<S>,
    pub ln1_gain: Tensor<S>,
    pub ln1_bias: Tensor<S>,
    pub ffn_w1: Tensor<S>,
    pub ffn_b1: Tensor<S>,
    pub ffn_w2: Tensor<S>,
    pub ffn_b2: Tensor<S>,
    pub ln2_gain: Tensor<S>,
    pub ln2_bias: Tensor<S>,
}

#[derive(Debug, Clone)]
pub struct EncoderParams<S: Scalar> {
    pub token_emb: Tensor<S>,
    pub pos_emb: Tensor<S>,
    pub layers: Vec<LayerParams<S>>,
}

impl<S: Scalar> EncoderParams<S> {
    /// Every parameter under a unique name. Clones share storage, so the
    /// result is cheap and grads/updates through it reach the encoder.
    pub fn named(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = vec![
            ("token_emb".to_owned(), self.token_emb.clone()),
            ("pos_emb".to_owned(), self.pos_emb.clone()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let fields: [(&str, &Tensor<S>); 16] = [
                ("attn_wq", &l.wq),
                ("attn_bq", &l.bq),
                ("attn_wk", &l.wk),
                ("attn_bk", &l.bk),
                ("attn_wv", &l.wv),
                ("attn_bv", &l.bv),
                ("attn_wo", &l.wo),
                ("attn_bo", &l.bo),
                ("ln1_gain", &l.ln1_gain),
                ("ln1_bias", &l.ln1_bias),
                ("ffn_w1", &l.ffn_w1),
                ("ffn_b1", &l.ffn_b1),
                ("ffn_w2", &l.ffn_w2),
                ("ffn_b2", &l.ffn_b2),
                ("ln2_gain", &l.ln2_gain),
                ("ln2_bias", &l.ln2_bias),
            ];
            for (suffix, t) in fields {
                out.push((format!("layer{i}.{suffix}"), (*t).clone()));
            }
        }
        out
    }
}

pub(crate) fn gauss<S: Scalar>(
    shape: Vec<usize>,
    rng: &mut ChaCha8Rng,
    normal: &Normal<f64>,
) -> Tensor<S> {
    let numel: usize = shape.iter().product();
    // sampled in f64 regardless of S, so every scalar type sees the same draw
    let data: Vec<S> = (0..numel).map(|_| S::of_f64(normal.sample(rng))).collect();
    Tensor::new(shape, data, true).expect("generated shape is valid")
}

fn ones<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::new(vec![n], vec![S::one(); n], true).expect("vector shape is valid")
}

/// Fresh parameters: weights from N(0, 0.02), biases zero, layer-norm
/// gain one and bias zero. Deterministic in the seed.
pub fn init_params<S: Scalar>(config: &EncoderConfig, seed: u64) -> Result<EncoderParams<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_from(config, &mut rng)
}

/// Same as [`init_params`] but draws from a caller-owned stream, so several
/// parameter groups can share one seed without repeating values.
pub fn init_params_from<S: Scalar>(
    config: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EncoderParams<S>> {
    config.validate()?;
    let normal = Normal::new(0.0, 0.02).expect("valid standard deviation");
    let h = config.hidden;
    let layers = (0..config.num_layers)
        .map(|_| LayerParams {
            wq: gauss(vec![h, h], rng, &normal),
            bq: Tensor::zeros(vec![h], true),
            wk: gauss(vec![h, h], rng, &normal),
            bk: Tensor::zeros(vec![h], true),
            wv: gauss(vec![h, h], rng, &normal),
            bv: Tensor::zeros(vec![h], true),
            wo: gauss(vec![h, h], rng, &normal),
            bo: Tensor::zeros(vec![h], true),
            ln1_gain: ones(h),
            ln1_bias: Tensor::zeros(vec![h], true),
            ffn_w1: gauss(vec![h, config.ffn], rng, &normal),
            ffn_b1: Tensor::zeros(vec![config.ffn], true),
            ffn_w2: gauss(vec![config.ffn, h], rng, &normal),
            ffn_b2: Tensor::zeros(vec![h], true),
            ln2_gain: ones(h),
            ln2_bias: Tensor::zeros(vec![h], true),
        })
        .collect();
    Ok(EncoderParams {
        token_emb: gauss(vec![config.vocab_size, h], rng, &normal),
        pos_emb: gauss(vec![config.max_positions, h], rng, &normal),
        layers,
    })
}

pub(crate) fn maybe_dropout<S: Scalar>(
    graph: &mut Graph<S>,
    x: &Tensor<S>,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Tensor<S>> {
    match rng {
        Some(r) if rate > 0.0 => graph.dropout(x, rate, r),
        _ => Ok(x.clone()),
    }
}

/// Attention distributions indexed as `[layer][head]`, each a len×len
/// matrix whose rows are query positions.
pub type AttentionMaps<S> = Vec<Vec<Tensor<S>>>;

/// Run the encoder, also returning the attention distributions.
/// `pad_id` marks ids whose positions are masked out of attention.
/// Dropout is applied only when an rng is passed.
pub fn encode_with_attention<S: Scalar>(
    graph: &mut Graph<S>,
    params: &EncoderParams<S>,
    config: &EncoderConfig,
    piece_ids: &[usize],
    pad_id: Option<usize>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor<S>, AttentionMaps<S>)> {
    config.validate()?;
    let len = piece_ids.len();
    if len == 0 {
        return Err(contract("encode", "empty piece id list"));
    }
    if len > config.max_positions {
        return Err(contract(
            "encode",
            format!("{len} pieces exceed max_positions {}", config.max_positions),
        ));
    }
    if let Some(&bad) = piece_ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(contract(
            "encode",
            format!("piece id {bad} out of range for vocabulary of {}", config.vocab_size),
        ));
    }
    let mut rng = dropout_rng;

    let tok = graph.gather_rows(&params.token_emb, piece_ids)?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = graph.gather_rows(&params.pos_emb, &positions)?;
    let embedded = graph.add(&tok, &pos)?;
    let mut hidden = maybe_dropout(graph, &embedded, config.dropout_rate, &mut rng)?;

    // additive mask: −1e9 in every column that holds a pad token
    let pad_mask: Option<Tensor<S>> = pad_id.and_then(|pid| {
        if !piece_ids.contains(&pid) {
            return None;
        }
        let mut data = vec![S::zero(); len * len];
        for (j, &id) in piece_ids.iter().enumerate() {
            if id == pid {
                for i in 0..len {
                    data[i * len + j] = S::of_f64(-1e9);
                }
            }
        }
        Some(Tensor::new(vec![len, len], data, false).expect("mask shape is valid"))
    });

    let dh = config.hidden / config.num_heads;
    let scale = S::of_f64(1.0 / (dh as f64).sqrt());
    let mut attention = Vec::with_capacity(config.num_layers);

    for layer in &params.layers {
        let q = graph.matmul(&hidden, &layer.wq)?;
        let q = graph.add_bias(&q, &layer.bq)?;
        let k = graph.matmul(&hidden, &layer.wk)?;
        let k = graph.add_bias(&k, &layer.bk)?;
        let v = graph.matmul(&hidden, &layer.wv)?;
        let v = graph.add_bias(&v, &layer.bv)?;

        let mut heads = Vec::with_capacity(config.num_heads);
        let mut head_probs = Vec::with_capacity(config.num_heads);
        for h in 0..config.num_heads {
            let qh = graph.slice_cols(&q, h * dh, dh)?;
            let kh = graph.slice_cols(&k, h * dh, dh)?;
            let vh = graph.slice_cols(&v, h * dh, dh)?;
            let kt = graph.transpose(&kh)?;
            let scores = graph.matmul(&qh, &kt)?;
            let scores = graph.scale(&scores, scale)?;
            let scores = match &pad_mask {
                Some(m) => graph.add(&scores, m)?,
                None => scores,
            };
            let probs = graph.softmax(&scores)?;
            head_probs.push(probs.clone());
            heads.push(graph.matmul(&probs, &vh)?);
        }
        let ctx = graph.concat_cols(&heads)?;
        let proj = graph.matmul(&ctx, &layer.wo)?;
        let proj = graph.add_bias(&proj, &layer.bo)?;
        let proj = maybe_dropout(graph, &proj, config.dropout_rate, &mut rng)?;
        let attn_out = graph.add(&hidden, &proj)?;
        let attn_out = graph.layer_norm(&attn_out, &layer.ln1_gain, &layer.ln1_bias, LN_EPS)?;

        let f1 = graph.matmul(&attn_out, &layer.ffn_w1)?;
        let f1 = graph.add_bias(&f1, &layer.ffn_b1)?;
        let act = graph.gelu(&f1)?;
        let f2 = graph.matmul(&act, &layer.ffn_w2)?;
        let f2 = graph.add_bias(&f2, &layer.ffn_b2)?;
        let f2 = maybe_dropout(graph, &f2, config.dropout_rate, &mut rng)?;
        let ffn_out = graph.add(&attn_out, &f2)?;
        hidden = graph.layer_norm(&ffn_out, &layer.ln2_gain, &layer.ln2_bias, LN_EPS)?;

        attention.push(head_probs);
    }
    Ok((hidden, attention))
}

/// One hidden state per input piece; row 0 belongs to [CLS].
pub fn encode<S: Scalar>(
    graph: &mut Graph<S>,
    params: &EncoderParams<S>,
    config: &EncoderConfig,
    piece_ids: &[usize],
    pad_id: Option<usize>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<S>> {
    Ok(encode_with_attention(graph, params, config, piece_ids, pad_id, dropout_rng)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            hidden: 6,
            num_heads: 2,
            ffn: 8,
            vocab_size: 8,
            max_positions: 8,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn output_has_one_row_per_piece() {
        let config = EncoderConfig::desk(16);
        let params = init_params::<f64>(&config, 1).unwrap();
        let mut g = Graph::new();
        let out = encode(&mut g, &params, &config, &[0, 5, 3, 3, 1], None, None).unwrap();
        assert_eq!(out.shape(), &[5, config.hidden]);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let config = EncoderConfig::desk(16);
        let params = init_params::<f64>(&config, 1).unwrap();
        let mut g = Graph::new();
        let a = encode(&mut g, &params, &config, &[0, 5, 3], None, None).unwrap();
        let b = encode(&mut g, &params, &config, &[0, 5, 3], None, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn train_mode_dropout_perturbs_output() {
        let config = EncoderConfig::desk(16);
        let params = init_params::<f64>(&config, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let a = encode(&mut g, &params, &config, &[0, 5, 3], None, Some(&mut rng)).unwrap();
        let b = encode(&mut g, &params, &config, &[0, 5, 3], None, Some(&mut rng)).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let config = EncoderConfig::desk(16);
        let params = init_params::<f64>(&config, 2).unwrap();
        let mut g = Graph::new();
        let (_, attention) =
            encode_with_attention(&mut g, &params, &config, &[0, 5, 3, 7, 2, 2], None, None).unwrap();
        assert_eq!(attention.len(), config.num_layers);
        for layer in &attention {
            assert_eq!(layer.len(), config.num_heads);
            for probs in layer {
                assert_eq!(probs.shape(), &[6, 6]);
                let d = probs.data();
                for row in d.chunks(6) {
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9, "attention row sums to {sum}");
                    assert!(row.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn pad_columns_get_no_attention_and_do_not_disturb_other_rows() {
        let config = EncoderConfig::desk(16);
        let params = init_params::<f64>(&config, 3).unwrap();
        let pad = 15;
        let mut g = Graph::new();
        let ids = [0, 5, 3];
        let padded = [0, 5, 3, pad, pad];
        let (plain, _) = encode_with_attention(&mut g, &params, &config, &ids, Some(pad), None).unwrap();
        let (with_pad, attention) =
            encode_with_attention(&mut g, &params, &config, &padded, Some(pad), None).unwrap();
        for layer in &attention {
            for probs in layer {
                let d = probs.data();
                for i in 0..5 {
                    assert_eq!(d[i * 5 + 3], 0.0);
                    assert_eq!(d[i * 5 + 4], 0.0);
                }
            }
        }
        // masked pads leave the real positions bitwise untouched
        let h = config.hidden;
        assert_eq!(plain.data(), with_pad.data()[..3 * h].to_vec());
    }

    #[test]
    fn position_embeddings_make_order_matter() {
        let config = EncoderConfig::desk(16);
        let params = init_params::<f64>(&config, 4).unwrap();
        let mut g = Graph::new();
        let a = encode(&mut g, &params, &config, &[1, 2, 3, 4], None, None).unwrap();
        let b = encode(&mut g, &params, &config, &[2, 1, 3, 4], None, None).unwrap();
        let max_diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-9, "transposing input pieces changed nothing");
    }

    #[test]
    fn init_is_seed_deterministic_and_seed_sensitive() {
        let config = tiny_config();
        let a = init_params::<f64>(&config, 11).unwrap();
        let b = init_params::<f64>(&config, 11).unwrap();
        let c = init_params::<f64>(&config, 12).unwrap();
        for ((na, ta), (nb, tb)) in a.named().iter().zip(b.named()) {
            assert_eq!(*na, nb);
            assert_eq!(ta.data(), tb.data(), "{na} differs across identical seeds");
        }
        let differs = a
            .named()
            .iter()
            .zip(c.named())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs, "different seeds produced identical parameters");
    }

    #[test]
    fn init_weight_mean_is_statistically_zero() {
        let config = EncoderConfig::desk(64);
        let params = init_params::<f64>(&config, 5).unwrap();
        // weights only: biases and layer-norm parameters are constants
        let mut values = Vec::new();
        for (name, t) in params.named() {
            if name.contains("_w") || name.ends_with("_emb") {
                values.extend(t.data());
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let bound = 3.0 * 0.02 / n.sqrt();
        assert!(mean.abs() < bound, "mean {mean} outside ±{bound}");
    }

    #[test]
    fn f32_initialization_tracks_the_f64_stream() {
        let config = tiny_config();
        let a = init_params::<f64>(&config, 9).unwrap();
        let b = init_params::<f32>(&config, 9).unwrap();
        for (x, y) in a.token_emb.data().iter().zip(b.token_emb.data()) {
            assert_eq!(*x as f32, y);
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let config = tiny_config();
        let params = init_params::<f64>(&config, 6).unwrap();
        let mut g = Graph::new();
        let out = encode(&mut g, &params, &config, &[0, 3, 5, 1], None, None).unwrap();
        let loss = g.mean_all(&out).unwrap();
        g.backward(&loss).unwrap();
        for (name, t) in params.named() {
            assert!(t.grad().is_some(), "parameter {name} got no gradient");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let config = tiny_config();
        let params = init_params::<f64>(&config, 0).unwrap();
        let mut g = Graph::new();
        assert!(encode(&mut g, &params, &config, &[], None, None).is_err());
        assert!(encode(&mut g, &params, &config, &[0; 9], None, None).is_err());
        assert!(encode(&mut g, &params, &config, &[0, 99], None, None).is_err());
        let bad = EncoderConfig {
            num_heads: 4,
            hidden: 6,
            ..tiny_config()
        };
        assert!(init_params::<f64>(&bad, 0).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let config = tiny_config();
        let params = init_params::<f64>(&config, 8).unwrap();
        let tensors: Vec<_> = params.named().into_iter().map(|(_, t)| t).collect();
        // fixed random mixing so the loss is not symmetric in the output
        let mut mix_rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mix = gauss::<f64>(vec![4, config.hidden], &mut mix_rng, &normal);
        let mismatches = gradcheck::check(&tensors, |g| {
            let out = encode(g, &params, &config, &[0, 3, 5, 1], None, None)?;
            let mixed = g.mul(&out, &mix)?;
            g.sum_all(&mixed)
        })
        .unwrap();
        assert!(mismatches.is_empty(), "{} disagreements, first: {:?}", mismatches.len(), mismatches.first());
    }
}

//! Miniature bidirectional transformer encoder with an MLM pretraining head.
//!
//! The layout follows the usual recipe: token + segment + position embedding
//! sums, stacked post-norm encoder layers (multi-head self-attention, then a
//! two-layer relu feed-forward, each wrapped in residual + layer norm), and
//! an affine masked-language-model projection over the final features.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{EncodedExample, MlmTarget};

/// Additive score applied to padded key positions before softmax. Large
/// enough that the subsequent exp underflows to exactly zero, which is what
/// makes features at real positions bit-identical regardless of pad content.
pub const MASK_SCORE: f64 = -1e9;

/// Standard deviation for weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Forward-pass mode. Training mode owns the generator that drives dropout,
/// so eval-mode inference needs no randomness at all.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Mode<'_> {
    fn rng(&mut self) -> Option<&mut Rng> {
        match self {
            Mode::Train(rng) => Some(rng),
            Mode::Eval => None,
        }
    }
}

// ───────────────────────────────────────────────────────────────────────────
// Config and parameters
// ───────────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 64,
            ff_dim: 128,
            max_len: 64,
            vocab_size: 0, // callers set this from the vocabulary
            dropout_rate: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.model_dim == 0 || self.ff_dim == 0 || self.max_len == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.vocab_size < crate::text::RESERVED {
            return Err(Error::Config(format!(
                "vocab_size {} smaller than the reserved token block",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Weights of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

/// Full encoder weights, MLM head included.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_emb: Tensor,
    pub segment_emb: Tensor,
    pub position_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub mlm_w: Tensor,
    pub mlm_b: Tensor,
}

fn randn_grad(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 0.0, INIT_STD, rng).with_grad()
}

impl EncoderParams {
    /// Fresh weights: normals with std [`INIT_STD`], layer-norm scale 1 and
    /// offset 0. Draw order is fixed, so one seed pins every weight.
    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Result<EncoderParams> {
        config.validate()?;
        let d = config.model_dim;
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                wq: randn_grad(vec![d, d], rng),
                bq: randn_grad(vec![d], rng),
                wk: randn_grad(vec![d, d], rng),
                bk: randn_grad(vec![d], rng),
                wv: randn_grad(vec![d, d], rng),
                bv: randn_grad(vec![d], rng),
                wo: randn_grad(vec![d, d], rng),
                bo: randn_grad(vec![d], rng),
                ln1_gamma: Tensor::filled(vec![d], 1.0).with_grad(),
                ln1_beta: Tensor::zeros(vec![d]).with_grad(),
                ff_w1: randn_grad(vec![d, config.ff_dim], rng),
                ff_b1: randn_grad(vec![config.ff_dim], rng),
                ff_w2: randn_grad(vec![config.ff_dim, d], rng),
                ff_b2: randn_grad(vec![d], rng),
                ln2_gamma: Tensor::filled(vec![d], 1.0).with_grad(),
                ln2_beta: Tensor::zeros(vec![d]).with_grad(),
            })
            .collect();
        Ok(EncoderParams {
            token_emb: randn_grad(vec![config.vocab_size, d], rng),
            segment_emb: randn_grad(vec![2, d], rng),
            position_emb: randn_grad(vec![config.max_len, d], rng),
            layers,
            mlm_w: randn_grad(vec![d, config.vocab_size], rng),
            mlm_b: randn_grad(vec![config.vocab_size], rng),
        })
    }

    /// All-zero weights with the same shapes as [`EncoderParams::init`];
    /// a shape skeleton for loading checkpoints into.
    pub fn zeros(config: &EncoderConfig) -> Result<EncoderParams> {
        config.validate()?;
        let d = config.model_dim;
        let zt = |shape: Vec<usize>| Tensor::zeros(shape).with_grad();
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                wq: zt(vec![d, d]),
                bq: zt(vec![d]),
                wk: zt(vec![d, d]),
                bk: zt(vec![d]),
                wv: zt(vec![d, d]),
                bv: zt(vec![d]),
                wo: zt(vec![d, d]),
                bo: zt(vec![d]),
                ln1_gamma: zt(vec![d]),
                ln1_beta: zt(vec![d]),
                ff_w1: zt(vec![d, config.ff_dim]),
                ff_b1: zt(vec![config.ff_dim]),
                ff_w2: zt(vec![config.ff_dim, d]),
                ff_b2: zt(vec![d]),
                ln2_gamma: zt(vec![d]),
                ln2_beta: zt(vec![d]),
            })
            .collect();
        Ok(EncoderParams {
            token_emb: zt(vec![config.vocab_size, d]),
            segment_emb: zt(vec![2, d]),
            position_emb: zt(vec![config.max_len, d]),
            layers,
            mlm_w: zt(vec![d, config.vocab_size]),
            mlm_b: zt(vec![config.vocab_size]),
        })
    }

    /// Canonical (name, tensor) listing; the same order everywhere gradients,
    /// optimizer state, or checkpoints are walked.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("encoder.token_emb".into(), &self.token_emb),
            ("encoder.segment_emb".into(), &self.segment_emb),
            ("encoder.position_emb".into(), &self.position_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (suffix, t) in layer_fields(l) {
                out.push((format!("encoder.layer{i}.{suffix}"), t));
            }
        }
        out.push(("encoder.mlm.w".into(), &self.mlm_w));
        out.push(("encoder.mlm.b".into(), &self.mlm_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("encoder.token_emb".into(), &mut self.token_emb),
            ("encoder.segment_emb".into(), &mut self.segment_emb),
            ("encoder.position_emb".into(), &mut self.position_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (suffix, t) in layer_fields_mut(l) {
                out.push((format!("encoder.layer{i}.{suffix}"), t));
            }
        }
        out.push(("encoder.mlm.w".into(), &mut self.mlm_w));
        out.push(("encoder.mlm.b".into(), &mut self.mlm_b));
        out
    }

    /// Registers every tensor on the tape, in [`EncoderParams::named`] order.
    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        let vars: Vec<Var> = self.named().iter().map(|(_, t)| tape.leaf(t)).collect();
        BoundEncoder::from_vars(self.layers.len(), &vars)
    }

    /// Like [`EncoderParams::bind`] but gradient-free, for frozen-encoder
    /// fine-tuning and inference.
    pub fn bind_detached(&self, tape: &mut Tape) -> BoundEncoder {
        let vars: Vec<Var> = self
            .named()
            .iter()
            .map(|(_, t)| tape.leaf_detached(t))
            .collect();
        BoundEncoder::from_vars(self.layers.len(), &vars)
    }

    /// Copies gradients from the tape back into the parameter tensors.
    pub fn write_grads(&mut self, tape: &Tape, bound: &BoundEncoder) {
        let vars = bound.vars();
        for ((_, t), v) in self.named_mut().into_iter().zip(vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }
}

fn layer_fields(l: &LayerParams) -> Vec<(&'static str, &Tensor)> {
    vec![
        ("attn.wq", &l.wq),
        ("attn.bq", &l.bq),
        ("attn.wk", &l.wk),
        ("attn.bk", &l.bk),
        ("attn.wv", &l.wv),
        ("attn.bv", &l.bv),
        ("attn.wo", &l.wo),
        ("attn.bo", &l.bo),
        ("ln1.gamma", &l.ln1_gamma),
        ("ln1.beta", &l.ln1_beta),
        ("ff.w1", &l.ff_w1),
        ("ff.b1", &l.ff_b1),
        ("ff.w2", &l.ff_w2),
        ("ff.b2", &l.ff_b2),
        ("ln2.gamma", &l.ln2_gamma),
        ("ln2.beta", &l.ln2_beta),
    ]
}

fn layer_fields_mut(l: &mut LayerParams) -> Vec<(&'static str, &mut Tensor)> {
    vec![
        ("attn.wq", &mut l.wq),
        ("attn.bq", &mut l.bq),
        ("attn.wk", &mut l.wk),
        ("attn.bk", &mut l.bk),
        ("attn.wv", &mut l.wv),
        ("attn.bv", &mut l.bv),
        ("attn.wo", &mut l.wo),
        ("attn.bo", &mut l.bo),
        ("ln1.gamma", &mut l.ln1_gamma),
        ("ln1.beta", &mut l.ln1_beta),
        ("ff.w1", &mut l.ff_w1),
        ("ff.b1", &mut l.ff_b1),
        ("ff.w2", &mut l.ff_w2),
        ("ff.b2", &mut l.ff_b2),
        ("ln2.gamma", &mut l.ln2_gamma),
        ("ln2.beta", &mut l.ln2_beta),
    ]
}

/// One encoder layer's weights as tape vars.
#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

/// Encoder weights registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub token_emb: Var,
    pub segment_emb: Var,
    pub position_emb: Var,
    pub layers: Vec<BoundLayer>,
    pub mlm_w: Var,
    pub mlm_b: Var,
}

impl BoundEncoder {
    /// Rebuilds the structure from vars laid out in canonical order.
    pub fn from_vars(num_layers: usize, vars: &[Var]) -> BoundEncoder {
        assert_eq!(vars.len(), 5 + num_layers * 16, "var count mismatch");
        let mut it = vars.iter().copied();
        let mut next = || it.next().unwrap();
        let token_emb = next();
        let segment_emb = next();
        let position_emb = next();
        let layers = (0..num_layers)
            .map(|_| BoundLayer {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_gamma: next(),
                ln1_beta: next(),
                ff_w1: next(),
                ff_b1: next(),
                ff_w2: next(),
                ff_b2: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
            })
            .collect();
        BoundEncoder {
            token_emb,
            segment_emb,
            position_emb,
            layers,
            mlm_w: next(),
            mlm_b: next(),
        }
    }

    /// Vars in the same order as [`EncoderParams::named`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.token_emb, self.segment_emb, self.position_emb];
        for l in &self.layers {
            out.extend([
                l.wq,
                l.bq,
                l.wk,
                l.bk,
                l.wv,
                l.bv,
                l.wo,
                l.bo,
                l.ln1_gamma,
                l.ln1_beta,
                l.ff_w1,
                l.ff_b1,
                l.ff_w2,
                l.ff_b2,
                l.ln2_gamma,
                l.ln2_beta,
            ]);
        }
        out.extend([self.mlm_w, self.mlm_b]);
        out
    }
}

// ───────────────────────────────────────────────────────────────────────────
// Forward pass
// ───────────────────────────────────────────────────────────────────────────

/// Row i = token_table[token_ids[i]] + segment_table[segment_ids[i]] +
/// position_table[position_ids[i]].
pub fn embed(tape: &mut Tape, enc: &BoundEncoder, example: &EncodedExample) -> Result<Var> {
    let tok = tape.gather_rows(enc.token_emb, &example.token_ids)?;
    let seg = tape.gather_rows(enc.segment_emb, &example.segment_ids)?;
    let pos = tape.gather_rows(enc.position_emb, &example.position_ids)?;
    let ts = tape.add(tok, seg)?;
    tape.add(ts, pos)
}

/// Inverted dropout: zeroes entries with probability `rate` and rescales the
/// survivors by 1/(1-rate). No-op at rate 0 or in eval mode.
fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut Mode) -> Result<Var> {
    let rng = match mode.rng() {
        Some(rng) if rate > 0.0 => rng,
        _ => return Ok(x),
    };
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..tape.numel(x))
        .map(|_| {
            if rng.uniform() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let m = tape.constant(tape.shape(x).to_vec(), mask);
    tape.mul(x, m)
}

/// Additive attention bias: 0 over real keys, [`MASK_SCORE`] over padding.
fn mask_bias(tape: &mut Tape, n: usize, mask: &[u8]) -> Var {
    let mut data = vec![0.0; n * n];
    for j in 0..n {
        if mask[j] == 0 {
            for i in 0..n {
                data[i * n + j] = MASK_SCORE;
            }
        }
    }
    tape.constant(vec![n, n], data)
}

/// Multi-head self-attention, returning the per-head probability matrices
/// alongside the projected output.
pub fn multi_head_attention_with_probs(
    tape: &mut Tape,
    x: Var,
    layer: &BoundLayer,
    mask: &[u8],
    num_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let n = tape.shape(x)[0];
    let d_model = tape.shape(x)[1];
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "attention_mask",
            lhs: vec![n, d_model],
            rhs: vec![mask.len()],
        });
    }
    let d_head = d_model / num_heads;
    let qw = tape.matmul(x, layer.wq)?;
    let q = tape.add_bias(qw, layer.bq)?;
    let kw = tape.matmul(x, layer.wk)?;
    let k = tape.add_bias(kw, layer.bk)?;
    let vw = tape.matmul(x, layer.wv)?;
    let v = tape.add_bias(vw, layer.bv)?;

    let bias = mask_bias(tape, n, mask);
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut heads = Vec::with_capacity(num_heads);
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = tape.narrow(q, 1, h * d_head, d_head)?;
        let kh = tape.narrow(k, 1, h * d_head, d_head)?;
        let vh = tape.narrow(v, 1, h * d_head, d_head)?;
        let kt = tape.transpose(kh)?;
        let raw = tape.matmul(qh, kt)?;
        let scaled = tape.scale(raw, scale);
        let masked = tape.add(scaled, bias)?;
        let p = tape.softmax(masked, 1)?;
        let out = tape.matmul(p, vh)?;
        heads.push(out);
        probs.push(p);
    }
    let merged = tape.concat(&heads, 1)?;
    let projected = tape.matmul(merged, layer.wo)?;
    let out = tape.add_bias(projected, layer.bo)?;
    Ok((out, probs))
}

/// Scores = QKᵀ/√(d_model/A); padded keys are pushed to [`MASK_SCORE`]
/// before softmax; heads are concatenated and output-projected.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    layer: &BoundLayer,
    mask: &[u8],
    num_heads: usize,
) -> Result<Var> {
    multi_head_attention_with_probs(tape, x, layer, mask, num_heads).map(|(out, _)| out)
}

/// Post-norm encoder layer: LayerNorm(X + Attn(X)), then LayerNorm of that
/// plus a relu feed-forward pair.
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    layer: &BoundLayer,
    mask: &[u8],
    config: &EncoderConfig,
    mode: &mut Mode,
) -> Result<Var> {
    let attn = multi_head_attention(tape, x, layer, mask, config.num_heads)?;
    let attn = dropout(tape, attn, config.dropout_rate, mode)?;
    let res1 = tape.add(x, attn)?;
    let h1 = tape.layer_norm(res1, layer.ln1_gamma, layer.ln1_beta)?;

    let ff_in = tape.matmul(h1, layer.ff_w1)?;
    let ff_in = tape.add_bias(ff_in, layer.ff_b1)?;
    let ff_act = tape.relu(ff_in);
    let ff_out = tape.matmul(ff_act, layer.ff_w2)?;
    let ff_out = tape.add_bias(ff_out, layer.ff_b2)?;
    let ff_out = dropout(tape, ff_out, config.dropout_rate, mode)?;
    let res2 = tape.add(h1, ff_out)?;
    tape.layer_norm(res2, layer.ln2_gamma, layer.ln2_beta)
}

/// Embedding sum through all encoder layers; row i of the result is the
/// final-layer feature C_i (row 0 belongs to `[CLS]`).
pub fn encode_sequence(
    tape: &mut Tape,
    enc: &BoundEncoder,
    example: &EncodedExample,
    config: &EncoderConfig,
    mode: &mut Mode,
) -> Result<Var> {
    let mut x = embed(tape, enc, example)?;
    x = dropout(tape, x, config.dropout_rate, mode)?;
    for layer in &enc.layers {
        x = encoder_layer(tape, x, layer, &example.attention_mask, config, mode)?;
    }
    Ok(x)
}

/// Cross-entropy of the MLM projection against the original ids, averaged
/// over target positions only.
pub fn mlm_loss(
    tape: &mut Tape,
    enc: &BoundEncoder,
    batch: &[(EncodedExample, Vec<MlmTarget>)],
    config: &EncoderConfig,
    mode: &mut Mode,
) -> Result<Var> {
    let mut logit_rows = Vec::new();
    let mut labels = Vec::new();
    for (example, targets) in batch {
        if targets.is_empty() {
            return Err(Error::EmptyInput("mlm targets"));
        }
        let c = encode_sequence(tape, enc, example, config, mode)?;
        let positions: Vec<usize> = targets.iter().map(|t| t.position).collect();
        let rows = tape.gather_rows(c, &positions)?;
        let proj = tape.matmul(rows, enc.mlm_w)?;
        let logits = tape.add_bias(proj, enc.mlm_b)?;
        logit_rows.push(logits);
        labels.extend(targets.iter().map(|t| t.original_id));
    }
    if logit_rows.is_empty() {
        return Err(Error::EmptyInput("mlm batch"));
    }
    let all = tape.concat(&logit_rows, 0)?;
    let probs = tape.softmax(all, 1)?;
    tape.cross_entropy(probs, &labels)
}

/// Fraction of correctly recovered target ids under argmax prediction.
pub fn mlm_top1_accuracy(
    params: &EncoderParams,
    batch: &[(EncodedExample, Vec<MlmTarget>)],
    config: &EncoderConfig,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (example, targets) in batch {
        let mut tape = Tape::new();
        let enc = params.bind(&mut tape);
        let c = encode_sequence(&mut tape, &enc, example, config, &mut Mode::Eval)?;
        let positions: Vec<usize> = targets.iter().map(|t| t.position).collect();
        let rows = tape.gather_rows(c, &positions)?;
        let proj = tape.matmul(rows, enc.mlm_w)?;
        let logits = tape.add_bias(proj, enc.mlm_b)?;
        let v = tape.value(logits);
        let vocab = config.vocab_size;
        for (r, t) in targets.iter().enumerate() {
            let row = &v[r * vocab..(r + 1) * vocab];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            hits += usize::from(argmax == t.original_id);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("mlm targets"));
    }
    Ok(hits as f64 / total as f64)
}

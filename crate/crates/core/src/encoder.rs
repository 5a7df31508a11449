//! Tokenization and a small trainable sequence encoder.
//!
//! Inputs are built as `[CLS] claim [SEP] evidence…` id sequences; the
//! encoder is a pre-norm transformer with learned token, position, and
//! segment embeddings. It returns per-token representations `U` and a
//! pooled vector `p = tanh(affine(U[0]))` that downstream heads consume.
//! Both come back as tape variables so training can differentiate through
//! the whole stack.

use crate::tensorkit::{Params, Rng, Tape, Tensor, TensorError, VarId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("claim text produced no tokens")]
    EmptyClaim,
    #[error("input of {len} ids exceeds the maximum sequence length {t_max}")]
    TooLong { len: usize, t_max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    BadTokenId { id: usize, vocab: usize },
    #[error("segment id {0} outside {{0, 1}}")]
    BadSegmentId(usize),
    #[error("input ids and segment ids differ in length: {ids} vs {segments}")]
    SegmentMismatch { ids: usize, segments: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
    #[error("vocab file {path}: {detail}")]
    VocabFile { path: String, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

// ── Vocabulary ───────────────────────────────────────────────────────────────

pub const CLS_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const PAD_ID: usize = 2;
pub const UNK_ID: usize = 3;
const N_SPECIALS: usize = 4;

/// Lowercased surface tokens: alphanumeric runs, with every other
/// non-whitespace character standing alone.
pub fn surface_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            run.extend(c.to_lowercase());
        } else {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

/// Token → dense id map. Ids 0–3 are [CLS], [SEP], [PAD], [UNK]; corpus
/// tokens start at 4 in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Collect every surface token appearing in `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut set: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        for text in texts {
            for t in surface_tokens(text) {
                set.insert(t);
            }
        }
        let tokens: Vec<String> = set.into_iter().collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), N_SPECIALS + i))
            .collect();
        Vocab { ids, tokens }
    }

    /// Total vocabulary size including the four specials.
    pub fn len(&self) -> usize {
        N_SPECIALS + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> usize {
        *self.ids.get(token).unwrap_or(&UNK_ID)
    }

    /// Ids for a text; unknown tokens map to [UNK], specials are never
    /// produced here.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        surface_tokens(text).iter().map(|t| self.id_of(t)).collect()
    }

    /// Token-per-line sidecar format; line number + 4 is the id.
    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let body = self.tokens.join("\n") + "\n";
        crate::tensorkit::write_atomic(path, body.as_bytes()).map_err(|e| {
            EncoderError::VocabFile {
                path: path.display().to_string(),
                detail: e.to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Vocab, EncoderError> {
        let body = std::fs::read_to_string(path).map_err(|e| EncoderError::VocabFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let tokens: Vec<String> = body.lines().map(|l| l.to_string()).collect();
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || ids.insert(t.clone(), N_SPECIALS + i).is_some() {
                return Err(EncoderError::VocabFile {
                    path: path.display().to_string(),
                    detail: format!("line {} is empty or repeated", i + 1),
                });
            }
        }
        Ok(Vocab { ids, tokens })
    }
}

// ── Input assembly ───────────────────────────────────────────────────────────

/// A ready-to-encode id sequence with its segment markers (0 for the
/// claim block, 1 for everything after the first separator).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
}

/// Shared assembly: [CLS] claim [SEP] seg₁ seg₂ [SEP]? with the tail
/// truncated segment-by-segment from the end until the budget fits. The
/// claim is only cut when it alone exceeds the budget.
fn assemble(
    vocab: &Vocab,
    t_max: usize,
    claim: &str,
    seg1: &str,
    seg2: Option<&str>,
    trailing_sep: bool,
) -> Result<EncoderInput, EncoderError> {
    let mut claim_ids = vocab.tokenize(claim);
    if claim_ids.is_empty() {
        return Err(EncoderError::EmptyClaim);
    }
    let n_specials = 2 + usize::from(trailing_sep);
    let budget = t_max - n_specials;
    let mut seg1_ids = vocab.tokenize(seg1);
    let mut seg2_ids = seg2.map(|s| vocab.tokenize(s)).unwrap_or_default();
    if claim_ids.len() > budget {
        claim_ids.truncate(budget);
        seg1_ids.clear();
        seg2_ids.clear();
    } else {
        let room = budget - claim_ids.len();
        if seg1_ids.len() > room {
            seg1_ids.truncate(room);
            seg2_ids.clear();
        } else if seg1_ids.len() + seg2_ids.len() > room {
            seg2_ids.truncate(room - seg1_ids.len());
        }
    }
    let mut ids = Vec::with_capacity(t_max);
    let mut segments = Vec::with_capacity(t_max);
    ids.push(CLS_ID);
    ids.extend(&claim_ids);
    ids.push(SEP_ID);
    segments.resize(ids.len(), 0);
    ids.extend(&seg1_ids);
    ids.extend(&seg2_ids);
    if trailing_sep {
        ids.push(SEP_ID);
    }
    segments.resize(ids.len(), 1);
    Ok(EncoderInput { ids, segments })
}

/// Retrieval scoring input: [CLS] claim [SEP] sentence.
pub fn build_pair_input(
    vocab: &Vocab,
    t_max: usize,
    claim: &str,
    sentence: &str,
) -> Result<EncoderInput, EncoderError> {
    assemble(vocab, t_max, claim, sentence, None, false)
}

/// Second-iteration input: [CLS] claim [SEP] root expansion — the
/// expansion candidate follows the root sentence with no separator.
pub fn build_triple_input(
    vocab: &Vocab,
    t_max: usize,
    claim: &str,
    root: &str,
    expansion: &str,
) -> Result<EncoderInput, EncoderError> {
    assemble(vocab, t_max, claim, root, Some(expansion), false)
}

/// Verification input: [CLS] claim [SEP] evidence [SEP], where `evidence`
/// is the flattened sentence text of one evidence set.
pub fn build_verify_input(
    vocab: &Vocab,
    t_max: usize,
    claim: &str,
    evidence: &str,
) -> Result<EncoderInput, EncoderError> {
    assemble(vocab, t_max, claim, evidence, None, true)
}

// ── Transformer block ────────────────────────────────────────────────────────

/// Normalize, then apply the learned gain and bias stored under the given
/// full parameter names.
fn named_layer_norm(
    tape: &mut Tape,
    params: &Params,
    x: VarId,
    gain: &str,
    bias: &str,
) -> Result<VarId, TensorError> {
    let g = tape.param(params, gain)?;
    let b = tape.param(params, bias)?;
    let normed = tape.layer_norm(x)?;
    let scaled = tape.mul_bias(normed, g)?;
    tape.add_bias(scaled, b)
}

/// Initialize one pre-norm transformer block's parameters under `prefix`
/// (e.g. `enc.l0`): unit layer-norm gains, Glorot projections, zero biases.
pub fn init_block_params(params: &mut Params, prefix: &str, d: usize, rng: &mut Rng) {
    let p = |s: &str| format!("{prefix}.{s}");
    let ffn = 4 * d;
    params.insert_filled(p("ln1.gain"), &[1, d], 1.0);
    params.insert_zeros(p("ln1.bias"), &[1, d]);
    params.insert_glorot(p("attn.wq"), d, d, rng);
    params.insert_glorot(p("attn.wk"), d, d, rng);
    params.insert_glorot(p("attn.wv"), d, d, rng);
    params.insert_glorot(p("attn.wo"), d, d, rng);
    params.insert_zeros(p("attn.bo"), &[1, d]);
    params.insert_filled(p("ln2.gain"), &[1, d], 1.0);
    params.insert_zeros(p("ln2.bias"), &[1, d]);
    params.insert_glorot(p("ffn.w1"), d, ffn, rng);
    params.insert_zeros(p("ffn.b1"), &[1, ffn]);
    params.insert_glorot(p("ffn.w2"), ffn, d, rng);
    params.insert_zeros(p("ffn.b2"), &[1, d]);
}

/// One pre-norm transformer block on the tape: multi-head self-attention
/// with a residual connection, then a GELU feed-forward with a residual.
/// `heads` must divide `d`. When `capture` is given, each head's attention
/// matrix (rows: queries, cols: keys) is copied out for inspection.
pub fn block_on_tape(
    tape: &mut Tape,
    params: &Params,
    prefix: &str,
    x: VarId,
    d: usize,
    heads: usize,
    mut capture: Option<&mut Vec<Tensor>>,
) -> Result<VarId, EncoderError> {
    let p = |s: &str| format!("{prefix}.{s}");
    let dh = d / heads;
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

    let a_in = named_layer_norm(tape, params, x, &p("ln1.gain"), &p("ln1.bias"))?;
    let wq = tape.param(params, &p("attn.wq"))?;
    let wk = tape.param(params, &p("attn.wk"))?;
    let wv = tape.param(params, &p("attn.wv"))?;
    let q = tape.matmul(a_in, wq)?;
    let k = tape.matmul(a_in, wk)?;
    let v = tape.matmul(a_in, wv)?;
    let mut merged_heads = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let raw = tape.matmul(qh, kt)?;
        let scores = tape.scale(raw, inv_sqrt_dh)?;
        let attn = tape.softmax(scores)?;
        if let Some(sink) = capture.as_deref_mut() {
            sink.push(tape.value(attn).clone());
        }
        merged_heads.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&merged_heads)?;
    let wo = tape.param(params, &p("attn.wo"))?;
    let bo = tape.param(params, &p("attn.bo"))?;
    let mixed = tape.matmul(merged, wo)?;
    let projected = tape.add_bias(mixed, bo)?;
    let x = tape.add(x, projected)?;

    let f_in = named_layer_norm(tape, params, x, &p("ln2.gain"), &p("ln2.bias"))?;
    let w1 = tape.param(params, &p("ffn.w1"))?;
    let b1 = tape.param(params, &p("ffn.b1"))?;
    let w2 = tape.param(params, &p("ffn.w2"))?;
    let b2 = tape.param(params, &p("ffn.b2"))?;
    let pre1 = tape.matmul(f_in, w1)?;
    let act_in = tape.add_bias(pre1, b1)?;
    let hidden = tape.gelu(act_in)?;
    let pre2 = tape.matmul(hidden, w2)?;
    let ffn_out = tape.add_bias(pre2, b2)?;
    Ok(tape.add(x, ffn_out)?)
}

// ── Encoder ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding and hidden width.
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub t_max: usize,
    pub vocab: usize,
}

impl EncoderConfig {
    pub fn small(vocab: usize) -> EncoderConfig {
        EncoderConfig {
            d: 64,
            layers: 2,
            heads: 4,
            t_max: 128,
            vocab,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(EncoderError::BadConfig(format!(
                "width {} must be a positive multiple of {} heads",
                self.d, self.heads
            )));
        }
        if self.t_max < 8 {
            return Err(EncoderError::BadConfig(format!(
                "maximum sequence length {} is below 8",
                self.t_max
            )));
        }
        if self.vocab < N_SPECIALS {
            return Err(EncoderError::BadConfig(format!(
                "vocab size {} cannot hold the {N_SPECIALS} special tokens",
                self.vocab
            )));
        }
        Ok(())
    }

    pub fn ffn_width(&self) -> usize {
        4 * self.d
    }

    pub fn head_width(&self) -> usize {
        self.d / self.heads
    }
}

/// Value-space encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// Per-token representations, one row per input id.
    pub u: Tensor,
    /// Pooled representation of the first ([CLS]) row.
    pub p: Tensor,
}

/// Tape-space encoder output for training.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub u: VarId,
    pub p: VarId,
}

/// Transformer encoder over a parameter set with the given name prefix.
/// The same struct serves the retriever and verifier models, which own
/// disjoint parameter maps.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    prefix: String,
}

impl Encoder {
    pub fn new(config: EncoderConfig, prefix: impl Into<String>) -> Result<Encoder, EncoderError> {
        config.validate()?;
        Ok(Encoder {
            config,
            prefix: prefix.into(),
        })
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    /// Insert freshly initialized parameters: Glorot matrices, zero biases,
    /// unit layer-norm gains.
    pub fn init_params(&self, params: &mut Params, rng: &mut Rng) {
        let c = &self.config;
        params.insert_glorot(self.name("emb.tok"), c.vocab, c.d, rng);
        params.insert_glorot(self.name("emb.pos"), c.t_max, c.d, rng);
        params.insert_glorot(self.name("emb.seg"), 2, c.d, rng);
        for l in 0..c.layers {
            init_block_params(params, &self.name(&format!("l{l}")), c.d, rng);
        }
        params.insert_filled(self.name("final_ln.gain"), &[1, c.d], 1.0);
        params.insert_zeros(self.name("final_ln.bias"), &[1, c.d]);
        params.insert_glorot(self.name("pool.w"), c.d, c.d, rng);
        params.insert_zeros(self.name("pool.b"), &[1, c.d]);
    }

    fn validate_input(&self, input: &EncoderInput) -> Result<(), EncoderError> {
        if input.ids.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        if input.ids.len() != input.segments.len() {
            return Err(EncoderError::SegmentMismatch {
                ids: input.ids.len(),
                segments: input.segments.len(),
            });
        }
        if input.ids.len() > self.config.t_max {
            return Err(EncoderError::TooLong {
                len: input.ids.len(),
                t_max: self.config.t_max,
            });
        }
        if let Some(&id) = input.ids.iter().find(|&&id| id >= self.config.vocab) {
            return Err(EncoderError::BadTokenId {
                id,
                vocab: self.config.vocab,
            });
        }
        if let Some(&s) = input.segments.iter().find(|&&s| s > 1) {
            return Err(EncoderError::BadSegmentId(s));
        }
        Ok(())
    }

    /// Normalize, then apply learned gain and bias.
    fn layer_norm(
        &self,
        tape: &mut Tape,
        params: &Params,
        x: VarId,
        gain: &str,
        bias: &str,
    ) -> Result<VarId, TensorError> {
        named_layer_norm(tape, params, x, &self.name(gain), &self.name(bias))
    }

    /// Forward pass on a tape. When `capture` is given, each layer's
    /// per-head attention matrices (rows: queries, cols: keys) are copied
    /// out for inspection.
    pub fn encode_on_tape_capturing(
        &self,
        tape: &mut Tape,
        params: &Params,
        input: &EncoderInput,
        mut capture: Option<&mut Vec<Tensor>>,
    ) -> Result<EncodedVars, EncoderError> {
        self.validate_input(input)?;
        let c = &self.config;
        let t = input.ids.len();
        let positions: Vec<usize> = (0..t).collect();

        let tok_table = tape.param(params, &self.name("emb.tok"))?;
        let pos_table = tape.param(params, &self.name("emb.pos"))?;
        let seg_table = tape.param(params, &self.name("emb.seg"))?;
        let tok = tape.embed(tok_table, &input.ids)?;
        let pos = tape.embed(pos_table, &positions)?;
        let seg = tape.embed(seg_table, &input.segments)?;
        let tok_pos = tape.add(tok, pos)?;
        let mut x = tape.add(tok_pos, seg)?;

        for l in 0..c.layers {
            x = block_on_tape(
                tape,
                params,
                &self.name(&format!("l{l}")),
                x,
                c.d,
                c.heads,
                capture.as_deref_mut(),
            )?;
        }

        let u = self.layer_norm(tape, params, x, "final_ln.gain", "final_ln.bias")?;
        let first = tape.slice_rows(u, 0, 1)?;
        let pw = tape.param(params, &self.name("pool.w"))?;
        let pb = tape.param(params, &self.name("pool.b"))?;
        let pooled = tape.matmul(first, pw)?;
        let shifted = tape.add_bias(pooled, pb)?;
        let squashed = tape.tanh(shifted)?;
        let p = tape.reshape(squashed, &[c.d])?;
        Ok(EncodedVars { u, p })
    }

    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        params: &Params,
        input: &EncoderInput,
    ) -> Result<EncodedVars, EncoderError> {
        self.encode_on_tape_capturing(tape, params, input, None)
    }

    /// Convenience value-space encode on a throwaway tape.
    pub fn encode(&self, params: &Params, input: &EncoderInput) -> Result<EncoderOutput, EncoderError> {
        let mut tape = Tape::new();
        let vars = self.encode_on_tape(&mut tape, params, input)?;
        Ok(EncoderOutput {
            u: tape.value(vars.u).clone(),
            p: tape.value(vars.p).clone(),
        })
    }

    /// Value-space encode that also returns every layer's per-head
    /// attention matrix, outer index layer-major then head.
    pub fn encode_with_attention(
        &self,
        params: &Params,
        input: &EncoderInput,
    ) -> Result<(EncoderOutput, Vec<Tensor>), EncoderError> {
        let mut tape = Tape::new();
        let mut captured = Vec::new();
        let vars = self.encode_on_tape_capturing(&mut tape, params, input, Some(&mut captured))?;
        Ok((
            EncoderOutput {
                u: tape.value(vars.u).clone(),
                p: tape.value(vars.p).clone(),
            },
            captured,
        ))
    }
}

//! Hierarchical verification of claims against retrieved evidence sets.
//!
//! Each evidence set is scored on its own by a shared transformer encoder
//! reading `[CLS] claim [SEP] sentences [SEP]`, yielding a per-set verdict
//! logit triple. Two aggregation paths then weigh the sets against each
//! other: a noncontextual path that attention-pools the per-set logits
//! using the pooled encodings as queries, and a contextual path that lets
//! compressed set vectors exchange information through a small
//! position-free transformer before a linear head reads off combined
//! logits. Learned scalar gates mix the two paths into the final verdict.
//!
//! Alternative aggregators over the same per-set scores — top-ranked set,
//! a logical rule over per-set labels, an MLP on per-set probabilities,
//! flattening all evidence into one set, and claim-guided attention
//! pooling — share the encoder and serve as comparison points.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dataset, Label};
use crate::encoder::{
    block_on_tape, build_pair_input, build_verify_input, init_block_params, Encoder, EncoderConfig,
    EncoderError, Vocab,
};
use crate::hopretrieve::RetrievalRecord;
use crate::tensorkit::{
    AdamW, AdamWConfig, Params, Rng, Tape, Tensor, TensorError, VarId,
};

// ── Errors ───────────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid verifier input: {0}")]
    Invalid(String),
    #[error("an evidence set must contain at least one sentence")]
    EmptyEvidenceSet,
    #[error("{got} evidence sets exceed the configured maximum of {limit}")]
    TooManySets { got: usize, limit: usize },
}

// ── Aggregators ──────────────────────────────────────────────────────────────

/// How per-set verdicts are merged into one claim-level verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    /// Both attention paths combined through the learned gates.
    Hesm,
    /// Verdict of the top-ranked set alone.
    Top1,
    /// First set (in rank order) voting SUPPORTED or REFUTED wins; NEI
    /// only when no set takes a side.
    Logical,
    /// One hidden-layer MLP over the concatenated per-set probabilities.
    Mlp,
    /// All retrieved sentences flattened into a single set.
    Concat,
    /// Claim-guided attention pooling over the compressed set vectors.
    Attn,
}

impl Aggregator {
    pub const ALL: [Aggregator; 6] = [
        Aggregator::Hesm,
        Aggregator::Top1,
        Aggregator::Logical,
        Aggregator::Mlp,
        Aggregator::Concat,
        Aggregator::Attn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregator::Hesm => "hesm",
            Aggregator::Top1 => "top1",
            Aggregator::Logical => "logical",
            Aggregator::Mlp => "mlp",
            Aggregator::Concat => "concat",
            Aggregator::Attn => "attn",
        }
    }

    pub fn parse(s: &str) -> Option<Aggregator> {
        Aggregator::ALL.iter().copied().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ── Configuration ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub encoder: EncoderConfig,
    /// Transformer layers in the position-free set encoder.
    pub set_layers: usize,
    /// Largest number of evidence sets a claim may carry; sizes the MLP
    /// aggregator head.
    pub max_sets: usize,
}

impl VerifierConfig {
    /// Desk-scale defaults around the given vocabulary size: two set-encoder
    /// layers over at most three sets.
    pub fn small(vocab: usize) -> VerifierConfig {
        VerifierConfig {
            encoder: EncoderConfig::small(vocab),
            set_layers: 2,
            max_sets: 3,
        }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        self.encoder.validate()?;
        if self.max_sets == 0 {
            return Err(VerifyError::Invalid(
                "max_sets must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

// ── Attention-sum pooling ────────────────────────────────────────────────────

/// Additive attention pooling: rows of `q` are projected (`wq`, `bq`),
/// scored against the learned direction `uq`, softmax-normalized, and the
/// weights combine the rows of `v`. Returns the pooled row `[1 x C_v]` and
/// the weight row `[1 x R]`, which sums to one by construction.
pub fn attention_sum_on_tape(
    tape: &mut Tape,
    params: &Params,
    prefix: &str,
    q: VarId,
    v: VarId,
) -> Result<(VarId, VarId), VerifyError> {
    let rows = tape.value(q).shape()[0];
    if tape.value(v).shape()[0] != rows {
        return Err(VerifyError::Invalid(format!(
            "attention query has {rows} rows but values have {}",
            tape.value(v).shape()[0]
        )));
    }
    let wq = tape.param(params, &format!("{prefix}.wq"))?;
    let bq = tape.param(params, &format!("{prefix}.bq"))?;
    let uq = tape.param(params, &format!("{prefix}.uq"))?;
    let proj = tape.matmul(q, wq)?;
    let feat = tape.add_bias(proj, bq)?;
    let scores = tape.matmul(feat, uq)?;
    let scores_row = tape.transpose(scores)?;
    let weights = tape.softmax(scores_row)?;
    let pooled = tape.matmul(weights, v)?;
    Ok((pooled, weights))
}

// ── Model ────────────────────────────────────────────────────────────────────

#[derive(Clone)]
pub struct VerifierModel {
    pub config: VerifierConfig,
    pub vocab: Vocab,
    pub params: Params,
    pub encoder: Encoder,
}

impl VerifierModel {
    /// Fresh model with seeded Glorot weights and both path gates at 0.5.
    pub fn init(
        config: VerifierConfig,
        vocab: Vocab,
        seed: u64,
    ) -> Result<VerifierModel, VerifyError> {
        config.validate()?;
        if config.encoder.vocab != vocab.len() {
            return Err(VerifyError::Invalid(format!(
                "encoder vocab size {} does not match vocabulary size {}",
                config.encoder.vocab,
                vocab.len()
            )));
        }
        let encoder = Encoder::new(config.encoder, "enc")?;
        let mut params = Params::default();
        let mut rng = Rng::for_stream(seed, "verifier-init");
        let d = config.encoder.d;
        encoder.init_params(&mut params, &mut rng);
        params.insert_glorot("wattn.wq", d, d, &mut rng);
        params.insert_zeros("wattn.bq", &[1, d]);
        params.insert_glorot("wattn.uq", d, 1, &mut rng);
        params.insert_glorot("wlogit.w", d, 3, &mut rng);
        params.insert_zeros("wlogit.b", &[1, 3]);
        for l in 0..config.set_layers {
            init_block_params(&mut params, &format!("setenc.l{l}"), d, &mut rng);
        }
        params.insert_glorot("cattn.wq", d, d, &mut rng);
        params.insert_zeros("cattn.bq", &[1, d]);
        params.insert_glorot("cattn.uq", d, 1, &mut rng);
        params.insert_glorot("chead.w", d, 3, &mut rng);
        params.insert_zeros("chead.b", &[1, 3]);
        params.insert_glorot("ncattn.wq", d, d, &mut rng);
        params.insert_zeros("ncattn.bq", &[1, d]);
        params.insert_glorot("ncattn.uq", d, 1, &mut rng);
        let width = 3 * config.max_sets;
        params.insert_glorot("mlp.w1", width, width, &mut rng);
        params.insert_zeros("mlp.b1", &[1, width]);
        params.insert_glorot("mlp.w2", width, 3, &mut rng);
        params.insert_zeros("mlp.b2", &[1, 3]);
        params.insert_glorot("attnagg.w", 2 * d, 3, &mut rng);
        params.insert_zeros("attnagg.b", &[1, 3]);
        params.insert_filled("beta.c", &[1, 1], 0.5);
        params.insert_filled("beta.nc", &[1, 1], 0.5);
        Ok(VerifierModel {
            config,
            vocab,
            params,
            encoder,
        })
    }

    /// Copy every word-encoder tensor (the `enc.` subtree) from a donor
    /// parameter set — typically a trained retriever — leaving this model's
    /// own attention and head weights fresh. The donor must share this
    /// model's vocabulary and encoder geometry. Returns the number of
    /// tensors copied.
    pub fn adopt_encoder(
        &mut self,
        donor_vocab: &Vocab,
        donor: &Params,
    ) -> Result<usize, VerifyError> {
        if donor_vocab != &self.vocab {
            return Err(VerifyError::Invalid(
                "encoder donor was built with a different vocabulary".into(),
            ));
        }
        let names: Vec<String> = self
            .params
            .names()
            .filter(|n| n.starts_with("enc."))
            .map(str::to_string)
            .collect();
        for name in &names {
            let source = donor.get(name).map_err(|_| {
                VerifyError::Invalid(format!("encoder donor has no tensor {name}"))
            })?;
            let target = self.params.get_mut(name).expect("name came from this set");
            if source.value.shape() != target.value.shape() {
                return Err(VerifyError::Invalid(format!(
                    "encoder donor tensor {name} has shape {:?}, expected {:?}",
                    source.value.shape(),
                    target.value.shape()
                )));
            }
            target.value = source.value.clone();
        }
        Ok(names.len())
    }

    /// Rebuild a model around previously trained parameters.
    pub fn from_parts(
        config: VerifierConfig,
        vocab: Vocab,
        params: Params,
    ) -> Result<VerifierModel, VerifyError> {
        config.validate()?;
        if config.encoder.vocab != vocab.len() {
            return Err(VerifyError::Invalid(format!(
                "encoder vocab size {} does not match vocabulary size {}",
                config.encoder.vocab,
                vocab.len()
            )));
        }
        for name in ["wattn.uq", "wlogit.w", "cattn.uq", "ncattn.uq", "beta.c", "beta.nc"] {
            params.get(name).map_err(VerifyError::Tensor)?;
        }
        let encoder = Encoder::new(config.encoder, "enc")?;
        Ok(VerifierModel {
            config,
            vocab,
            params,
            encoder,
        })
    }

    // ── Per-set scoring ──────────────────────────────────────────────────

    /// Encode one evidence set against the claim: token matrix `u`, pooled
    /// row `p`, word-attention summary `s`, and the set's verdict logits
    /// `l`, all as tape variables.
    fn esm_on_tape(
        &self,
        tape: &mut Tape,
        claim: &str,
        sentences: &[String],
    ) -> Result<EsmVars, VerifyError> {
        if sentences.is_empty() {
            return Err(VerifyError::EmptyEvidenceSet);
        }
        let evidence = sentences.join(" ");
        let input = build_verify_input(
            &self.vocab,
            self.config.encoder.t_max,
            claim,
            &evidence,
        )?;
        let enc = self.encoder.encode_on_tape(tape, &self.params, &input)?;
        let p_row = tape.reshape(enc.p, &[1, self.config.encoder.d])?;
        let (s, word_weights) =
            attention_sum_on_tape(tape, &self.params, "wattn", enc.u, enc.u)?;
        let ww = tape.param(&self.params, "wlogit.w")?;
        let wb = tape.param(&self.params, "wlogit.b")?;
        let proj = tape.matmul(p_row, ww)?;
        let l = tape.add_bias(proj, wb)?;
        Ok(EsmVars {
            u: enc.u,
            p: p_row,
            s,
            l,
            word_weights,
        })
    }

    /// Score a single evidence set and return plain tensors.
    pub fn esm_block(
        &self,
        claim: &str,
        sentences: &[String],
    ) -> Result<EsmOutput, VerifyError> {
        let mut tape = Tape::new();
        let vars = self.esm_on_tape(&mut tape, claim, sentences)?;
        Ok(EsmOutput {
            u: tape.value(vars.u).clone(),
            p: tape.value(vars.p).clone(),
            s: tape.value(vars.s).clone(),
            l: tape.value(vars.l).clone(),
            word_weights: tape.value(vars.word_weights).clone(),
        })
    }

    // ── Aggregation paths ────────────────────────────────────────────────

    /// Attention over per-set logits, queried by the pooled encodings.
    /// `p_rows` and `l_rows` must pair up one row per set. Returns the
    /// combined logits `[1 x 3]` and the set weights `[1 x J]`.
    pub fn noncontextual_on_tape(
        &self,
        tape: &mut Tape,
        p_rows: &[VarId],
        l_rows: &[VarId],
    ) -> Result<(VarId, VarId), VerifyError> {
        if p_rows.is_empty() {
            return Err(VerifyError::EmptyEvidenceSet);
        }
        if p_rows.len() != l_rows.len() {
            return Err(VerifyError::Invalid(format!(
                "{} pooled rows but {} logit rows",
                p_rows.len(),
                l_rows.len()
            )));
        }
        let pooled = tape.concat_rows(p_rows)?;
        let logits = tape.concat_rows(l_rows)?;
        attention_sum_on_tape(tape, &self.params, "ncattn", pooled, logits)
    }

    /// Set-level transformer over the compressed set vectors, followed by
    /// attention pooling and a linear verdict head. Returns the combined
    /// logits `[1 x 3]` and the set weights `[1 x J]`.
    pub fn contextual_on_tape(
        &self,
        tape: &mut Tape,
        s_rows: &[VarId],
    ) -> Result<(VarId, VarId), VerifyError> {
        if s_rows.is_empty() {
            return Err(VerifyError::EmptyEvidenceSet);
        }
        let mut m = tape.concat_rows(s_rows)?;
        for l in 0..self.config.set_layers {
            m = block_on_tape(
                tape,
                &self.params,
                &format!("setenc.l{l}"),
                m,
                self.config.encoder.d,
                self.config.encoder.heads,
                None,
            )?;
        }
        let (k, weights) = attention_sum_on_tape(tape, &self.params, "cattn", m, m)?;
        let hw = tape.param(&self.params, "chead.w")?;
        let hb = tape.param(&self.params, "chead.b")?;
        let proj = tape.matmul(k, hw)?;
        let logits = tape.add_bias(proj, hb)?;
        Ok((logits, weights))
    }

    /// Full two-path forward pass. Aggregation runs over the sets in a
    /// canonical text order so that reordering the input sets cannot change
    /// any floating-point sum; outputs are reported in input order.
    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        claim: &str,
        sets: &[Vec<String>],
    ) -> Result<ForwardVars, VerifyError> {
        if sets.is_empty() {
            return Err(VerifyError::EmptyEvidenceSet);
        }
        let per_set: Vec<EsmVars> = sets
            .iter()
            .map(|s| self.esm_on_tape(tape, claim, s))
            .collect::<Result<_, _>>()?;
        let order = canonical_order(sets);
        let p_rows: Vec<VarId> = order.iter().map(|&i| per_set[i].p).collect();
        let l_rows: Vec<VarId> = order.iter().map(|&i| per_set[i].l).collect();
        let s_rows: Vec<VarId> = order.iter().map(|&i| per_set[i].s).collect();
        let (l_nc, nc_weights) = self.noncontextual_on_tape(tape, &p_rows, &l_rows)?;
        let (l_c, c_weights) = self.contextual_on_tape(tape, &s_rows)?;
        let beta_c = tape.param(&self.params, "beta.c")?;
        let beta_nc = tape.param(&self.params, "beta.nc")?;
        let gated_c = tape.scale_var(l_c, beta_c)?;
        let gated_nc = tape.scale_var(l_nc, beta_nc)?;
        let combined = tape.add(gated_c, gated_nc)?;
        Ok(ForwardVars {
            per_set,
            order,
            l_nc,
            l_c,
            combined,
            nc_weights,
            c_weights,
        })
    }

    // ── Prediction ───────────────────────────────────────────────────────

    /// Verdict for a claim given its evidence sets in rank order. No sets
    /// means no grounds to decide: the verdict is NEI with no logits.
    pub fn predict(&self, claim: &str, sets: &[Vec<String>]) -> Result<VerdictBundle, VerifyError> {
        if sets.is_empty() {
            return Ok(VerdictBundle::undecided());
        }
        let mut tape = Tape::new();
        let fwd = self.forward_on_tape(&mut tape, claim, sets)?;
        let logits = row3(tape.value(fwd.combined));
        Ok(VerdictBundle {
            label: argmax_label(&logits),
            logits: Some(logits),
            per_set_logits: fwd.per_set.iter().map(|v| row3(tape.value(v.l))).collect(),
            l_c: Some(row3(tape.value(fwd.l_c))),
            l_nc: Some(row3(tape.value(fwd.l_nc))),
            contextual_weights: Some(input_order_weights(
                tape.value(fwd.c_weights),
                &fwd.order,
            )),
            noncontextual_weights: Some(input_order_weights(
                tape.value(fwd.nc_weights),
                &fwd.order,
            )),
        })
    }

    /// Verdict under the chosen aggregator. Sets must arrive in rank order
    /// (highest-scoring first), as the retrieval stage emits them.
    pub fn predict_with(
        &self,
        aggregator: Aggregator,
        claim: &str,
        sets: &[Vec<String>],
    ) -> Result<VerdictBundle, VerifyError> {
        if sets.is_empty() {
            return Ok(VerdictBundle::undecided());
        }
        match aggregator {
            Aggregator::Hesm => self.predict(claim, sets),
            Aggregator::Top1 => {
                let (per_set, _) = self.score_sets(claim, sets)?;
                let logits = per_set[0];
                Ok(VerdictBundle {
                    label: argmax_label(&logits),
                    logits: Some(logits),
                    per_set_logits: per_set,
                    ..VerdictBundle::undecided()
                })
            }
            Aggregator::Logical => {
                let (per_set, _) = self.score_sets(claim, sets)?;
                let votes: Vec<Label> = per_set.iter().map(argmax_label).collect();
                let label = logical_verdict(&votes);
                Ok(VerdictBundle {
                    label,
                    per_set_logits: per_set,
                    ..VerdictBundle::undecided()
                })
            }
            Aggregator::Mlp => {
                let mut tape = Tape::new();
                let vars = self.sets_on_tape(&mut tape, claim, sets)?;
                let out = self.mlp_logits_on_tape(&mut tape, &vars)?;
                let logits = row3(tape.value(out));
                Ok(VerdictBundle {
                    label: argmax_label(&logits),
                    logits: Some(logits),
                    per_set_logits: vars.iter().map(|v| row3(tape.value(v.l))).collect(),
                    ..VerdictBundle::undecided()
                })
            }
            Aggregator::Concat => {
                let flat: Vec<String> = sets.iter().flatten().cloned().collect();
                let block = self.esm_block(claim, &flat)?;
                let logits = row3(&block.l);
                Ok(VerdictBundle {
                    label: argmax_label(&logits),
                    logits: Some(logits),
                    per_set_logits: vec![logits],
                    ..VerdictBundle::undecided()
                })
            }
            Aggregator::Attn => {
                let mut tape = Tape::new();
                let vars = self.sets_on_tape(&mut tape, claim, sets)?;
                let out = self.attn_logits_on_tape(&mut tape, claim, &vars)?;
                let logits = row3(tape.value(out));
                Ok(VerdictBundle {
                    label: argmax_label(&logits),
                    logits: Some(logits),
                    per_set_logits: vars.iter().map(|v| row3(tape.value(v.l))).collect(),
                    ..VerdictBundle::undecided()
                })
            }
        }
    }

    /// Per-set logits on a throwaway tape, plus each set's word weights.
    fn score_sets(
        &self,
        claim: &str,
        sets: &[Vec<String>],
    ) -> Result<(Vec<[f64; 3]>, Vec<Vec<f64>>), VerifyError> {
        let mut tape = Tape::new();
        let vars = self.sets_on_tape(&mut tape, claim, sets)?;
        let logits = vars.iter().map(|v| row3(tape.value(v.l))).collect();
        let weights = vars
            .iter()
            .map(|v| tape.value(v.word_weights).data().to_vec())
            .collect();
        Ok((logits, weights))
    }

    fn sets_on_tape(
        &self,
        tape: &mut Tape,
        claim: &str,
        sets: &[Vec<String>],
    ) -> Result<Vec<EsmVars>, VerifyError> {
        if sets.is_empty() {
            return Err(VerifyError::EmptyEvidenceSet);
        }
        sets.iter().map(|s| self.esm_on_tape(tape, claim, s)).collect()
    }

    /// MLP aggregator head: per-set probability triples, concatenated in
    /// rank order and zero-padded out to the configured maximum.
    fn mlp_logits_on_tape(
        &self,
        tape: &mut Tape,
        per_set: &[EsmVars],
    ) -> Result<VarId, VerifyError> {
        let j = per_set.len();
        let limit = self.config.max_sets;
        if j > limit {
            return Err(VerifyError::TooManySets { got: j, limit });
        }
        let mut pieces = Vec::with_capacity(j + 1);
        for vars in per_set {
            pieces.push(tape.softmax(vars.l)?);
        }
        if j < limit {
            let pad = Tensor::zeros(&[1, 3 * (limit - j)]);
            pieces.push(tape.constant(pad));
        }
        let feat = tape.concat_cols(&pieces)?;
        let w1 = tape.param(&self.params, "mlp.w1")?;
        let b1 = tape.param(&self.params, "mlp.b1")?;
        let w2 = tape.param(&self.params, "mlp.w2")?;
        let b2 = tape.param(&self.params, "mlp.b2")?;
        let pre1 = tape.matmul(feat, w1)?;
        let act1 = tape.add_bias(pre1, b1)?;
        let hidden = tape.gelu(act1)?;
        let pre2 = tape.matmul(hidden, w2)?;
        Ok(tape.add_bias(pre2, b2)?)
    }

    /// Claim-guided attention aggregator head: the encoded claim queries
    /// the set vectors, and max- plus mean-pooled weighted vectors feed a
    /// linear verdict layer.
    fn attn_logits_on_tape(
        &self,
        tape: &mut Tape,
        claim: &str,
        per_set: &[EsmVars],
    ) -> Result<VarId, VerifyError> {
        let input = build_pair_input(&self.vocab, self.config.encoder.t_max, claim, "")?;
        let enc = self.encoder.encode_on_tape(tape, &self.params, &input)?;
        let q = tape.reshape(enc.p, &[1, self.config.encoder.d])?;
        let s_rows: Vec<VarId> = per_set.iter().map(|v| v.s).collect();
        let stack = tape.concat_rows(&s_rows)?;
        let qt = tape.transpose(q)?;
        let scores = tape.matmul(stack, qt)?;
        let scores_row = tape.transpose(scores)?;
        let weights = tape.softmax(scores_row)?;
        let weighted = tape.scale_rows(stack, weights)?;
        let maxed = tape.max_rows(weighted)?;
        let meaned = tape.mean_rows(weighted)?;
        let feat = tape.concat_cols(&[maxed, meaned])?;
        let w = tape.param(&self.params, "attnagg.w")?;
        let b = tape.param(&self.params, "attnagg.b")?;
        let proj = tape.matmul(feat, w)?;
        Ok(tape.add_bias(proj, b)?)
    }

    // ── Losses ───────────────────────────────────────────────────────────

    /// Value of the joint training objective for one claim: mean per-set
    /// cross-entropy plus cross-entropy of the combined logits, against
    /// the given gold class (0 SUPPORTED, 1 REFUTED, 2 NEI).
    pub fn joint_loss(
        &self,
        claim: &str,
        sets: &[Vec<String>],
        gold: usize,
    ) -> Result<f64, VerifyError> {
        let mut tape = Tape::new();
        let fwd = self.forward_on_tape(&mut tape, claim, sets)?;
        let loss = self.hesm_loss_on_tape(&mut tape, &fwd, gold)?;
        Ok(tape.value(loss).data()[0])
    }

    /// One claim's loss under the chosen aggregator, with gradients
    /// accumulated into fresh parameter slots. Returns the loss value.
    pub fn loss_and_backward(
        &mut self,
        aggregator: Aggregator,
        claim: &str,
        sets: &[Vec<String>],
        gold: usize,
    ) -> Result<f64, VerifyError> {
        let mut tape = Tape::new();
        let loss = self.claim_loss_on_tape(&mut tape, aggregator, claim, sets, gold)?;
        let value = tape.value(loss).data()[0];
        self.params.reset_grads();
        tape.backward(loss, &mut self.params)?;
        Ok(value)
    }

    /// Joint objective of the two-path model: mean per-set cross-entropy
    /// (every set supervised by the claim verdict) plus cross-entropy of
    /// the combined logits.
    fn hesm_loss_on_tape(
        &self,
        tape: &mut Tape,
        fwd: &ForwardVars,
        gold: usize,
    ) -> Result<VarId, VerifyError> {
        let per_set = self.mean_set_loss_on_tape(tape, &fwd.ordered_logits(), gold)?;
        let joint = tape.cross_entropy(fwd.combined, gold)?;
        Ok(tape.add(per_set, joint)?)
    }

    /// Mean cross-entropy over per-set logit rows, in the order given.
    fn mean_set_loss_on_tape(
        &self,
        tape: &mut Tape,
        l_rows: &[VarId],
        gold: usize,
    ) -> Result<VarId, VerifyError> {
        let inv = 1.0 / l_rows.len() as f64;
        let mut total: Option<VarId> = None;
        for &l in l_rows {
            let ce = tape.cross_entropy(l, gold)?;
            let scaled = tape.scale(ce, inv)?;
            total = Some(match total {
                Some(t) => tape.add(t, scaled)?,
                None => scaled,
            });
        }
        total.ok_or(VerifyError::EmptyEvidenceSet)
    }

    /// Training loss for one claim under the chosen aggregator.
    fn claim_loss_on_tape(
        &self,
        tape: &mut Tape,
        aggregator: Aggregator,
        claim: &str,
        sets: &[Vec<String>],
        gold: usize,
    ) -> Result<VarId, VerifyError> {
        match aggregator {
            Aggregator::Hesm => {
                let fwd = self.forward_on_tape(tape, claim, sets)?;
                self.hesm_loss_on_tape(tape, &fwd, gold)
            }
            Aggregator::Top1 | Aggregator::Logical => {
                let vars = self.sets_on_tape(tape, claim, sets)?;
                let l_rows = ordered_logit_rows(&vars, sets);
                self.mean_set_loss_on_tape(tape, &l_rows, gold)
            }
            Aggregator::Mlp => {
                let vars = self.sets_on_tape(tape, claim, sets)?;
                let l_rows = ordered_logit_rows(&vars, sets);
                let per_set = self.mean_set_loss_on_tape(tape, &l_rows, gold)?;
                let head = self.mlp_logits_on_tape(tape, &vars)?;
                let ce = tape.cross_entropy(head, gold)?;
                Ok(tape.add(per_set, ce)?)
            }
            Aggregator::Attn => {
                let vars = self.sets_on_tape(tape, claim, sets)?;
                let l_rows = ordered_logit_rows(&vars, sets);
                let per_set = self.mean_set_loss_on_tape(tape, &l_rows, gold)?;
                let head = self.attn_logits_on_tape(tape, claim, &vars)?;
                let ce = tape.cross_entropy(head, gold)?;
                Ok(tape.add(per_set, ce)?)
            }
            Aggregator::Concat => {
                let flat: Vec<String> = sets.iter().flatten().cloned().collect();
                let vars = self.esm_on_tape(tape, claim, &flat)?;
                Ok(tape.cross_entropy(vars.l, gold)?)
            }
        }
    }
}

/// Canonical aggregation order: sets sorted by their joined sentence text,
/// ties kept in input order. Index `i` of the result holds the input
/// position of the set aggregated at canonical position `i`.
fn canonical_order(sets: &[Vec<String>]) -> Vec<usize> {
    let joined: Vec<String> = sets.iter().map(|s| s.join(" ")).collect();
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&a, &b| joined[a].cmp(&joined[b]).then(a.cmp(&b)));
    order
}

/// Per-set logit rows rearranged into canonical text order, so baseline
/// losses share the permutation-stable summation of the main objective.
fn ordered_logit_rows(vars: &[EsmVars], sets: &[Vec<String>]) -> Vec<VarId> {
    canonical_order(sets).iter().map(|&i| vars[i].l).collect()
}

/// Map a canonical-order weight row back to input order.
fn input_order_weights(weights: &Tensor, order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; order.len()];
    for (pos, &idx) in order.iter().enumerate() {
        out[idx] = weights.data()[pos];
    }
    out
}

fn row3(t: &Tensor) -> [f64; 3] {
    let d = t.data();
    [d[0], d[1], d[2]]
}

/// Rule aggregation over per-set verdicts given in rank order: the
/// highest-ranked set voting SUPPORTED or REFUTED decides; NEI only when
/// no set takes a side.
pub fn logical_verdict(votes: &[Label]) -> Label {
    votes
        .iter()
        .copied()
        .find(|l| *l != Label::Nei)
        .unwrap_or(Label::Nei)
}

/// First strict maximum wins, so exact ties resolve toward SUPPORTED,
/// then REFUTED, then NEI.
pub fn argmax_label(logits: &[f64; 3]) -> Label {
    let mut best = 0;
    for i in 1..3 {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    match best {
        0 => Label::Supported,
        1 => Label::Refuted,
        _ => Label::Nei,
    }
}

// ── Outputs ──────────────────────────────────────────────────────────────────

/// Tape-space products of scoring one evidence set.
#[derive(Debug, Clone, Copy)]
struct EsmVars {
    u: VarId,
    p: VarId,
    s: VarId,
    l: VarId,
    word_weights: VarId,
}

/// Tensor-space products of scoring one evidence set: token matrix `u`
/// `[T x d]`, pooled row `p` `[1 x d]`, word-attention summary `s`
/// `[1 x d]` (a convex combination of the rows of `u`), verdict logits
/// `l` `[1 x 3]`, and the word weights `[1 x T]`.
#[derive(Debug, Clone)]
pub struct EsmOutput {
    pub u: Tensor,
    pub p: Tensor,
    pub s: Tensor,
    pub l: Tensor,
    pub word_weights: Tensor,
}

/// Tape-space products of the full two-path forward pass.
struct ForwardVars {
    /// Input order.
    per_set: Vec<EsmVars>,
    /// Canonical aggregation order (entries index `per_set`).
    order: Vec<usize>,
    l_nc: VarId,
    l_c: VarId,
    combined: VarId,
    /// Canonical order, like `order`.
    nc_weights: VarId,
    c_weights: VarId,
}

impl ForwardVars {
    fn ordered_logits(&self) -> Vec<VarId> {
        self.order.iter().map(|&i| self.per_set[i].l).collect()
    }
}

/// A claim-level verdict with whatever supporting detail the aggregator
/// defines. Per-set logits follow the input set order, as do the two
/// weight vectors, each of which sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictBundle {
    pub label: Label,
    pub logits: Option<[f64; 3]>,
    pub per_set_logits: Vec<[f64; 3]>,
    pub l_c: Option<[f64; 3]>,
    pub l_nc: Option<[f64; 3]>,
    pub contextual_weights: Option<Vec<f64>>,
    pub noncontextual_weights: Option<Vec<f64>>,
}

impl VerdictBundle {
    /// The no-evidence verdict: NEI with nothing else to report.
    fn undecided() -> VerdictBundle {
        VerdictBundle {
            label: Label::Nei,
            logits: None,
            per_set_logits: Vec::new(),
            l_c: None,
            l_nc: None,
            contextual_weights: None,
            noncontextual_weights: None,
        }
    }
}

// ── Evidence text lookup ─────────────────────────────────────────────────────

/// Resolve a retrieval record's sentence references to their texts,
/// preserving set and sentence order. A reference that no longer resolves
/// becomes an empty string so set shapes stay intact.
pub fn record_set_texts(corpus: &Corpus, record: &RetrievalRecord) -> Vec<Vec<String>> {
    record
        .sets
        .iter()
        .map(|set| {
            set.iter()
                .map(|s| {
                    let r = crate::corpus::SentenceRef {
                        page_id: s.page_id.clone(),
                        line: s.line,
                    };
                    corpus.sentence(&r).unwrap_or("").to_string()
                })
                .collect()
        })
        .collect()
}

// ── Training ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled weight decay passed through to the optimizer.
    pub weight_decay: f64,
    /// Probability of hiding each claim word from a training example. Breaks
    /// rote claim-to-label memorization by forcing the evidence to carry
    /// part of the signal; evaluation always sees the full claim.
    pub word_dropout: f64,
    pub seed: u64,
}

impl Default for VerifierTrainConfig {
    /// Reference training recipe: four epochs of batches of 32 at 2e-5.
    fn default() -> VerifierTrainConfig {
        VerifierTrainConfig {
            epochs: 4,
            batch_size: 32,
            lr: 2e-5,
            weight_decay: 0.0,
            word_dropout: 0.0,
            seed: 0,
        }
    }
}

impl VerifierTrainConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.epochs == 0 {
            return Err(VerifyError::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(VerifyError::Invalid("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(VerifyError::Invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(VerifyError::Invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.word_dropout.is_finite() && (0.0..1.0).contains(&self.word_dropout)) {
            return Err(VerifyError::Invalid(format!(
                "word dropout must lie in [0, 1), got {}",
                self.word_dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierEpochStats {
    pub epoch: usize,
    /// Supervised claims this epoch (zero for the untrained baseline row).
    pub examples: usize,
    pub mean_loss: Option<f64>,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierTrainOutcome {
    /// Row 0 is the untrained baseline; row `e` follows epoch `e`.
    pub history: Vec<VerifierEpochStats>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    /// Training claims dropped because retrieval produced no sets for them.
    pub skipped_claims: usize,
}

/// Label accuracy of the aggregator over a dataset split; claims without
/// retrieved sets are predicted NEI rather than skipped.
pub fn eval_label_accuracy(
    model: &VerifierModel,
    aggregator: Aggregator,
    split: &Dataset,
    sets_by_claim: &BTreeMap<u64, Vec<Vec<String>>>,
) -> Result<f64, VerifyError> {
    if split.claims.is_empty() {
        return Err(VerifyError::Invalid(format!(
            "split {:?} has no claims to evaluate",
            split.split
        )));
    }
    let mut correct = 0usize;
    for claim in &split.claims {
        static EMPTY: Vec<Vec<String>> = Vec::new();
        let sets = sets_by_claim.get(&claim.claim_id).unwrap_or(&EMPTY);
        let verdict = model.predict_with(aggregator, &claim.text, sets)?;
        if verdict.label == claim.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.claims.len() as f64)
}

/// Train the verifier under the chosen aggregator, supervising every
/// retrieved set with the claim verdict. Claims with no retrieved sets are
/// dropped from training (and counted) but still scored as NEI during dev
/// evaluation. The parameters giving the best dev accuracy are restored at
/// the end; ties keep the earlier epoch, including the untrained baseline.
/// Rebuild a claim with each word independently hidden with probability `p`;
/// a draw that hides every word falls back to the original text.
fn drop_words(text: &str, p: f64, rng: &mut Rng) -> String {
    let kept: Vec<&str> = text
        .split_whitespace()
        .filter(|_| rng.next_f64() >= p)
        .collect();
    if kept.is_empty() {
        text.to_string()
    } else {
        kept.join(" ")
    }
}

pub fn train_verifier(
    model: &mut VerifierModel,
    aggregator: Aggregator,
    train: &Dataset,
    dev: &Dataset,
    train_sets: &BTreeMap<u64, Vec<Vec<String>>>,
    dev_sets: &BTreeMap<u64, Vec<Vec<String>>>,
    config: &VerifierTrainConfig,
) -> Result<VerifierTrainOutcome, VerifyError> {
    config.validate()?;
    let mut examples: Vec<(&str, &Vec<Vec<String>>, usize)> = Vec::new();
    let mut skipped = 0usize;
    for claim in &train.claims {
        match train_sets.get(&claim.claim_id) {
            Some(sets) if !sets.is_empty() => {
                examples.push((&claim.text, sets, claim.label.class_index()));
            }
            _ => skipped += 1,
        }
    }
    if examples.is_empty() {
        return Err(VerifyError::Invalid(
            "no training claim has retrieved evidence sets".into(),
        ));
    }

    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::with_lr(config.lr)
    })?;
    let baseline = eval_label_accuracy(model, aggregator, dev, dev_sets)?;
    let mut history = vec![VerifierEpochStats {
        epoch: 0,
        examples: 0,
        mean_loss: None,
        dev_accuracy: baseline,
    }];
    let mut best_epoch = 0usize;
    let mut best_accuracy = baseline;
    let mut best_params = model.params.clone();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = Rng::for_stream(config.seed, &format!("verifier-shuffle-epoch{epoch}"));
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let inv = 1.0 / chunk.len() as f64;
            let mut total: Option<VarId> = None;
            for &i in chunk {
                let (text, sets, gold) = examples[i];
                let dropped;
                let text = if config.word_dropout > 0.0 {
                    dropped = drop_words(text, config.word_dropout, &mut rng);
                    dropped.as_str()
                } else {
                    text
                };
                let loss = model.claim_loss_on_tape(&mut tape, aggregator, text, sets, gold)?;
                let scaled = tape.scale(loss, inv)?;
                total = Some(match total {
                    Some(t) => tape.add(t, scaled)?,
                    None => scaled,
                });
            }
            let loss = total.expect("chunks are never empty");
            loss_sum += tape.value(loss).data()[0] * chunk.len() as f64;
            model.params.reset_grads();
            tape.backward(loss, &mut model.params)?;
            opt.step(&mut model.params);
        }
        let dev_accuracy = eval_label_accuracy(model, aggregator, dev, dev_sets)?;
        history.push(VerifierEpochStats {
            epoch,
            examples: examples.len(),
            mean_loss: Some(loss_sum / examples.len() as f64),
            dev_accuracy,
        });
        if dev_accuracy > best_accuracy {
            best_accuracy = dev_accuracy;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
    }

    model.params = best_params;
    Ok(VerifierTrainOutcome {
        history,
        best_epoch,
        best_accuracy,
        skipped_claims: skipped,
    })
}

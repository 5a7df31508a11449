//! Two-iteration sentence retrieval over ranked candidate documents.
//!
//! The first iteration scores every sentence of each candidate document
//! against the claim and keeps the strongest ones above a probability
//! threshold as evidence-set roots. The second iteration follows the
//! hyperlinks attached to each root sentence, scores the sentences of the
//! linked pages as (claim, root, candidate) triples, and attaches the
//! candidates above a stricter threshold as expansions of that root's set.
//!
//! Training builds positive/negative sentence pairs from gold evidence with
//! a negative-sampling ratio that anneals geometrically per epoch, and keeps
//! the checkpoint with the best recall on a held-out split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dataset, Label, SentenceRef};
use crate::docselect::{self, DocSelectError, PairScorer, TitleIndex};
use crate::encoder::{
    build_pair_input, build_triple_input, Encoder, EncoderConfig, EncoderError, EncoderInput,
    Vocab,
};
use crate::tensorkit::{
    write_atomic, AdamW, AdamWConfig, Params, Rng, Tape, TensorError, VarId,
};

/// Budget for the flattened sentence count across all evidence sets
/// returned for one claim; the scorer applies the same bound after
/// deduplication.
pub const MAX_FLAT_SENTENCES: usize = 5;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    DocSelect(#[from] DocSelectError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid retrieval setting: {0}")]
    Invalid(String),
    #[error("no training examples for pass {pass} at epoch {epoch}")]
    EmptyTrainingSet { pass: u8, epoch: usize },
    #[error("second-pass training needs a first-pass model for recall evaluation")]
    MissingPassOneModel,
    #[error("failed to {action} {path}: {detail}")]
    File {
        action: &'static str,
        path: String,
        detail: String,
    },
}

// ── Scores and evidence sets ─────────────────────────────────────────────────

/// Relevance logits for one sentence with the softmax probability of the
/// positive side. For non-empty inputs `prob` and its complement sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub m_plus: f64,
    pub m_minus: f64,
    pub prob: f64,
    /// True when the sentence text was blank: the score is pinned to zero
    /// by convention instead of being computed, and selection skips it.
    pub empty_input: bool,
}

impl SentenceScore {
    /// Softmax over the two logits, stabilized by subtracting the max.
    pub fn from_logits(m_plus: f64, m_minus: f64) -> SentenceScore {
        let m = m_plus.max(m_minus);
        let e_plus = (m_plus - m).exp();
        let e_minus = (m_minus - m).exp();
        SentenceScore {
            m_plus,
            m_minus,
            prob: e_plus / (e_plus + e_minus),
            empty_input: false,
        }
    }

    /// The conventional score for a blank sentence.
    pub fn empty_input() -> SentenceScore {
        SentenceScore {
            m_plus: 0.0,
            m_minus: 0.0,
            prob: 0.0,
            empty_input: true,
        }
    }
}

/// A corpus sentence together with its relevance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub sentence: SentenceRef,
    pub score: SentenceScore,
}

/// Ranking order shared by both passes: m⁺ descending, then probability
/// descending, then page id and line ascending so ties are deterministic.
fn retrieval_order(a: &ScoredSentence, b: &ScoredSentence) -> std::cmp::Ordering {
    b.score
        .m_plus
        .partial_cmp(&a.score.m_plus)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| {
            b.score
                .prob
                .partial_cmp(&a.score.prob)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .then_with(|| a.sentence.page_id.cmp(&b.sentence.page_id))
        .then_with(|| a.sentence.line.cmp(&b.sentence.line))
}

/// A root sentence plus the expansions retrieved through its hyperlinks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub root: ScoredSentence,
    pub expansions: Vec<ScoredSentence>,
}

impl EvidenceSet {
    /// Root plus expansions.
    pub fn sentence_count(&self) -> usize {
        1 + self.expansions.len()
    }

    /// Root first, then expansions in their stored order.
    pub fn sentences(&self) -> impl Iterator<Item = &ScoredSentence> {
        std::iter::once(&self.root).chain(self.expansions.iter())
    }

    /// Sentence references in set order.
    pub fn refs(&self) -> Vec<SentenceRef> {
        self.sentences().map(|s| s.sentence.clone()).collect()
    }
}

/// Selection settings for both retrieval iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrieveParams {
    /// Maximum number of evidence-set roots kept by the first iteration.
    pub k2: usize,
    /// Maximum sentences per evidence set (root included).
    pub m_s: usize,
    /// First-iteration probability threshold (strict).
    pub th_evi1: f64,
    /// Second-iteration probability threshold (strict).
    pub th_evi2: f64,
}

impl Default for RetrieveParams {
    fn default() -> RetrieveParams {
        RetrieveParams {
            k2: 3,
            m_s: 3,
            th_evi1: 0.5,
            th_evi2: 0.8,
        }
    }
}

impl RetrieveParams {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.k2 == 0 {
            return Err(RetrieveError::Invalid("k2 must be at least 1".into()));
        }
        if self.m_s == 0 {
            return Err(RetrieveError::Invalid("m_s must be at least 1".into()));
        }
        for (name, th) in [("th_evi1", self.th_evi1), ("th_evi2", self.th_evi2)] {
            if !(0.0..=1.0).contains(&th) {
                return Err(RetrieveError::Invalid(format!(
                    "{name} must lie in [0, 1], got {th}"
                )));
            }
        }
        Ok(())
    }
}

// ── Selection rules ──────────────────────────────────────────────────────────

/// First-iteration selection: rank by m⁺ (ties: probability, page id,
/// line), keep sentences with probability strictly above `th_evi1`, return
/// at most `k2`.
pub fn select_pass1(scored: &[ScoredSentence], k2: usize, th_evi1: f64) -> Vec<ScoredSentence> {
    let mut kept: Vec<ScoredSentence> = scored
        .iter()
        .filter(|s| !s.score.empty_input && s.score.prob > th_evi1)
        .cloned()
        .collect();
    kept.sort_by(retrieval_order);
    kept.truncate(k2);
    kept
}

/// Second-iteration selection: same ranking, probability strictly above
/// `th_evi2`, at most `m_s − 1` expansions so the whole set stays within
/// `m_s` sentences.
pub fn select_expansions(
    scored: &[ScoredSentence],
    m_s: usize,
    th_evi2: f64,
) -> Vec<ScoredSentence> {
    let mut kept: Vec<ScoredSentence> = scored
        .iter()
        .filter(|s| !s.score.empty_input && s.score.prob > th_evi2)
        .cloned()
        .collect();
    kept.sort_by(retrieval_order);
    kept.truncate(m_s.saturating_sub(1));
    kept
}

/// Keep the longest prefix of `sets` (already in root-score order) whose
/// flattened sentence count fits `budget`, dropping the lowest-scoring
/// roots first. Sets are never split; when even the top set alone exceeds
/// the budget it is kept whole and downstream flattening trims it.
pub fn cap_flattened(sets: Vec<EvidenceSet>, budget: usize) -> Vec<EvidenceSet> {
    let mut kept: Vec<EvidenceSet> = Vec::new();
    let mut total = 0usize;
    for set in sets {
        if !kept.is_empty() && total + set.sentence_count() > budget {
            break;
        }
        total += set.sentence_count();
        kept.push(set);
    }
    kept
}

// ── Scoring model ────────────────────────────────────────────────────────────

/// Sentence-relevance model: the shared encoder plus a 2-way classification
/// head over the pooled vector. Two independent instances are trained, one
/// per retrieval iteration.
#[derive(Debug, Clone)]
pub struct RetrieverModel {
    pub encoder: Encoder,
    pub vocab: Vocab,
    pub params: Params,
}

impl RetrieverModel {
    /// Fresh model with seeded Glorot weights. The encoder size must agree
    /// with the vocabulary.
    pub fn init(
        config: EncoderConfig,
        vocab: Vocab,
        seed: u64,
    ) -> Result<RetrieverModel, RetrieveError> {
        if config.vocab != vocab.len() {
            return Err(RetrieveError::Invalid(format!(
                "encoder vocab size {} does not match vocabulary size {}",
                config.vocab,
                vocab.len()
            )));
        }
        let encoder = Encoder::new(config, "enc")?;
        let mut params = Params::default();
        let mut rng = Rng::for_stream(seed, "retriever-init");
        encoder.init_params(&mut params, &mut rng);
        params.insert_glorot("cls.w", config.d, 2, &mut rng);
        params.insert_zeros("cls.b", &[1, 2]);
        Ok(RetrieverModel {
            encoder,
            vocab,
            params,
        })
    }

    /// Rebuild a model around existing parameters (e.g. from a checkpoint).
    pub fn from_parts(
        config: EncoderConfig,
        vocab: Vocab,
        params: Params,
    ) -> Result<RetrieverModel, RetrieveError> {
        if config.vocab != vocab.len() {
            return Err(RetrieveError::Invalid(format!(
                "encoder vocab size {} does not match vocabulary size {}",
                config.vocab,
                vocab.len()
            )));
        }
        for name in ["cls.w", "cls.b"] {
            params.get(name).map_err(RetrieveError::Tensor)?;
        }
        let encoder = Encoder::new(config, "enc")?;
        Ok(RetrieverModel {
            encoder,
            vocab,
            params,
        })
    }

    /// Relevance logits [1×2] = (m⁺, m⁻) for one assembled input.
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        input: &EncoderInput,
    ) -> Result<VarId, RetrieveError> {
        let enc = self.encoder.encode_on_tape(tape, &self.params, input)?;
        let pooled = tape.reshape(enc.p, &[1, self.encoder.config.d])?;
        let w = tape.param(&self.params, "cls.w")?;
        let b = tape.param(&self.params, "cls.b")?;
        let proj = tape.matmul(pooled, w)?;
        Ok(tape.add_bias(proj, b)?)
    }

    /// Score one assembled input on a throwaway tape.
    pub fn score_input(&self, input: &EncoderInput) -> Result<SentenceScore, RetrieveError> {
        let mut tape = Tape::new();
        let logits = self.logits_on_tape(&mut tape, input)?;
        let v = tape.value(logits).data();
        Ok(SentenceScore::from_logits(v[0], v[1]))
    }

    /// First-iteration score for (claim, sentence). Blank sentences get the
    /// zero score without touching the encoder.
    pub fn score_sentence(
        &self,
        claim: &str,
        sentence: &str,
    ) -> Result<SentenceScore, RetrieveError> {
        if sentence.trim().is_empty() {
            return Ok(SentenceScore::empty_input());
        }
        let input = build_pair_input(&self.vocab, self.encoder.config.t_max, claim, sentence)?;
        self.score_input(&input)
    }

    /// Second-iteration score for (claim, root, candidate); the probability
    /// is attributed to the candidate.
    pub fn score_expansion(
        &self,
        claim: &str,
        root: &str,
        candidate: &str,
    ) -> Result<SentenceScore, RetrieveError> {
        if candidate.trim().is_empty() {
            return Ok(SentenceScore::empty_input());
        }
        let input =
            build_triple_input(&self.vocab, self.encoder.config.t_max, claim, root, candidate)?;
        self.score_input(&input)
    }
}

impl PairScorer for RetrieverModel {
    fn score_pair(&self, claim: &str, sentence: &str) -> f64 {
        self.score_sentence(claim, sentence)
            .map(|s| s.prob)
            .unwrap_or(0.0)
    }
}

/// Scorer that returns the same probability for every pair. Used to keep
/// document candidates stable while a model is still training, and as a
/// stand-in in tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl PairScorer for ConstantScorer {
    fn score_pair(&self, _claim: &str, _sentence: &str) -> f64 {
        self.0
    }
}

// ── Retrieval ────────────────────────────────────────────────────────────────

/// Score every sentence of the given documents against the claim, in
/// document order. Pages absent from the corpus are skipped.
pub fn score_documents(
    model: &RetrieverModel,
    claim: &str,
    corpus: &Corpus,
    doc_ids: &[String],
) -> Result<Vec<ScoredSentence>, RetrieveError> {
    let mut out = Vec::new();
    for page in doc_ids {
        let Some(doc) = corpus.get(page) else {
            continue;
        };
        for (line, text) in doc.lines.iter().enumerate() {
            out.push(ScoredSentence {
                sentence: SentenceRef::new(doc.page_id.clone(), line),
                score: model.score_sentence(claim, text)?,
            });
        }
    }
    Ok(out)
}

/// Build one evidence set per root by scoring the sentences of the pages
/// hyperlinked from the root's line, then cap the flattened total. Returns
/// the sets plus the number of link targets that named pages absent from
/// the corpus.
pub fn expand_and_assemble(
    model: &RetrieverModel,
    claim: &str,
    roots: &[ScoredSentence],
    corpus: &Corpus,
    params: &RetrieveParams,
) -> Result<(Vec<EvidenceSet>, usize), RetrieveError> {
    let mut missing_links = 0usize;
    let mut sets = Vec::new();
    for root in roots {
        let root_doc = corpus.get(&root.sentence.page_id).ok_or_else(|| {
            RetrieveError::Invalid(format!(
                "root page {:?} is not in the corpus",
                root.sentence.page_id
            ))
        })?;
        let root_text = root_doc.line(root.sentence.line).ok_or_else(|| {
            RetrieveError::Invalid(format!(
                "root line {} is out of range for page {:?}",
                root.sentence.line, root.sentence.page_id
            ))
        })?;
        let mut candidates = Vec::new();
        for target in root_doc.links_from(root.sentence.line) {
            let Some(target_doc) = corpus.get(target) else {
                missing_links += 1;
                continue;
            };
            for (line, text) in target_doc.lines.iter().enumerate() {
                let sentence = SentenceRef::new(target_doc.page_id.clone(), line);
                if sentence == root.sentence {
                    continue;
                }
                candidates.push(ScoredSentence {
                    score: model.score_expansion(claim, root_text, text)?,
                    sentence,
                });
            }
        }
        sets.push(EvidenceSet {
            root: root.clone(),
            expansions: select_expansions(&candidates, params.m_s, params.th_evi2),
        });
    }
    Ok((cap_flattened(sets, MAX_FLAT_SENTENCES), missing_links))
}

/// Everything retrieved for one claim.
#[derive(Debug, Clone)]
pub struct ClaimRetrieval {
    /// Evidence sets in root-score order, flattened total within budget.
    pub sets: Vec<EvidenceSet>,
    /// Ranked candidate document ids the sets were drawn from.
    pub doc_ids: Vec<String>,
    /// Document candidates dropped because their page was missing.
    pub dropped_missing_docs: usize,
    /// Hyperlink targets skipped because their page was missing.
    pub missing_link_pages: usize,
}

/// Full two-iteration retrieval for one claim: document selection (with the
/// first-pass model resolving ambiguous titles), first-pass root selection,
/// then link expansion with the second-pass model.
pub fn retrieve_for_claim(
    pass1: &RetrieverModel,
    pass2: &RetrieverModel,
    claim: &str,
    corpus: &Corpus,
    index: &TitleIndex,
    k1: usize,
    params: &RetrieveParams,
) -> Result<ClaimRetrieval, RetrieveError> {
    params.validate()?;
    let ranked = docselect::select_documents(claim, index, corpus, pass1, k1)?;
    let doc_ids: Vec<String> = ranked.docs.iter().map(|d| d.page_id.clone()).collect();
    let scored = score_documents(pass1, claim, corpus, &doc_ids)?;
    let roots = select_pass1(&scored, params.k2, params.th_evi1);
    let (sets, missing_link_pages) = expand_and_assemble(pass2, claim, &roots, corpus, params)?;
    Ok(ClaimRetrieval {
        sets,
        doc_ids,
        dropped_missing_docs: ranked.dropped_missing,
        missing_link_pages,
    })
}

// ── Retrieval output records ─────────────────────────────────────────────────

/// One retrieved sentence as written to the retrieval output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSentence {
    pub page_id: String,
    pub line: usize,
    pub m_plus: f64,
    pub prob: f64,
}

/// Per-claim retrieval output: evidence sets in rank order, each set an
/// ordered list of sentences (root first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub claim_id: u64,
    pub sets: Vec<Vec<RetrievedSentence>>,
}

impl RetrievalRecord {
    pub fn from_sets(claim_id: u64, sets: &[EvidenceSet]) -> RetrievalRecord {
        RetrievalRecord {
            claim_id,
            sets: sets
                .iter()
                .map(|set| {
                    set.sentences()
                        .map(|s| RetrievedSentence {
                            page_id: s.sentence.page_id.clone(),
                            line: s.sentence.line,
                            m_plus: s.score.m_plus,
                            prob: s.score.prob,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Write retrieval records as one JSON object per line.
pub fn save_retrievals(path: &Path, records: &[RetrievalRecord]) -> Result<(), RetrieveError> {
    let mut buf = String::new();
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| RetrieveError::File {
            action: "serialize record for",
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        buf.push_str(&line);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes()).map_err(|e| RetrieveError::File {
        action: "write",
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Read records written by [`save_retrievals`]; blank lines are ignored.
pub fn load_retrievals(path: &Path) -> Result<Vec<RetrievalRecord>, RetrieveError> {
    let text = std::fs::read_to_string(path).map_err(|e| RetrieveError::File {
        action: "read",
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RetrievalRecord =
            serde_json::from_str(line).map_err(|e| RetrieveError::File {
                action: "parse",
                path: path.display().to_string(),
                detail: format!("line {}: {}", idx + 1, e),
            })?;
        records.push(record);
    }
    Ok(records)
}

// ── Training ─────────────────────────────────────────────────────────────────

/// Which retrieval iteration a model is being trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrieverPass {
    One,
    Two,
}

impl RetrieverPass {
    pub fn number(self) -> u8 {
        match self {
            RetrieverPass::One => 1,
            RetrieverPass::Two => 2,
        }
    }
}

/// Training settings for one retriever.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrieverTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled weight decay passed through to the optimizer.
    pub weight_decay: f64,
    /// Negatives sampled per positive before annealing (r₀).
    pub negative_ratio: f64,
    /// Geometric annealing factor applied per epoch (γ).
    pub negative_decay: f64,
    pub seed: u64,
}

impl Default for RetrieverTrainConfig {
    fn default() -> RetrieverTrainConfig {
        RetrieverTrainConfig {
            epochs: 4,
            batch_size: 64,
            lr: 5e-5,
            weight_decay: 0.0,
            negative_ratio: 8.0,
            negative_decay: 0.5,
            seed: 0,
        }
    }
}

impl RetrieverTrainConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.epochs == 0 {
            return Err(RetrieveError::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(RetrieveError::Invalid(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(RetrieveError::Invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(RetrieveError::Invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.negative_ratio < 1.0 {
            return Err(RetrieveError::Invalid(format!(
                "negative ratio must be at least 1, got {}",
                self.negative_ratio
            )));
        }
        if !(self.negative_decay > 0.0 && self.negative_decay <= 1.0) {
            return Err(RetrieveError::Invalid(format!(
                "negative decay must lie in (0, 1], got {}",
                self.negative_decay
            )));
        }
        Ok(())
    }
}

/// Annealed negatives-per-positive count for a 0-based epoch:
/// round(ratio · decay^epoch), never below 1.
pub fn negatives_per_positive(ratio: f64, decay: f64, epoch: usize) -> usize {
    let annealed = ratio * decay.powi(epoch as i32);
    (annealed.round() as usize).max(1)
}

/// One training example: an assembled encoder input with its side.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub claim_id: u64,
    pub input: EncoderInput,
    pub positive: bool,
}

/// What example construction produced and what it had to skip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairBuildStats {
    pub positives: usize,
    pub negatives: usize,
    /// Claims whose gold evidence could not be resolved to any example.
    pub skipped_claims: usize,
}

/// Vocabulary over every corpus sentence plus the claim texts of the given
/// splits, so both sides of a scoring input tokenize without unknowns.
pub fn build_vocab(corpus: &Corpus, datasets: &[&Dataset]) -> Vocab {
    let mut texts: Vec<&str> = Vec::new();
    for doc in corpus.iter() {
        for line in &doc.lines {
            texts.push(line);
        }
    }
    for dataset in datasets {
        for claim in &dataset.claims {
            texts.push(&claim.text);
        }
    }
    Vocab::build(texts)
}

/// Candidate documents per claim using a constant scorer, so the training
/// document pool does not shift while the model trains; ambiguous titles
/// fall back to page-id order at equal probability.
pub fn candidate_docs(
    dataset: &Dataset,
    corpus: &Corpus,
    index: &TitleIndex,
    k1: usize,
) -> Result<BTreeMap<u64, Vec<String>>, RetrieveError> {
    let scorer = ConstantScorer(0.5);
    let mut out = BTreeMap::new();
    for claim in &dataset.claims {
        let ranked = docselect::select_documents(&claim.text, index, corpus, &scorer, k1)?;
        out.insert(
            claim.claim_id,
            ranked.docs.iter().map(|d| d.page_id.clone()).collect(),
        );
    }
    Ok(out)
}

/// Build the training examples for one epoch.
///
/// First pass: positives are gold sentences that lie inside the claim's
/// candidate documents; negatives are sampled uniformly from the remaining
/// non-gold sentences of those documents at the annealed ratio. Claims with
/// no verdict evidence contribute one ratio's worth of negatives only.
///
/// Second pass: positives are (root, partner) pairs inside one gold set
/// where the partner's page is hyperlinked from the root's line and the
/// root's page was retrieved; negatives are sampled from the non-gold
/// sentences of the root's linked pages. Gold roots without partners still
/// contribute negatives so the model learns to leave single-sentence sets
/// unexpanded.
pub fn build_training_pairs(
    pass: RetrieverPass,
    dataset: &Dataset,
    corpus: &Corpus,
    docs_by_claim: &BTreeMap<u64, Vec<String>>,
    vocab: &Vocab,
    t_max: usize,
    epoch: usize,
    config: &RetrieverTrainConfig,
) -> Result<(Vec<TrainPair>, PairBuildStats), RetrieveError> {
    config.validate()?;
    let ratio = negatives_per_positive(config.negative_ratio, config.negative_decay, epoch);
    let mut rng = Rng::for_stream(
        config.seed,
        &format!("retriever-pairs-pass{}-epoch{}", pass.number(), epoch),
    );
    let mut pairs = Vec::new();
    let mut stats = PairBuildStats::default();
    for claim in &dataset.claims {
        let docs = docs_by_claim
            .get(&claim.claim_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        match pass {
            RetrieverPass::One => pass1_examples(
                claim, docs, corpus, vocab, t_max, ratio, &mut rng, &mut pairs, &mut stats,
            )?,
            RetrieverPass::Two => pass2_examples(
                claim, docs, corpus, vocab, t_max, ratio, &mut rng, &mut pairs, &mut stats,
            )?,
        }
    }
    Ok((pairs, stats))
}

#[allow(clippy::too_many_arguments)]
fn pass1_examples(
    claim: &crate::corpus::Claim,
    docs: &[String],
    corpus: &Corpus,
    vocab: &Vocab,
    t_max: usize,
    ratio: usize,
    rng: &mut Rng,
    pairs: &mut Vec<TrainPair>,
    stats: &mut PairBuildStats,
) -> Result<(), RetrieveError> {
    let doc_set: BTreeSet<&str> = docs.iter().map(String::as_str).collect();
    let gold: BTreeSet<&SentenceRef> = claim.gold_sets.iter().flatten().collect();
    let mut n_pos = 0usize;
    for sentence in &gold {
        if !doc_set.contains(sentence.page_id.as_str()) {
            continue;
        }
        let Some(text) = corpus.sentence(sentence) else {
            continue;
        };
        if text.trim().is_empty() {
            continue;
        }
        pairs.push(TrainPair {
            claim_id: claim.claim_id,
            input: build_pair_input(vocab, t_max, &claim.text, text)?,
            positive: true,
        });
        n_pos += 1;
    }
    let negative_target = if claim.label == Label::Nei {
        ratio
    } else {
        if n_pos == 0 {
            stats.skipped_claims += 1;
            return Ok(());
        }
        ratio * n_pos
    };
    stats.positives += n_pos;
    let mut pool: Vec<&str> = Vec::new();
    for page in docs {
        let Some(doc) = corpus.get(page) else {
            continue;
        };
        for (line, text) in doc.lines.iter().enumerate() {
            if text.trim().is_empty() {
                continue;
            }
            if gold
                .iter()
                .any(|g| g.line == line && g.page_id == doc.page_id)
            {
                continue;
            }
            pool.push(text);
        }
    }
    let k = negative_target.min(pool.len());
    for idx in rng.sample_indices(pool.len(), k) {
        pairs.push(TrainPair {
            claim_id: claim.claim_id,
            input: build_pair_input(vocab, t_max, &claim.text, pool[idx])?,
            positive: false,
        });
    }
    stats.negatives += k;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pass2_examples(
    claim: &crate::corpus::Claim,
    docs: &[String],
    corpus: &Corpus,
    vocab: &Vocab,
    t_max: usize,
    ratio: usize,
    rng: &mut Rng,
    pairs: &mut Vec<TrainPair>,
    stats: &mut PairBuildStats,
) -> Result<(), RetrieveError> {
    if claim.label == Label::Nei {
        return Ok(());
    }
    let doc_set: BTreeSet<&str> = docs.iter().map(String::as_str).collect();
    let gold: BTreeSet<&SentenceRef> = claim.gold_sets.iter().flatten().collect();
    let has_multi = claim.gold_sets.iter().any(|set| set.len() >= 2);
    let mut positives_made = 0usize;
    for set in &claim.gold_sets {
        for root in set {
            if !doc_set.contains(root.page_id.as_str()) {
                continue;
            }
            let Some(root_doc) = corpus.get(&root.page_id) else {
                continue;
            };
            let Some(root_text) = root_doc.line(root.line) else {
                continue;
            };
            if root_text.trim().is_empty() {
                continue;
            }
            let links = root_doc.links_from(root.line);
            if links.is_empty() {
                continue;
            }
            let mut made_here = 0usize;
            for partner in set {
                if partner == root || !links.contains(&partner.page_id) {
                    continue;
                }
                let Some(text) = corpus.sentence(partner) else {
                    continue;
                };
                if text.trim().is_empty() {
                    continue;
                }
                pairs.push(TrainPair {
                    claim_id: claim.claim_id,
                    input: build_triple_input(vocab, t_max, &claim.text, root_text, text)?,
                    positive: true,
                });
                made_here += 1;
            }
            positives_made += made_here;
            stats.positives += made_here;
            let mut pool: Vec<&str> = Vec::new();
            for target in links {
                let Some(target_doc) = corpus.get(target) else {
                    continue;
                };
                for (line, text) in target_doc.lines.iter().enumerate() {
                    if text.trim().is_empty() {
                        continue;
                    }
                    if gold
                        .iter()
                        .any(|g| g.line == line && g.page_id == target_doc.page_id)
                    {
                        continue;
                    }
                    pool.push(text);
                }
            }
            let k = (ratio * made_here.max(1)).min(pool.len());
            for idx in rng.sample_indices(pool.len(), k) {
                pairs.push(TrainPair {
                    claim_id: claim.claim_id,
                    input: build_triple_input(vocab, t_max, &claim.text, root_text, pool[idx])?,
                    positive: false,
                });
            }
            stats.negatives += k;
        }
    }
    if has_multi && positives_made == 0 {
        stats.skipped_claims += 1;
    }
    Ok(())
}

// ── Recall evaluation ────────────────────────────────────────────────────────

/// Recall over the verdict-bearing claims of a split.
///
/// First pass: the fraction of claims where at least one selected root is a
/// gold sentence. Second pass: the fraction where some gold set is fully
/// contained in the flattened retrieved sentences.
pub fn eval_recall(
    pass: RetrieverPass,
    model: &RetrieverModel,
    pass1_for_eval: Option<&RetrieverModel>,
    split: &Dataset,
    corpus: &Corpus,
    index: &TitleIndex,
    k1: usize,
    params: &RetrieveParams,
) -> Result<f64, RetrieveError> {
    if pass == RetrieverPass::Two && pass1_for_eval.is_none() {
        return Err(RetrieveError::MissingPassOneModel);
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for claim in &split.claims {
        if claim.label == Label::Nei {
            continue;
        }
        total += 1;
        match pass {
            RetrieverPass::One => {
                let ranked = docselect::select_documents(&claim.text, index, corpus, model, k1)?;
                let doc_ids: Vec<String> =
                    ranked.docs.iter().map(|d| d.page_id.clone()).collect();
                let scored = score_documents(model, &claim.text, corpus, &doc_ids)?;
                let roots = select_pass1(&scored, params.k2, params.th_evi1);
                let gold: BTreeSet<&SentenceRef> = claim.gold_sets.iter().flatten().collect();
                if roots.iter().any(|r| gold.contains(&r.sentence)) {
                    hits += 1;
                }
            }
            RetrieverPass::Two => {
                let pass1 = pass1_for_eval.expect("checked above");
                let retrieval =
                    retrieve_for_claim(pass1, model, &claim.text, corpus, index, k1, params)?;
                let mut flat: BTreeSet<&SentenceRef> = BTreeSet::new();
                for set in &retrieval.sets {
                    for s in set.sentences() {
                        flat.insert(&s.sentence);
                    }
                }
                if claim
                    .gold_sets
                    .iter()
                    .any(|set| set.iter().all(|r| flat.contains(r)))
                {
                    hits += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(RetrieveError::Invalid(
            "split has no verdict-bearing claims to measure recall on".into(),
        ));
    }
    Ok(hits as f64 / total as f64)
}

/// Per-epoch training record. Epoch 0 is the untrained baseline: no
/// examples, no loss, recall as initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub examples: usize,
    pub mean_loss: Option<f64>,
    pub dev_recall: f64,
}

/// Training history plus which epoch's weights were kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_recall: f64,
    /// Example-construction stats per trained epoch.
    pub pair_stats: Vec<PairBuildStats>,
}

/// Train one retriever with 2-way cross-entropy over (m⁺, m⁻), evaluating
/// recall on the dev split after every epoch and restoring the weights of
/// the best epoch (the untrained baseline counts) at the end. Second-pass
/// training needs the finished first-pass model to drive the evaluation.
#[allow(clippy::too_many_arguments)]
pub fn train_retriever(
    pass: RetrieverPass,
    model: &mut RetrieverModel,
    pass1_for_eval: Option<&RetrieverModel>,
    train: &Dataset,
    dev: &Dataset,
    corpus: &Corpus,
    k1: usize,
    retrieve: &RetrieveParams,
    config: &RetrieverTrainConfig,
) -> Result<TrainOutcome, RetrieveError> {
    config.validate()?;
    retrieve.validate()?;
    if k1 == 0 {
        return Err(RetrieveError::Invalid(
            "document cutoff must be at least 1".into(),
        ));
    }
    if pass == RetrieverPass::Two && pass1_for_eval.is_none() {
        return Err(RetrieveError::MissingPassOneModel);
    }
    let index = TitleIndex::build(corpus);
    let docs_by_claim = candidate_docs(train, corpus, &index, k1)?;
    let t_max = model.encoder.config.t_max;

    let baseline = eval_recall(
        pass,
        model,
        pass1_for_eval,
        dev,
        corpus,
        &index,
        k1,
        retrieve,
    )?;
    let mut history = vec![EpochStats {
        epoch: 0,
        examples: 0,
        mean_loss: None,
        dev_recall: baseline,
    }];
    let mut best_epoch = 0usize;
    let mut best_recall = baseline;
    let mut best_params = model.params.clone();
    let mut pair_stats = Vec::new();
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::with_lr(config.lr)
    })?;

    for epoch in 1..=config.epochs {
        let (mut pairs, stats) = build_training_pairs(
            pass,
            train,
            corpus,
            &docs_by_claim,
            &model.vocab,
            t_max,
            epoch - 1,
            config,
        )?;
        pair_stats.push(stats);
        if pairs.is_empty() {
            return Err(RetrieveError::EmptyTrainingSet {
                pass: pass.number(),
                epoch,
            });
        }
        let mut rng = Rng::for_stream(
            config.seed,
            &format!("retriever-shuffle-pass{}-epoch{}", pass.number(), epoch),
        );
        rng.shuffle(&mut pairs);
        let mut loss_sum = 0.0;
        for chunk in pairs.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let inv = 1.0 / chunk.len() as f64;
            let mut total: Option<VarId> = None;
            for pair in chunk {
                let logits = model.logits_on_tape(&mut tape, &pair.input)?;
                let gold = if pair.positive { 0 } else { 1 };
                let ce = tape.cross_entropy(logits, gold)?;
                let scaled = tape.scale(ce, inv)?;
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
        let recall = eval_recall(
            pass,
            model,
            pass1_for_eval,
            dev,
            corpus,
            &index,
            k1,
            retrieve,
        )?;
        history.push(EpochStats {
            epoch,
            examples: pairs.len(),
            mean_loss: Some(loss_sum / pairs.len() as f64),
            dev_recall: recall,
        });
        if recall > best_recall {
            best_recall = recall;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_recall,
        pair_stats,
    })
}

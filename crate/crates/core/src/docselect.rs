//! Candidate document selection by title matching.
//!
//! Claims name their subjects, so candidate pages are found by matching
//! claim spans against page titles: an exact pass, an article-stripped
//! pass, and a singularized pass. Titles that differ only by a trailing
//! parenthetical qualifier (several pages named "Savages -LRB-...-RRB-")
//! are ambiguous for a bare span and get ranked by a relevance scorer
//! against each page's first line.

use crate::corpus::Corpus;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DocSelectError {
    #[error("document cutoff must be at least 1, got {0}")]
    InvalidCutoff(usize),
}

/// Relevance of a single sentence to a claim, as a probability in [0, 1].
/// Implemented by the trained sentence retriever; tests use stubs.
pub trait PairScorer {
    fn score_pair(&self, claim: &str, sentence: &str) -> f64;
}

// ── Candidates ───────────────────────────────────────────────────────────────

/// How a candidate page's title matched the claim. Order is match quality:
/// unambiguous kinds rank above disambiguated ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchKind {
    Exact,
    DeArticled,
    Singularized,
    Disambiguated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocCandidate {
    pub page_id: String,
    pub match_kind: MatchKind,
    /// 1.0 for unambiguous title matches; the scorer's probability once a
    /// disambiguated candidate has been ranked (0.0 before ranking).
    pub relevance: f64,
}

// ── Span extraction ──────────────────────────────────────────────────────────

const MAX_SPAN_TOKENS: usize = 7;

fn clean_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect()
}

fn starts_uppercase(token: &str) -> bool {
    token.chars().next().map(|c| c.is_uppercase()).unwrap_or(false)
}

/// All contiguous token n-grams (n ≤ 7) that begin with an uppercase-initial
/// token, plus the whole claim; deduplicated, longest first.
pub fn extract_spans(claim: &str) -> Vec<String> {
    let tokens = clean_tokens(claim);
    let mut spans: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut push = |s: String, spans: &mut Vec<String>| {
        if !s.is_empty() && seen.insert(s.clone()) {
            spans.push(s);
        }
    };
    push(claim.trim().to_string(), &mut spans);
    for start in 0..tokens.len() {
        if !starts_uppercase(tokens[start]) {
            continue;
        }
        let top = MAX_SPAN_TOKENS.min(tokens.len() - start);
        for n in 1..=top {
            push(tokens[start..start + n].join(" "), &mut spans);
        }
    }
    spans.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()));
    spans
}

// ── Title index ──────────────────────────────────────────────────────────────

/// Page titles keyed two ways: the full title, and the title with a trailing
/// parenthetical qualifier removed (the ambiguous "bare" form).
pub struct TitleIndex {
    exact: BTreeSet<String>,
    ambiguous: BTreeMap<String, Vec<String>>,
}

/// "Savages -LRB-2012 film-RRB-" → "Savages"; also plain "Name (thing)".
fn strip_parenthetical(title: &str) -> Option<String> {
    let bare = if title.ends_with("-RRB-") {
        title.rfind(" -LRB-").map(|i| &title[..i])
    } else if title.ends_with(')') {
        title.rfind(" (").map(|i| &title[..i])
    } else {
        None
    }?;
    let bare = bare.trim();
    if bare.is_empty() || bare == title {
        None
    } else {
        Some(bare.to_string())
    }
}

impl TitleIndex {
    pub fn build(corpus: &Corpus) -> TitleIndex {
        let mut exact = BTreeSet::new();
        let mut ambiguous: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for doc in corpus.iter() {
            exact.insert(doc.page_id.clone());
            if let Some(bare) = strip_parenthetical(&doc.page_id) {
                ambiguous.entry(bare).or_default().push(doc.page_id.clone());
            }
        }
        for pages in ambiguous.values_mut() {
            pages.sort();
        }
        TitleIndex { exact, ambiguous }
    }

    pub fn len(&self) -> usize {
        self.exact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }

    /// Indexed page titles, sorted.
    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.exact.iter().map(|s| s.as_str())
    }

    /// Bare titles that map to qualified pages, with their targets sorted.
    pub fn ambiguous_titles(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.ambiguous.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

// ── Matching passes ──────────────────────────────────────────────────────────

fn is_article(token: &str) -> bool {
    matches!(token.to_ascii_lowercase().as_str(), "a" | "an" | "the")
}

fn strip_articles(span: &str) -> Option<String> {
    let kept: Vec<&str> = span.split_whitespace().filter(|t| !is_article(t)).collect();
    if kept.is_empty() {
        return None;
    }
    let out = kept.join(" ");
    if out == span {
        None
    } else {
        Some(out)
    }
}

fn singularize_token(token: &str) -> String {
    if token.chars().count() > 3 && token.ends_with('s') && !token.ends_with("ss") {
        token[..token.len() - 1].to_string()
    } else {
        token.to_string()
    }
}

fn singularize(span: &str) -> Option<String> {
    let out: Vec<String> = span.split_whitespace().map(|t| singularize_token(t)).collect();
    let out = out.join(" ");
    if out == span {
        None
    } else {
        Some(out)
    }
}

fn uppercase_initial(key: &str) -> Option<String> {
    let mut chars = key.chars();
    let first = chars.next()?;
    if first.is_uppercase() {
        return None;
    }
    Some(first.to_uppercase().collect::<String>() + chars.as_str())
}

/// Match spans against the index in three passes — exact, article-stripped,
/// singularized — keeping the first match kind per page. Bare-title hits in
/// any pass come back as disambiguated candidates with relevance 0.0, to be
/// scored during ranking. Lookups retry with an upper-cased initial, since
/// titles capitalize their first letter.
pub fn match_titles(spans: &[String], index: &TitleIndex) -> Vec<DocCandidate> {
    let mut out: Vec<DocCandidate> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let passes: [(MatchKind, fn(&str) -> Option<String>); 3] = [
        (MatchKind::Exact, |s| Some(s.to_string())),
        (MatchKind::DeArticled, strip_articles),
        (MatchKind::Singularized, singularize),
    ];
    for (kind, transform) in passes {
        for span in spans {
            let Some(key) = transform(span) else { continue };
            let mut keys = vec![key.clone()];
            if let Some(upper) = uppercase_initial(&key) {
                keys.push(upper);
            }
            for key in keys {
                if index.exact.contains(&key) && seen.insert(key.clone()) {
                    out.push(DocCandidate {
                        page_id: key.clone(),
                        match_kind: kind,
                        relevance: 1.0,
                    });
                }
                if let Some(pages) = index.ambiguous.get(&key) {
                    for page in pages {
                        if seen.insert(page.clone()) {
                            out.push(DocCandidate {
                                page_id: page.clone(),
                                match_kind: MatchKind::Disambiguated,
                                relevance: 0.0,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

// ── Ranking ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDocs {
    pub docs: Vec<DocCandidate>,
    /// Candidates naming pages absent from the corpus, dropped from ranking.
    pub dropped_missing: usize,
}

/// Rank candidates and keep the strongest `cutoff`. Unambiguous title
/// matches come first, ordered by match quality then page id; disambiguated
/// candidates follow, ordered by the scorer's probability for (claim, first
/// page line), ties broken by page id.
pub fn rank_documents(
    claim: &str,
    candidates: &[DocCandidate],
    corpus: &Corpus,
    scorer: &dyn PairScorer,
    cutoff: usize,
) -> Result<RankedDocs, DocSelectError> {
    if cutoff == 0 {
        return Err(DocSelectError::InvalidCutoff(cutoff));
    }
    let mut unambiguous: Vec<DocCandidate> = Vec::new();
    let mut disambiguated: Vec<DocCandidate> = Vec::new();
    let mut dropped_missing = 0usize;
    for cand in candidates {
        let Some(doc) = corpus.get(&cand.page_id) else {
            dropped_missing += 1;
            continue;
        };
        if cand.match_kind == MatchKind::Disambiguated {
            let first_line = doc.line(0).unwrap_or("");
            let mut scored = cand.clone();
            scored.relevance = scorer.score_pair(claim, first_line);
            disambiguated.push(scored);
        } else {
            unambiguous.push(cand.clone());
        }
    }
    unambiguous.sort_by(|a, b| {
        a.match_kind
            .cmp(&b.match_kind)
            .then_with(|| a.page_id.cmp(&b.page_id))
    });
    disambiguated.sort_by(|a, b| {
        b.relevance
            .partial_cmp(&a.relevance)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.page_id.cmp(&b.page_id))
    });
    let mut docs = unambiguous;
    docs.append(&mut disambiguated);
    docs.truncate(cutoff);
    Ok(RankedDocs {
        docs,
        dropped_missing,
    })
}

/// Convenience wrapper: spans → matches → ranked top documents.
pub fn select_documents(
    claim: &str,
    index: &TitleIndex,
    corpus: &Corpus,
    scorer: &dyn PairScorer,
    cutoff: usize,
) -> Result<RankedDocs, DocSelectError> {
    let spans = extract_spans(claim);
    let candidates = match_titles(&spans, index);
    rank_documents(claim, &candidates, corpus, scorer, cutoff)
}

//! Scoring: evidence trimming and matching, label and strict rates, the
//! oracle score identity, breakdowns, attention accuracy, and report
//! emission.

use hesm_core::corpus::{Claim, Dataset, Label, SentenceRef};
use hesm_core::feverscore::{
    attention_accurate, evidence_hit, label_accuracy, load_predictions, recall_and_ofever,
    save_predictions, score_predictions, strict_fever, trimmed_evidence, MetricReport,
    PredictionRecord, ScoreError, SetWeight, EVIDENCE_CAP,
};
use hesm_core::tensorkit::Rng;

// ── Helpers ──────────────────────────────────────────────────────────────────

fn sref(page: &str, line: usize) -> SentenceRef {
    SentenceRef::new(page, line)
}

fn claim(id: u64, label: Label, gold: Vec<Vec<SentenceRef>>) -> Claim {
    Claim::new(id, format!("claim {id}"), label, gold).unwrap()
}

fn pred(id: u64, label: Label, evidence: Vec<SentenceRef>) -> PredictionRecord {
    PredictionRecord {
        claim_id: id,
        predicted_label: label,
        evidence,
        contextual_weights: None,
        noncontextual_weights: None,
    }
}

fn weights(pairs: &[(f64, bool)]) -> Option<Vec<SetWeight>> {
    Some(
        pairs
            .iter()
            .map(|&(weight, matches_gold)| SetWeight {
                weight,
                matches_gold,
            })
            .collect(),
    )
}

// ── Evidence trimming and matching ───────────────────────────────────────────

#[test]
fn trimming_dedupes_then_caps_at_five() {
    let raw = vec![
        sref("A", 0),
        sref("B", 1),
        sref("A", 0), // repeat is dropped, not double-counted
        sref("C", 2),
        sref("D", 3),
        sref("E", 4),
        sref("F", 5), // sixth distinct sentence falls off
    ];
    let trimmed = trimmed_evidence(&raw);
    assert_eq!(trimmed.len(), EVIDENCE_CAP);
    assert_eq!(
        trimmed,
        vec![sref("A", 0), sref("B", 1), sref("C", 2), sref("D", 3), sref("E", 4)]
    );
    assert!(trimmed_evidence(&[]).is_empty());
}

#[test]
fn evidence_hit_requires_one_whole_gold_set() {
    let gold = vec![vec![sref("D1", 3), sref("D2", 7)]];
    let hit = vec![sref("D1", 3), sref("D4", 0), sref("D2", 7)];
    assert!(evidence_hit(&trimmed_evidence(&hit), &gold));
    let miss = vec![sref("D1", 3), sref("D4", 0)];
    assert!(!evidence_hit(&trimmed_evidence(&miss), &gold));

    // A one-sentence gold set sitting in sixth place is trimmed away.
    let late = vec![
        sref("X", 0),
        sref("X", 1),
        sref("X", 2),
        sref("X", 3),
        sref("X", 4),
        sref("G", 0),
    ];
    let single_gold = vec![vec![sref("G", 0)]];
    assert!(!evidence_hit(&trimmed_evidence(&late), &single_gold));
    assert!(evidence_hit(&trimmed_evidence(&late[1..]), &single_gold));
}

#[test]
fn hit_is_monotone_under_additions_within_the_cap() {
    let pages = ["A", "B", "C", "D"];
    let mut rng = Rng::seeded(41);
    for _ in 0..200 {
        let gold: Vec<Vec<SentenceRef>> = vec![(0..1 + rng.below(2))
            .map(|_| sref(pages[rng.below(4)], rng.below(3)))
            .collect()];
        let base: Vec<SentenceRef> = (0..rng.below(4))
            .map(|_| sref(pages[rng.below(4)], rng.below(3)))
            .collect();
        let extra = sref(pages[rng.below(4)], rng.below(3));
        let mut grown = base.clone();
        grown.push(extra.clone());
        let before = evidence_hit(&trimmed_evidence(&base), &gold);
        let after = evidence_hit(&trimmed_evidence(&grown), &gold);
        assert!(
            !before || after,
            "adding a sentence within the cap flipped a hit to a miss: {base:?} + {extra:?}"
        );
    }
}

// ── Label accuracy and alignment ─────────────────────────────────────────────

#[test]
fn label_accuracy_counts_matches_regardless_of_order() {
    let golds = Dataset::new(
        "dev",
        vec![
            claim(1, Label::Supported, vec![vec![sref("A", 0)]]),
            claim(2, Label::Refuted, vec![vec![sref("B", 0)]]),
            claim(3, Label::Nei, vec![]),
            claim(4, Label::Supported, vec![vec![sref("C", 0)]]),
        ],
    )
    .unwrap();
    let all_right = vec![
        pred(1, Label::Supported, vec![]),
        pred(2, Label::Refuted, vec![]),
        pred(3, Label::Nei, vec![]),
        pred(4, Label::Supported, vec![]),
    ];
    assert_eq!(label_accuracy(&all_right, &golds).unwrap(), 1.0);

    let half = vec![
        pred(1, Label::Supported, vec![]),
        pred(2, Label::Supported, vec![]),
        pred(3, Label::Refuted, vec![]),
        pred(4, Label::Supported, vec![]),
    ];
    assert_eq!(label_accuracy(&half, &golds).unwrap(), 0.5);
    let mut reversed = half.clone();
    reversed.reverse();
    assert_eq!(label_accuracy(&reversed, &golds).unwrap(), 0.5);
}

#[test]
fn alignment_errors_name_the_claims() {
    let golds = Dataset::new(
        "dev",
        vec![
            claim(1, Label::Nei, vec![]),
            claim(2, Label::Nei, vec![]),
        ],
    )
    .unwrap();
    let missing = vec![pred(1, Label::Nei, vec![])];
    match label_accuracy(&missing, &golds).unwrap_err() {
        ScoreError::MissingPredictions(ids) => assert_eq!(ids, vec![2]),
        other => panic!("expected missing-prediction error, got {other}"),
    }
    let doubled = vec![
        pred(1, Label::Nei, vec![]),
        pred(1, Label::Nei, vec![]),
        pred(2, Label::Nei, vec![]),
    ];
    match label_accuracy(&doubled, &golds).unwrap_err() {
        ScoreError::DuplicatePredictions(ids) => assert_eq!(ids, vec![1]),
        other => panic!("expected duplicate-prediction error, got {other}"),
    }
    let stray = vec![
        pred(1, Label::Nei, vec![]),
        pred(2, Label::Nei, vec![]),
        pred(9, Label::Nei, vec![]),
    ];
    match label_accuracy(&stray, &golds).unwrap_err() {
        ScoreError::UnknownClaims(ids) => assert_eq!(ids, vec![9]),
        other => panic!("expected unknown-claim error, got {other}"),
    }
    let empty = Dataset::new("dev", vec![]).unwrap();
    assert!(matches!(
        label_accuracy(&[], &empty),
        Err(ScoreError::Invalid(_))
    ));
}

#[test]
fn strict_score_requires_evidence_only_for_verdict_bearing_claims() {
    let golds = Dataset::new(
        "dev",
        vec![
            claim(1, Label::Supported, vec![vec![sref("A", 0)]]),
            claim(2, Label::Nei, vec![]),
        ],
    )
    .unwrap();
    // Right label, wrong evidence: the supported claim does not count.
    let preds = vec![
        pred(1, Label::Supported, vec![sref("Z", 9)]),
        pred(2, Label::Nei, vec![sref("Z", 9)]),
    ];
    assert_eq!(strict_fever(&preds, &golds).unwrap(), 0.5);
    assert_eq!(label_accuracy(&preds, &golds).unwrap(), 1.0);
}

// ── Hand-enumerated six-claim fixture ────────────────────────────────────────

fn six_claim_golds() -> Dataset {
    Dataset::new(
        "dev",
        vec![
            claim(1, Label::Supported, vec![vec![sref("P1", 0)]]),
            claim(2, Label::Supported, vec![vec![sref("P2", 0), sref("P2", 1)]]),
            claim(
                3,
                Label::Refuted,
                vec![vec![sref("P3", 0)], vec![sref("P3", 1), sref("P3", 2)]],
            ),
            claim(4, Label::Refuted, vec![vec![sref("P4", 0)]]),
            claim(5, Label::Nei, vec![]),
            claim(6, Label::Nei, vec![]),
        ],
    )
    .unwrap()
}

fn six_claim_preds() -> Vec<PredictionRecord> {
    let mut one = pred(1, Label::Supported, vec![sref("P1", 0)]);
    one.contextual_weights = weights(&[(0.7, true), (0.3, false)]);
    one.noncontextual_weights = weights(&[(0.6, true), (0.4, false)]);
    let mut two = pred(
        2,
        Label::Supported,
        vec![sref("P2", 0), sref("P2", 1), sref("P9", 9)],
    );
    two.contextual_weights = weights(&[(0.5, true), (0.5, false)]);
    two.noncontextual_weights = weights(&[(0.9, true), (0.1, false)]);
    // Claim 3 hits through its second gold set; no weights were reported.
    let three = pred(3, Label::Refuted, vec![sref("P3", 1), sref("P3", 2)]);
    // Claim 4 retrieves the wrong sentence entirely.
    let four = pred(4, Label::Refuted, vec![sref("P5", 5)]);
    let five = pred(5, Label::Nei, vec![sref("P6", 0)]);
    let six = pred(6, Label::Nei, vec![]);
    vec![one, two, three, four, five, six]
}

#[test]
fn six_claim_fixture_reproduces_hand_counts() {
    let golds = six_claim_golds();
    let preds = six_claim_preds();
    let report = score_predictions(&preds, &golds).unwrap();

    assert_eq!(report.claims, 6);
    assert_eq!(report.label_accuracy, 1.0);
    assert!((report.fever - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(report.recall, Some(0.75));
    assert!((report.ofever - 5.0 / 6.0).abs() < 1e-12);

    let s = &report.by_label.supported;
    assert_eq!((s.claims, s.label_accuracy, s.fever), (2, Some(1.0), Some(1.0)));
    let r = &report.by_label.refuted;
    assert_eq!((r.claims, r.label_accuracy, r.fever), (2, Some(1.0), Some(0.5)));
    let n = &report.by_label.nei;
    assert_eq!((n.claims, n.label_accuracy, n.fever), (2, Some(1.0), Some(1.0)));

    let overall = &report.by_cardinality.overall;
    assert_eq!(overall.claims, 6);
    assert_eq!(overall.fever, report.by_cardinality.overall.fever);
    let single = &report.by_cardinality.single;
    assert_eq!((single.claims, single.fever), (2, Some(0.5)));
    let multi = &report.by_cardinality.multi;
    assert_eq!((multi.claims, multi.fever), (1, Some(1.0)));
    let any = &report.by_cardinality.any;
    assert_eq!((any.claims, any.fever), (1, Some(1.0)));
    assert_eq!(
        single.claims + multi.claims + any.claims + 2,
        overall.claims,
        "verdict-bearing slices plus NEI cover everything"
    );

    // Three claims are eligible (gold evidence retrieved); claim 3 has no
    // weights. Contextual: the tie on claim 2 fails the strict rule.
    let c = &report.contextual_attention;
    assert_eq!((c.eligible, c.skipped_missing_weights, c.accuracy), (3, 1, Some(0.5)));
    let nc = &report.noncontextual_attention;
    assert_eq!((nc.eligible, nc.skipped_missing_weights, nc.accuracy), (3, 1, Some(1.0)));
}

// ── The oracle-score identity ────────────────────────────────────────────────

fn balanced_run(verdict_claims: usize, hits: usize) -> (Vec<PredictionRecord>, Dataset) {
    assert!(hits <= verdict_claims && verdict_claims % 2 == 0);
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    for i in 0..verdict_claims {
        let id = i as u64;
        let label = if i % 2 == 0 { Label::Supported } else { Label::Refuted };
        let gold_ref = sref(&format!("G{i}"), 0);
        golds.push(claim(id, label, vec![vec![gold_ref.clone()]]));
        let evidence = if i < hits { vec![gold_ref] } else { vec![sref("Miss", 0)] };
        preds.push(pred(id, label, evidence));
    }
    for i in 0..verdict_claims / 2 {
        let id = (verdict_claims + i) as u64;
        golds.push(claim(id, Label::Nei, vec![]));
        preds.push(pred(id, Label::Nei, vec![]));
    }
    (preds, Dataset::new("dev", golds).unwrap())
}

#[test]
fn balanced_recall_ties_the_oracle_score_to_the_published_identity() {
    // One third NEI, two thirds verdict-bearing: the oracle score must
    // equal (2·recall + 1) / 3.
    for (verdict, hits, want_recall) in [(200, 181, 0.905), (500, 449, 0.898), (250, 217, 0.868)] {
        let (preds, golds) = balanced_run(verdict, hits);
        let (recall, ofever) = recall_and_ofever(&preds, &golds).unwrap();
        let recall = recall.expect("verdict-bearing claims exist");
        assert!((recall - want_recall).abs() < 1e-12);
        assert!(
            (ofever - (2.0 * recall + 1.0) / 3.0).abs() < 1e-9,
            "oracle score {ofever} breaks the balanced identity for recall {recall}"
        );
    }
    // All NEI: recall is undefined, the oracle score is perfect.
    let nei_only = Dataset::new("dev", vec![claim(1, Label::Nei, vec![])]).unwrap();
    let (recall, ofever) =
        recall_and_ofever(&[pred(1, Label::Supported, vec![])], &nei_only).unwrap();
    assert_eq!(recall, None);
    assert_eq!(ofever, 1.0);
}

// ── Attention rule ───────────────────────────────────────────────────────────

#[test]
fn attention_rule_demands_strict_separation() {
    let w = |pairs: &[(f64, bool)]| weights(pairs).unwrap();
    // One matching set holds the top weight.
    assert!(attention_accurate(&w(&[(0.2, false), (0.5, true), (0.3, false)])));
    // Every matching set outweighs every non-matching one.
    assert!(attention_accurate(&w(&[(0.4, true), (0.1, false), (0.5, true)])));
    // A tie is not strict separation.
    assert!(!attention_accurate(&w(&[(0.5, true), (0.5, false)])));
    // All sets matching is trivially separated.
    assert!(attention_accurate(&w(&[(0.3, true), (0.7, true)])));
    // No matching set can never be separated.
    assert!(!attention_accurate(&w(&[(0.6, false), (0.4, false)])));
}

// ── Invariants over randomized runs ──────────────────────────────────────────

#[test]
fn random_runs_keep_the_strict_score_below_both_bounds() {
    let pages = ["A", "B", "C"];
    let labels = [Label::Supported, Label::Refuted, Label::Nei];
    for trial in 0..60 {
        let mut rng = Rng::for_stream(trial, "feverscore-bounds");
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for id in 0..12u64 {
            let label = labels[rng.below(3)];
            let gold = match label {
                Label::Nei => vec![],
                _ => (0..1 + rng.below(2))
                    .map(|_| {
                        (0..1 + rng.below(2))
                            .map(|_| sref(pages[rng.below(3)], rng.below(3)))
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            };
            golds.push(claim(id, label, gold));
            let evidence = (0..rng.below(7))
                .map(|_| sref(pages[rng.below(3)], rng.below(3)))
                .collect();
            preds.push(pred(id, labels[rng.below(3)], evidence));
        }
        let golds = Dataset::new("dev", golds).unwrap();
        let report = score_predictions(&preds, &golds).unwrap();
        assert!(report.fever <= report.label_accuracy + 1e-12);
        assert!(report.fever <= report.ofever + 1e-12);
        for v in [report.label_accuracy, report.fever, report.ofever] {
            assert!((0.0..=1.0).contains(&v));
        }
        if let Some(r) = report.recall {
            assert!((0.0..=1.0).contains(&r));
        }
        // The standalone entry points agree with the assembled report.
        assert_eq!(label_accuracy(&preds, &golds).unwrap(), report.label_accuracy);
        assert_eq!(strict_fever(&preds, &golds).unwrap(), report.fever);
        let (recall, ofever) = recall_and_ofever(&preds, &golds).unwrap();
        assert_eq!(recall, report.recall);
        assert_eq!(ofever, report.ofever);
    }
}

// ── Persistence and emission ─────────────────────────────────────────────────

#[test]
fn predictions_round_trip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.jsonl");
    let mut records = six_claim_preds();
    records[0].evidence.push(sref("Extra Page", 12));
    save_predictions(&path, &records).unwrap();
    let loaded = load_predictions(&path).unwrap();
    assert_eq!(loaded, records);
}

#[test]
fn malformed_prediction_lines_name_their_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.jsonl");
    let good = serde_json::to_string(&pred(1, Label::Nei, vec![])).unwrap();
    std::fs::write(&path, format!("{good}\n\nnot json\n")).unwrap();
    let err = load_predictions(&path).unwrap_err();
    assert!(
        err.to_string().contains("line 3"),
        "error should name the bad line: {err}"
    );
}

#[test]
fn reports_serialize_to_json_and_csv() {
    let report = score_predictions(&six_claim_preds(), &six_claim_golds()).unwrap();
    let json = report.to_json();
    let back: MetricReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);

    let csv = report.to_csv();
    assert!(csv.starts_with("section,key,value\n"));
    assert!(csv.contains("overall,label_accuracy,1.000000"));
    assert!(csv.contains("retrieval,recall,0.750000"));
    assert!(csv.contains("attention:noncontextual,accuracy,1.000000"));

    // Undefined rates leave the value cell empty.
    let nei_only = Dataset::new("dev", vec![claim(1, Label::Nei, vec![])]).unwrap();
    let sparse = score_predictions(&[pred(1, Label::Nei, vec![])], &nei_only).unwrap();
    assert_eq!(sparse.recall, None);
    let csv = sparse.to_csv();
    assert!(csv.contains("retrieval,recall,\n"));
    assert!(csv.contains("cardinality:single,label_accuracy,\n"));
    assert!(csv.contains("attention:contextual,accuracy,\n"));
}

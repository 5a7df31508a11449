//! Corpus layer: domain types, upstream-format ingestion, and the
//! synthetic world generator.

use hesm_core::corpus::{
    ingest_claims, ingest_wiki, normalize_page_id, synth_corpus, Claim, Corpus, Dataset, Document,
    Label, SentenceRef,
};
use std::collections::BTreeMap;
use std::io::Write;

// ── Domain types ─────────────────────────────────────────────────────────────

#[test]
fn label_parse_accepts_both_spellings() {
    assert_eq!(Label::parse("SUPPORTED"), Some(Label::Supported));
    assert_eq!(Label::parse("SUPPORTS"), Some(Label::Supported));
    assert_eq!(Label::parse("REFUTED"), Some(Label::Refuted));
    assert_eq!(Label::parse("REFUTES"), Some(Label::Refuted));
    assert_eq!(Label::parse("NEI"), Some(Label::Nei));
    assert_eq!(Label::parse("NOT ENOUGH INFO"), Some(Label::Nei));
    assert_eq!(Label::parse("MAYBE"), None);
    for i in 0..3 {
        let l = Label::from_class_index(i).unwrap();
        assert_eq!(l.class_index(), i);
    }
    assert_eq!(Label::from_class_index(3), None);
}

#[test]
fn page_id_normalization_collapses_underscores_and_whitespace() {
    assert_eq!(normalize_page_id("Barack_Obama"), "Barack Obama");
    assert_eq!(normalize_page_id("  a   b\tc "), "a b c");
    assert_eq!(normalize_page_id("Savages_-LRB-2012_film-RRB-"), "Savages -LRB-2012 film-RRB-");
    assert_eq!(normalize_page_id(""), "");
}

#[test]
fn claim_constructor_enforces_label_evidence_consistency() {
    let set = vec![vec![SentenceRef::new("A", 0)]];
    assert!(Claim::new(1, "c", Label::Supported, set.clone()).is_ok());
    assert!(Claim::new(1, "c", Label::Nei, Vec::new()).is_ok());
    assert!(Claim::new(1, "c", Label::Nei, set.clone()).is_err(), "NEI with evidence");
    assert!(Claim::new(1, "c", Label::Supported, Vec::new()).is_err(), "SUPPORTED without evidence");
    assert!(
        Claim::new(1, "c", Label::Refuted, vec![Vec::new()]).is_err(),
        "empty inner set"
    );
}

#[test]
fn dataset_rejects_duplicate_claim_ids() {
    let c = |id| Claim::new(id, format!("claim {id}"), Label::Nei, Vec::new()).unwrap();
    assert!(Dataset::new("train", vec![c(1), c(2)]).is_ok());
    assert!(Dataset::new("train", vec![c(1), c(1)]).is_err());
}

#[test]
fn corpus_insert_keeps_first_document_on_duplicate() {
    let mut corpus = Corpus::new();
    let doc = |text: &str| Document {
        page_id: "Page".to_string(),
        lines: vec![text.to_string()],
        links: BTreeMap::new(),
    };
    assert!(corpus.insert(doc("first")));
    assert!(!corpus.insert(doc("second")));
    assert_eq!(corpus.len(), 1);
    assert_eq!(corpus.get("Page").unwrap().line(0), Some("first"));
    assert_eq!(corpus.sentence(&SentenceRef::new("Page", 0)), Some("first"));
    assert_eq!(corpus.sentence(&SentenceRef::new("Page", 9)), None);
    assert_eq!(corpus.sentence(&SentenceRef::new("Missing", 0)), None);
}

#[test]
fn corpus_and_dataset_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = Corpus::new();
    let mut links = BTreeMap::new();
    links.insert(1usize, vec!["Other Page".to_string()]);
    corpus.insert(Document {
        page_id: "Some Page".to_string(),
        lines: vec!["First line.".to_string(), "Second line.".to_string()],
        links,
    });
    let corpus_path = dir.path().join("corpus.json");
    corpus.save(&corpus_path).unwrap();
    let loaded = Corpus::load(&corpus_path).unwrap();
    assert_eq!(loaded.to_json(), corpus.to_json());
    assert_eq!(loaded.get("Some Page").unwrap().links_from(1), &["Other Page".to_string()]);

    let claims = vec![
        Claim::new(7, "A thing happened.", Label::Supported, vec![vec![SentenceRef::new("Some Page", 0)]])
            .unwrap(),
        Claim::new(8, "Unknown thing.", Label::Nei, Vec::new()).unwrap(),
    ];
    let ds = Dataset::new("dev", claims).unwrap();
    let ds_path = dir.path().join("dev.json");
    ds.save(&ds_path).unwrap();
    let loaded = Dataset::load(&ds_path).unwrap();
    assert_eq!(loaded, ds);
    assert_eq!(loaded.label_counts()[&Label::Supported], 1);
    assert_eq!(loaded.label_counts()[&Label::Nei], 1);
}

#[test]
fn corpus_load_rejects_other_versions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"version":99,"documents":[]}"#).unwrap();
    assert!(Corpus::load(&path).is_err());
}

// ── Upstream wiki ingestion ──────────────────────────────────────────────────

fn write_jsonl(dir: &tempfile::TempDir, name: &str, lines: &[&str]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    path
}

#[test]
fn wiki_ingestion_parses_sentences_and_links() {
    let dir = tempfile::tempdir().unwrap();
    let record = concat!(
        r#"{"id": "Colin_Kaepernick", "text": "ignored", "lines": "0\tColin is a quarterback.\t"#,
        r#"quarterback\tQuarterback_-LRB-sport-RRB-\n1\tHe became a starter.\n2\t"}"#
    );
    let path = write_jsonl(&dir, "shard.jsonl", &[record]);
    let (corpus, stats) = ingest_wiki(&path).unwrap();
    assert_eq!(stats.documents, 1);
    assert_eq!(stats.malformed_lines, 0);
    let doc = corpus.get("Colin Kaepernick").expect("underscores normalized");
    assert_eq!(doc.line(0), Some("Colin is a quarterback."));
    assert_eq!(doc.line(1), Some("He became a starter."));
    assert_eq!(doc.line(2), Some(""));
    assert_eq!(doc.links_from(0), &["Quarterback -LRB-sport-RRB-".to_string()]);
    assert!(doc.links_from(1).is_empty());
}

#[test]
fn wiki_ingestion_fills_gaps_and_counts_problems() {
    let dir = tempfile::tempdir().unwrap();
    let records = [
        // Line index 1 is missing entirely; index gap must yield an empty slot.
        r#"{"id": "Gappy", "lines": "0\tFirst.\n2\tThird."}"#,
        // A line entry whose index is not a number.
        r#"{"id": "Odd", "lines": "x\tBroken.\n0\tFine."}"#,
        // Not JSON at all.
        r#"{"id": oops"#,
        // Duplicate of an earlier page after normalization.
        r#"{"id": "Gappy", "lines": "0\tUsurper."}"#,
    ];
    let path = write_jsonl(&dir, "shard.jsonl", &records);
    let (corpus, stats) = ingest_wiki(&path).unwrap();
    assert_eq!(stats.documents, 2);
    assert_eq!(stats.skipped_records, 1);
    assert_eq!(stats.malformed_lines, 1);
    assert_eq!(stats.duplicate_pages, 1);
    let doc = corpus.get("Gappy").unwrap();
    assert_eq!(doc.line(0), Some("First."), "first ingest wins");
    assert_eq!(doc.line(1), Some(""));
    assert_eq!(doc.line(2), Some("Third."));
}

#[test]
fn wiki_ingestion_walks_directory_shards_in_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    // wiki-002 holds the first occurrence only if files are read in name order.
    write_jsonl(&dir, "wiki-002.jsonl", &[r#"{"id": "Dup", "lines": "0\tfrom 002."}"#]);
    write_jsonl(&dir, "wiki-001.jsonl", &[r#"{"id": "Dup", "lines": "0\tfrom 001."}"#]);
    write_jsonl(&dir, "notes.txt", &[r#"{"id": "Ignored", "lines": ""}"#]);
    let (corpus, stats) = ingest_wiki(dir.path()).unwrap();
    assert_eq!(stats.documents, 1);
    assert_eq!(stats.duplicate_pages, 1);
    assert_eq!(corpus.get("Dup").unwrap().line(0), Some("from 001."));
    assert!(corpus.get("Ignored").is_none(), "non-jsonl files are skipped");
}

// ── Upstream claim ingestion ─────────────────────────────────────────────────

#[test]
fn claim_ingestion_builds_gold_sets_per_annotation_group() {
    let dir = tempfile::tempdir().unwrap();
    let records = [
        // Two annotation groups: one single-sentence, one needing two sentences.
        concat!(
            r#"{"id": 101, "label": "SUPPORTS", "claim": "X.", "evidence": "#,
            r#"[[[1, 2, "Page_A", 0]], [[3, 4, "Page_A", 1], [3, 5, "Page_B", 2]]]}"#
        ),
        // NEI carries null page/line entries.
        r#"{"id": 102, "label": "NOT ENOUGH INFO", "claim": "Y.", "evidence": [[[6, 7, null, null]]]}"#,
        // Unknown label is skipped and counted.
        r#"{"id": 103, "label": "DISPUTED", "claim": "Z.", "evidence": []}"#,
        // Duplicate annotation groups collapse to one set.
        concat!(
            r#"{"id": 104, "label": "REFUTES", "claim": "W.", "evidence": "#,
            r#"[[[8, 9, "Page_C", 3]], [[10, 11, "Page_C", 3]]]}"#
        ),
    ];
    let path = write_jsonl(&dir, "claims.jsonl", &records);
    let (ds, stats) = ingest_claims(&path, "train").unwrap();
    assert_eq!(stats.claims, 3);
    assert_eq!(stats.skipped_records, 1);
    assert_eq!(ds.split, "train");
    let by_id: BTreeMap<u64, &Claim> = ds.claims.iter().map(|c| (c.claim_id, c)).collect();

    let c101 = by_id[&101];
    assert_eq!(c101.label, Label::Supported);
    assert_eq!(
        c101.gold_sets,
        vec![
            vec![SentenceRef::new("Page A", 0)],
            vec![SentenceRef::new("Page A", 1), SentenceRef::new("Page B", 2)],
        ]
    );

    let c102 = by_id[&102];
    assert_eq!(c102.label, Label::Nei);
    assert!(c102.gold_sets.is_empty());

    let c104 = by_id[&104];
    assert_eq!(c104.gold_sets, vec![vec![SentenceRef::new("Page C", 3)]]);
}

// Full-dump checks, enabled by pointing the environment at real files.

#[test]
#[ignore = "needs FEVER_WIKI_DIR pointing at the full wiki dump"]
fn full_wiki_dump_has_expected_page_count() {
    let dir = std::env::var("FEVER_WIKI_DIR").expect("set FEVER_WIKI_DIR");
    let (corpus, stats) = ingest_wiki(std::path::Path::new(&dir)).unwrap();
    assert_eq!(corpus.len(), 5_416_537, "stats: {stats:?}");
}

#[test]
#[ignore = "needs FEVER_TRAIN_JSONL pointing at the training claims"]
fn full_training_split_has_expected_label_counts() {
    let path = std::env::var("FEVER_TRAIN_JSONL").expect("set FEVER_TRAIN_JSONL");
    let (ds, _) = ingest_claims(std::path::Path::new(&path), "train").unwrap();
    let counts = ds.label_counts();
    assert_eq!(counts[&Label::Supported], 80_035);
    assert_eq!(counts[&Label::Refuted], 29_775);
    assert_eq!(counts[&Label::Nei], 35_639);
}

#[test]
#[ignore = "needs FEVER_DEV_JSONL pointing at the dev claims"]
fn full_dev_split_has_expected_size() {
    let path = std::env::var("FEVER_DEV_JSONL").expect("set FEVER_DEV_JSONL");
    let (ds, _) = ingest_claims(std::path::Path::new(&path), "dev").unwrap();
    for (label, n) in ds.label_counts() {
        assert_eq!(n, 6_666, "split is balanced per label ({label:?})");
    }
}

// ── Synthetic world ──────────────────────────────────────────────────────────

#[test]
fn synth_rejects_degenerate_parameters() {
    assert!(synth_corpus(3, 10, 0.5, 1).is_err(), "too few entities");
    assert!(synth_corpus(40, 10, 1.5, 1).is_err(), "fraction above 1");
    assert!(synth_corpus(40, 10, -0.1, 1).is_err(), "negative fraction");
    assert!(
        synth_corpus(4, 10_000, 0.0, 1).is_err(),
        "tiny world cannot supply thousands of distinct claims"
    );
}

#[test]
fn synth_page_count_matches_entity_budget() {
    let (corpus, _, _, stats) = synth_corpus(41, 30, 0.5, 3).unwrap();
    assert_eq!(corpus.len(), 41, "one page per entity, remainder included");
    assert_eq!(stats.pages, 41);
}

#[test]
fn synth_labels_stay_balanced_in_both_splits() {
    let (_, train, dev, stats) = synth_corpus(60, 90, 0.4, 11).unwrap();
    assert_eq!(stats.train_claims + stats.dev_claims, 90);
    for ds in [&train, &dev] {
        let counts = ds.label_counts();
        let max = counts.values().max().unwrap();
        let min = counts.values().min().unwrap();
        assert!(max - min <= 1, "{} split unbalanced: {counts:?}", ds.split);
    }
    assert!(!dev.is_empty(), "every sixth class member lands in dev");
}

#[test]
fn synth_multihop_fraction_extremes_shape_gold_sets() {
    let (_, train, dev, stats) = synth_corpus(60, 60, 0.0, 5).unwrap();
    assert_eq!(stats.multihop_claims, 0);
    for c in train.claims.iter().chain(dev.claims.iter()) {
        for set in &c.gold_sets {
            assert_eq!(set.len(), 1, "no multihop requested");
        }
    }
    let (_, train, dev, stats) = synth_corpus(60, 60, 1.0, 5).unwrap();
    let evidenced = train
        .claims
        .iter()
        .chain(dev.claims.iter())
        .filter(|c| c.label != Label::Nei)
        .count();
    assert_eq!(stats.multihop_claims, evidenced);
    for c in train.claims.iter().chain(dev.claims.iter()) {
        if c.label != Label::Nei {
            assert_eq!(c.gold_sets.len(), 1);
            assert_eq!(c.gold_sets[0].len(), 2, "all evidence needs a hop");
        }
    }
}

#[test]
fn synth_gold_evidence_resolves_and_hops_follow_hyperlinks() {
    let (corpus, train, dev, _) = synth_corpus(48, 120, 0.5, 9).unwrap();
    for c in train.claims.iter().chain(dev.claims.iter()) {
        for set in &c.gold_sets {
            for r in set {
                let text = corpus
                    .sentence(r)
                    .unwrap_or_else(|| panic!("gold {r:?} missing for claim {}", c.claim_id));
                assert!(!text.is_empty(), "gold sentence must be real text");
            }
            if set.len() == 2 {
                let root_doc = corpus.get(&set[0].page_id).unwrap();
                assert!(
                    root_doc.links_from(set[0].line).contains(&set[1].page_id),
                    "second sentence must be reachable via a hyperlink from the first"
                );
            }
        }
    }
}

#[test]
fn synth_claim_texts_are_unique() {
    let (_, train, dev, _) = synth_corpus(60, 150, 0.3, 13).unwrap();
    let mut texts: Vec<&str> = train
        .claims
        .iter()
        .chain(dev.claims.iter())
        .map(|c| c.text.as_str())
        .collect();
    let before = texts.len();
    texts.sort();
    texts.dedup();
    assert_eq!(texts.len(), before);
}

#[test]
fn synth_same_seed_is_byte_identical_and_seeds_differ() {
    let (c1, t1, d1, s1) = synth_corpus(48, 90, 0.5, 21).unwrap();
    let (c2, t2, d2, s2) = synth_corpus(48, 90, 0.5, 21).unwrap();
    assert_eq!(c1.to_json(), c2.to_json());
    assert_eq!(t1.to_json(), t2.to_json());
    assert_eq!(d1.to_json(), d2.to_json());
    assert_eq!(s1, s2);
    let (c3, t3, _, _) = synth_corpus(48, 90, 0.5, 22).unwrap();
    assert!(
        c1.to_json() != c3.to_json() || t1.to_json() != t3.to_json(),
        "different seeds should not produce the same world"
    );
}

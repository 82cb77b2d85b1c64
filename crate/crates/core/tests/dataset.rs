use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use daclr_core::dataset::{synth_dataset, Dataset, CLAIMS_FILE, EVIDENCE_FILE, QRELS_FILE, SUMMARIES_FILE};
use daclr_core::sparse::{tokenize, Bm25Params, IndexField, SparseIndex};
use daclr_core::Error;

fn write_fixture(dir: &Path, claims: &str, evidence: &str, qrels: &str) {
    fs::write(dir.join(CLAIMS_FILE), claims).unwrap();
    fs::write(dir.join(EVIDENCE_FILE), evidence).unwrap();
    fs::write(dir.join(QRELS_FILE), qrels).unwrap();
}

const CLAIMS: &str = r#"{"id": "c1", "text": "Alice met Bob in Paris"}
{"id": "c2", "text": "Carol sold the farm in 2019"}
{"id": "c3", "text": "Dan won the race"}
"#;

const EVIDENCE: &str = r#"{"id": "e1", "modality": "text", "text": "Alice and Bob met in Paris on Monday"}
{"id": "e2", "modality": "text", "text": "Carol sold her farm in 2019"}
{"id": "e3", "modality": "table", "text": "race | winner\nspring | Dan"}
{"id": "e4", "modality": "image", "text": "", "image_path": "img/e4.png"}
"#;

const QRELS: &str = "c1\te1\nc2\te2\nc3\te3\n";

#[test]
fn loads_three_claim_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), CLAIMS, EVIDENCE, QRELS);
    let ds = Dataset::load(dir.path()).unwrap();
    assert_eq!(ds.claims.len(), 3);
    assert_eq!(ds.corpus.len(), 4);
    assert_eq!(ds.qrels.len(), 3);
    assert_eq!(ds.corpus[3].media_path.as_deref(), Some(dir.path().join("img/e4.png").as_path()));
    // no summaries file: every record is flagged
    assert_eq!(ds.missing_summaries().len(), 7);
    let mut all: Vec<&String> = ds.splits.train.iter().chain(&ds.splits.validation).chain(&ds.splits.test).collect();
    all.sort();
    assert_eq!(all, ["c1", "c2", "c3"]);
}

fn ingest_error(claims: &str, evidence: &str, qrels: &str) -> (String, usize) {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), claims, evidence, qrels);
    match Dataset::load(dir.path()) {
        Err(Error::Ingest { file, line, .. }) => (file.file_name().unwrap().to_string_lossy().into_owned(), line),
        other => panic!("expected an ingest error, got {other:?}"),
    }
}

#[test]
fn unknown_evidence_in_qrels() {
    assert_eq!(ingest_error(CLAIMS, EVIDENCE, "c1\te1\nc2\te9\n"), (QRELS_FILE.into(), 2));
}

#[test]
fn duplicate_claim_id() {
    let claims = format!("{CLAIMS}{{\"id\": \"c2\", \"text\": \"again\"}}\n");
    assert_eq!(ingest_error(&claims, EVIDENCE, QRELS), (CLAIMS_FILE.into(), 4));
}

#[test]
fn malformed_lines() {
    assert_eq!(ingest_error("{\"id\": \"c1\"}\n", EVIDENCE, ""), (CLAIMS_FILE.into(), 1));
    let bad_modality = "{\"id\": \"e1\", \"modality\": \"video\", \"text\": \"x\"}\n";
    assert_eq!(ingest_error(CLAIMS, bad_modality, ""), (EVIDENCE_FILE.into(), 1));
    let no_image = "{\"id\": \"e1\", \"modality\": \"image\", \"text\": \"\"}\n";
    assert_eq!(ingest_error(CLAIMS, no_image, ""), (EVIDENCE_FILE.into(), 1));
    assert_eq!(ingest_error(CLAIMS, EVIDENCE, "c1 e1\n"), (QRELS_FILE.into(), 1));
}

#[test]
fn summaries_for_unknown_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), CLAIMS, EVIDENCE, QRELS);
    let rec = r#"{"id": "zz", "summary": "x", "participants": [], "attributes": [], "structure": "x"}"#;
    fs::write(dir.path().join(SUMMARIES_FILE), format!("{rec}\n")).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Ingest { line: 1, .. })));
}

#[test]
fn save_load_round_trip() {
    let ds = synth_dataset(4, 30, 150, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_dataset(9, 40, 200, 4).unwrap().save(a.path()).unwrap();
    synth_dataset(9, 40, 200, 4).unwrap().save(b.path()).unwrap();
    for f in [CLAIMS_FILE, EVIDENCE_FILE, QRELS_FILE, SUMMARIES_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(synth_dataset(10, 40, 200, 4).unwrap(), synth_dataset(9, 40, 200, 4).unwrap());
}

#[test]
fn synth_gold_shares_content_with_claim() {
    let ds = synth_dataset(2, 20, 80, 2).unwrap();
    assert!(ds.missing_summaries().is_empty());
    for c in &ds.claims {
        let ct: BTreeSet<String> = tokenize(&c.raw_text).into_iter().collect();
        for e in ds.qrels.relevant(&c.id).unwrap() {
            let doc = ds.corpus.iter().find(|d| &d.id == e).unwrap();
            let shared = tokenize(&doc.raw_text).into_iter().filter(|t| ct.contains(t)).collect::<BTreeSet<_>>();
            assert!(shared.len() >= 3, "{} / {}", c.raw_text, doc.raw_text);
        }
    }
}

#[test]
fn synth_rejects_bad_sizes() {
    assert!(matches!(synth_dataset(1, 10, 50, 1), Err(Error::Config(_))));
    assert!(matches!(synth_dataset(1, 10, 5, 4), Err(Error::Config(_))));
}

#[test]
fn bm25_top1_on_synth_is_informative_but_imperfect() {
    let ds = synth_dataset(1, 200, 1000, 8).unwrap();
    let index = SparseIndex::build(&ds.corpus, IndexField::Full, Bm25Params::default()).unwrap();
    let hits = ds
        .claims
        .iter()
        .filter(|c| {
            let top = index.rank_bm25(&c.id, &tokenize(&c.raw_text), 1);
            ds.qrels.is_relevant(&c.id, &top.entries[0].0)
        })
        .count();
    let acc = hits as f64 / ds.claims.len() as f64;
    assert!(acc > 0.0 && acc < 1.0, "bm25 top-1 accuracy {acc}");
}

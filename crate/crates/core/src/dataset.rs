//! Dataset ingestion, persistence and the synthetic benchmark generator.
//!
//! On-disk layout of a dataset directory:
//!
//! | file | format |
//! |---|---|
//! | `claims.jsonl` | `{"id", "text"}` per line |
//! | `evidence.jsonl` | `{"id", "modality", "text", "image_path"?, "page"?}` per line |
//! | `qrels.tsv` | `claim_id<TAB>evidence_id` per line |
//! | `splits.json` | `{"train": [...], "validation": [...], "test": [...]}` (optional) |
//! | `summaries.jsonl` | `{"id", "summary", "participants", "attributes", "structure"}` (optional) |

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::event::{validate_summary, Claim, EventSummary, EvidenceDoc, Modality};
use crate::summarizer::{fallback_extract, SummaryRecord};

pub const CLAIMS_FILE: &str = "claims.jsonl";
pub const EVIDENCE_FILE: &str = "evidence.jsonl";
pub const QRELS_FILE: &str = "qrels.tsv";
pub const SPLITS_FILE: &str = "splits.json";
pub const SUMMARIES_FILE: &str = "summaries.jsonl";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    /// Seeded 70/15/15 partition of `ids`.
    pub fn derive(ids: &[String], seed: u64) -> Self {
        let mut order = ids.to_vec();
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = order.len();
        let n_train = n * 70 / 100;
        let n_val = n * 15 / 100;
        let test = order.split_off(n_train + n_val);
        let validation = order.split_off(n_train);
        Self {
            train: order,
            validation,
            test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub claims: Vec<Claim>,
    pub corpus: Vec<EvidenceDoc>,
    pub qrels: Qrels,
    pub splits: Splits,
}

#[derive(Serialize, Deserialize)]
struct ClaimLine {
    id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct EvidenceLine {
    id: String,
    modality: Modality,
    #[serde(default)]
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    page: Option<String>,
}

fn ingest_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Ingest {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-blank lines with 1-based numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| ingest_err(path, 0, e.to_string()))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    lines(path)?
        .into_iter()
        .map(|(n, l)| {
            serde_json::from_str(&l)
                .map(|v| (n, v))
                .map_err(|e| ingest_err(path, n, e.to_string()))
        })
        .collect()
}

impl Dataset {
    /// Reads and validates a dataset directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let claims_path = dir.join(CLAIMS_FILE);
        let mut seen = HashSet::new();
        let mut claims = Vec::new();
        for (n, c) in parse_jsonl::<ClaimLine>(&claims_path)? {
            if c.id.is_empty() || !seen.insert(c.id.clone()) {
                return Err(ingest_err(&claims_path, n, format!("empty or duplicate claim id {:?}", c.id)));
            }
            claims.push(Claim {
                id: c.id,
                raw_text: c.text,
                summary: None,
            });
        }

        let ev_path = dir.join(EVIDENCE_FILE);
        let mut seen = HashSet::new();
        let mut corpus = Vec::new();
        for (n, e) in parse_jsonl::<EvidenceLine>(&ev_path)? {
            if !seen.insert(e.id.clone()) {
                return Err(ingest_err(&ev_path, n, format!("duplicate evidence id {:?}", e.id)));
            }
            let media_path = e.image_path.map(|p| if p.is_relative() { dir.join(p) } else { p });
            let doc = EvidenceDoc {
                id: e.id,
                modality: e.modality,
                raw_text: e.text,
                media_path,
                page: e.page,
                summary: None,
            };
            doc.check().map_err(|m| ingest_err(&ev_path, n, m))?;
            corpus.push(doc);
        }

        let claim_ids: HashSet<&str> = claims.iter().map(|c| c.id.as_str()).collect();
        let ev_ids: HashSet<&str> = corpus.iter().map(|d| d.id.as_str()).collect();

        let qrels_path = dir.join(QRELS_FILE);
        let mut qrels = Qrels::default();
        for (n, l) in lines(&qrels_path)? {
            let mut parts = l.split('\t');
            let (Some(c), Some(e), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ingest_err(&qrels_path, n, "expected claim_id<TAB>evidence_id"));
            };
            let (c, e) = (c.trim(), e.trim());
            if !claim_ids.contains(c) {
                return Err(ingest_err(&qrels_path, n, format!("unknown claim id {c:?}")));
            }
            if !ev_ids.contains(e) {
                return Err(ingest_err(&qrels_path, n, format!("unknown evidence id {e:?}")));
            }
            qrels.insert(c, e);
        }

        let splits_path = dir.join(SPLITS_FILE);
        let splits = if splits_path.exists() {
            let s: Splits = serde_json::from_str(&fs::read_to_string(&splits_path)?)
                .map_err(|e| ingest_err(&splits_path, e.line(), e.to_string()))?;
            check_splits(&s, &claim_ids, &qrels).map_err(|m| ingest_err(&splits_path, 0, m))?;
            s
        } else {
            let judged: Vec<String> = qrels.claims().map(str::to_string).collect();
            Splits::derive(&judged, 0)
        };

        let mut ds = Self {
            claims,
            corpus,
            qrels,
            splits,
        };
        let summaries_path = dir.join(SUMMARIES_FILE);
        if summaries_path.exists() {
            ds.attach_summaries(&summaries_path)?;
        }
        let missing = ds.missing_summaries();
        if !missing.is_empty() {
            warn!(count = missing.len(), "records without event summaries");
        }
        Ok(ds)
    }

    /// Attaches summaries by id; unknown ids and invalid records are errors.
    pub fn attach_summaries(&mut self, path: &Path) -> Result<()> {
        let mut by_id: HashMap<String, (usize, EventSummary)> = HashMap::new();
        for (n, rec) in parse_jsonl::<SummaryRecord>(path)? {
            let v = validate_summary(&rec.summary);
            if let Some(first) = v.first() {
                return Err(ingest_err(path, n, format!("summary for {}: {first}", rec.id)));
            }
            by_id.insert(rec.id, (n, rec.summary));
        }
        for c in &mut self.claims {
            if let Some((_, s)) = by_id.remove(&c.id) {
                c.summary = Some(s);
            }
        }
        for d in &mut self.corpus {
            if let Some((_, s)) = by_id.remove(&d.id) {
                d.summary = Some(s);
            }
        }
        if let Some((id, (n, _))) = by_id.into_iter().min_by_key(|(_, (n, _))| *n) {
            return Err(ingest_err(path, n, format!("summary for unknown id {id:?}")));
        }
        Ok(())
    }

    /// Ids of claims and evidence that still lack a summary.
    pub fn missing_summaries(&self) -> Vec<String> {
        self.claims
            .iter()
            .filter(|c| c.summary.is_none())
            .map(|c| c.id.clone())
            .chain(self.corpus.iter().filter(|d| d.summary.is_none()).map(|d| d.id.clone()))
            .collect()
    }

    pub fn claim(&self, id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.id == id)
    }

    pub fn claims_in(&self, ids: &[String]) -> Vec<Claim> {
        let by_id: HashMap<&str, &Claim> = self.claims.iter().map(|c| (c.id.as_str(), c)).collect();
        ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|c| (*c).clone())).collect()
    }

    /// Qrels restricted to `ids`.
    pub fn qrels_for(&self, ids: &[String]) -> Qrels {
        let mut q = Qrels::default();
        for id in ids {
            for e in self.qrels.relevant(id).into_iter().flatten() {
                q.insert(id.clone(), e.clone());
            }
        }
        q
    }

    /// Writes every file of the directory layout, summaries included when present.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut claims = String::new();
        for c in &self.claims {
            claims.push_str(&serde_json::to_string(&ClaimLine {
                id: c.id.clone(),
                text: c.raw_text.clone(),
            })?);
            claims.push('\n');
        }
        fs::write(dir.join(CLAIMS_FILE), claims)?;

        let mut evidence = String::new();
        for d in &self.corpus {
            evidence.push_str(&serde_json::to_string(&EvidenceLine {
                id: d.id.clone(),
                modality: d.modality,
                text: d.raw_text.clone(),
                image_path: d.media_path.clone(),
                page: d.page.clone(),
            })?);
            evidence.push('\n');
        }
        fs::write(dir.join(EVIDENCE_FILE), evidence)?;
        fs::write(dir.join(QRELS_FILE), self.qrels.to_tsv())?;
        fs::write(dir.join(SPLITS_FILE), serde_json::to_string_pretty(&self.splits)? + "\n")?;

        let mut summaries = String::new();
        let records = self
            .claims
            .iter()
            .map(|c| (&c.id, &c.summary))
            .chain(self.corpus.iter().map(|d| (&d.id, &d.summary)));
        for (id, s) in records {
            if let Some(s) = s {
                summaries.push_str(&serde_json::to_string(&SummaryRecord {
                    id: id.clone(),
                    summary: s.clone(),
                })?);
                summaries.push('\n');
            }
        }
        if !summaries.is_empty() {
            fs::write(dir.join(SUMMARIES_FILE), summaries)?;
        }
        Ok(())
    }

    /// Fills missing summaries with the rule-based extractor.
    pub fn fill_fallback_summaries(&mut self) -> Result<()> {
        for c in self.claims.iter_mut().filter(|c| c.summary.is_none()) {
            c.summary = Some(fallback_extract(&c.raw_text)?);
        }
        for d in self.corpus.iter_mut().filter(|d| d.summary.is_none()) {
            if !d.raw_text.trim().is_empty() {
                d.summary = Some(fallback_extract(&d.raw_text)?);
            }
        }
        Ok(())
    }
}

fn check_splits(s: &Splits, claims: &HashSet<&str>, qrels: &Qrels) -> std::result::Result<(), String> {
    let mut seen = HashSet::new();
    for id in s.train.iter().chain(&s.validation).chain(&s.test) {
        if !claims.contains(id.as_str()) {
            return Err(format!("unknown claim id {id:?} in splits"));
        }
        if !seen.insert(id.as_str()) {
            return Err(format!("claim {id:?} appears in more than one split"));
        }
    }
    if let Some(c) = qrels.claims().find(|c| !seen.contains(c)) {
        return Err(format!("judged claim {c:?} is in no split"));
    }
    Ok(())
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Draws distinct six-letter pseudo-words. Equal length means no word is a
/// substring of another.
struct WordSource {
    used: BTreeSet<String>,
}

impl WordSource {
    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let w: String = (0..3)
                .flat_map(|_| {
                    [
                        *CONSONANTS.choose(rng).unwrap() as char,
                        *VOWELS.choose(rng).unwrap() as char,
                    ]
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..n).map(|_| self.word(rng)).collect()
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
        .unwrap_or_default()
}

struct Cluster {
    entities: Vec<String>,
    /// Each template is three lowercase event words.
    templates: Vec<[String; 3]>,
    places: Vec<String>,
}

/// Cluster, unordered entity pair, template.
type EventKey = (usize, usize, usize, usize);

#[derive(Clone)]
struct Event {
    cluster: usize,
    a: usize,
    b: usize,
    template: usize,
    place: usize,
    year: u32,
}

impl Event {
    fn key(&self) -> EventKey {
        (self.cluster, self.a.min(self.b), self.a.max(self.b), self.template)
    }

    fn render(&self, clusters: &[Cluster], place: bool, year: bool, filler: &[&str]) -> String {
        let c = &clusters[self.cluster];
        let [w1, w2, w3] = &c.templates[self.template];
        let mut s = format!("{} {w1} {w2} {} {w3}", c.entities[self.a], c.entities[self.b]);
        if place {
            s.push_str(&format!(" at {}", c.places[self.place]));
        }
        if year {
            s.push_str(&format!(" in {}", self.year));
        }
        if !filler.is_empty() {
            s.push_str(" while ");
            s.push_str(&filler.join(" "));
        }
        s
    }
}

const ENTITIES_PER_CLUSTER: usize = 12;
const TEMPLATES_PER_CLUSTER: usize = 10;
const PLACES_PER_CLUSTER: usize = 8;
const FILLER_WORDS: usize = 60;
const NEAR_MISSES_PER_CLAIM: usize = 2;

/// Cluster-structured synthetic dataset.
///
/// Every cluster owns disjoint entity, event-word and place vocabularies.
/// A claim states one event; its gold evidence restates the same entities
/// and event words with optional place/year and a filler clause. Each claim
/// also gets near-miss distractors with the same entities, place and year
/// but a different event of the same cluster. Remaining evidence are
/// unrelated events from any cluster. Summaries come from
/// [`fallback_extract`].
pub fn synth_dataset(seed: u64, n_claims: usize, n_evidence: usize, n_clusters: usize) -> Result<Dataset> {
    if n_clusters < 2 {
        return Err(Error::Config("synth needs at least 2 clusters".into()));
    }
    if n_evidence < n_claims {
        return Err(Error::Config("synth needs n_evidence >= n_claims".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = WordSource { used: BTreeSet::new() };
    let clusters: Vec<Cluster> = (0..n_clusters)
        .map(|_| Cluster {
            entities: words.words(ENTITIES_PER_CLUSTER, &mut rng).iter().map(|w| capitalize(w)).collect(),
            templates: (0..TEMPLATES_PER_CLUSTER)
                .map(|_| {
                    let w = words.words(3, &mut rng);
                    [w[0].clone(), w[1].clone(), w[2].clone()]
                })
                .collect(),
            places: words.words(PLACES_PER_CLUSTER, &mut rng),
        })
        .collect();
    let filler = words.words(FILLER_WORDS, &mut rng);
    let pairs = n_clusters * ENTITIES_PER_CLUSTER * (ENTITIES_PER_CLUSTER - 1) / 2;
    if n_claims > pairs / 2 {
        return Err(Error::Config(format!("synth supports at most {} claims", pairs / 2)));
    }
    let capacity = pairs * TEMPLATES_PER_CLUSTER;
    if n_evidence > capacity / 2 {
        return Err(Error::Config(format!("synth supports at most {} evidence items", capacity / 2)));
    }

    let mut used = HashSet::new();
    fn fresh_event(rng: &mut ChaCha8Rng, used: &mut HashSet<EventKey>, cluster: usize) -> Event {
        loop {
            let a = rng.random_range(0..ENTITIES_PER_CLUSTER);
            let b = rng.random_range(0..ENTITIES_PER_CLUSTER);
            if a == b {
                continue;
            }
            let e = Event {
                cluster,
                a,
                b,
                template: rng.random_range(0..TEMPLATES_PER_CLUSTER),
                place: rng.random_range(0..PLACES_PER_CLUSTER),
                year: rng.random_range(1950..2025),
            };
            if used.insert(e.key()) {
                return e;
            }
        }
    }
    let pick_filler = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<&str> {
        let n = rng.random_range(lo..=hi);
        filler.choose_multiple(rng, n).map(String::as_str).collect()
    };

    // Distinct entity pairs per claim leave room for its near-misses.
    let mut claim_pairs = HashSet::new();
    let mut claim_events = Vec::with_capacity(n_claims);
    while claim_events.len() < n_claims {
        let e = fresh_event(&mut rng, &mut used, claim_events.len() % n_clusters);
        let (_, a, b, _) = e.key();
        if claim_pairs.insert((e.cluster, a, b)) {
            claim_events.push(e);
        }
    }

    // (text, gold-of claim index)
    let mut evidence: Vec<(String, Option<usize>)> = Vec::with_capacity(n_evidence);
    for (i, e) in claim_events.iter().enumerate() {
        let place = rng.random_bool(0.5);
        let year = rng.random_bool(0.5);
        let f = pick_filler(&mut rng, 4, 8);
        evidence.push((e.render(&clusters, place, year, &f), Some(i)));
    }
    let mut near_budget = (n_evidence - n_claims).min(n_claims * NEAR_MISSES_PER_CLAIM);
    'outer: for e in &claim_events {
        for _ in 0..NEAR_MISSES_PER_CLAIM {
            if near_budget == 0 {
                break 'outer;
            }
            let free: Vec<usize> = (0..TEMPLATES_PER_CLUSTER)
                .filter(|&t| !used.contains(&Event { template: t, ..e.clone() }.key()))
                .collect();
            let Some(&t) = free.choose(&mut rng) else {
                continue;
            };
            let near = Event { template: t, ..e.clone() };
            used.insert(near.key());
            evidence.push((near.render(&clusters, true, true, &[]), None));
            near_budget -= 1;
        }
    }
    while evidence.len() < n_evidence {
        let cluster = rng.random_range(0..n_clusters);
        let e = fresh_event(&mut rng, &mut used, cluster);
        let (place, year) = (rng.random_bool(0.5), rng.random_bool(0.5));
        let f = if rng.random_bool(0.5) { pick_filler(&mut rng, 2, 6) } else { Vec::new() };
        evidence.push((e.render(&clusters, place, year, &f), None));
    }
    evidence.shuffle(&mut rng);

    let width = n_evidence.to_string().len();
    let mut qrels = Qrels::default();
    let mut corpus = Vec::with_capacity(n_evidence);
    for (i, (text, gold)) in evidence.into_iter().enumerate() {
        let id = format!("e{i:0width$}");
        if let Some(c) = gold {
            qrels.insert(claim_id(c, n_claims), id.clone());
        }
        let mut doc = EvidenceDoc::text(id, text);
        doc.summary = Some(fallback_extract(&doc.raw_text)?);
        corpus.push(doc);
    }
    let claims = claim_events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let text = e.render(&clusters, true, true, &[]);
            Ok(Claim {
                id: claim_id(i, n_claims),
                summary: Some(fallback_extract(&text)?),
                raw_text: text,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = claims.iter().map(|c| c.id.clone()).collect();
    Ok(Dataset {
        splits: Splits::derive(&ids, seed),
        claims,
        corpus,
        qrels,
    })
}

fn claim_id(i: usize, n: usize) -> String {
    let width = n.to_string().len();
    format!("c{i:0width$}")
}

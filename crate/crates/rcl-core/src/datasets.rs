//! Corpus ingestion, synthetic corpus generation, and split management.
//!
//! The single ingestion format is JSON Lines, one record per line:
//! `{"id", "query", "index", "hard_negative"?, "score"?, "relevant_ids"?}`.
//! A file either carries `score` on every record (similarity mode),
//! `relevant_ids` on every record (retrieval mode), or neither; mixing the
//! two is rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// One training pair, optionally with a hard negative and gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tuple {
    pub id: String,
    pub query: String,
    pub index: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_negative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_ids: Option<BTreeSet<String>>,
}

/// What kind of gold supervision the dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    /// Pairs only; no gold labels.
    Plain,
    /// Every record has a `score` in [0, 5].
    Similarity,
    /// Every record has a non-empty `relevant_ids` set.
    Retrieval,
}

impl DatasetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetMode::Plain => "plain",
            DatasetMode::Similarity => "similarity",
            DatasetMode::Retrieval => "retrieval",
        }
    }
}

/// An ordered collection of tuples with a single, validated mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleDataset {
    tuples: Vec<Tuple>,
    mode: DatasetMode,
}

/// Sentence id of a tuple's query side.
pub fn query_sid(tuple_id: &str) -> String {
    format!("{tuple_id}::q")
}

/// Sentence id of a tuple's index side.
pub fn index_sid(tuple_id: &str) -> String {
    format!("{tuple_id}::ind")
}

impl TupleDataset {
    /// Validate tuples (unique ids, uniform gold fields, score range,
    /// relevant ids referencing existing tuples) and derive the mode.
    pub fn new(tuples: Vec<Tuple>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for (n, t) in tuples.iter().enumerate() {
            if !ids.insert(t.id.clone()) {
                return Err(Error::data_at(format!("duplicate id `{}`", t.id), n + 1));
            }
        }
        let with_score = tuples.iter().filter(|t| t.score.is_some()).count();
        let with_rel = tuples.iter().filter(|t| t.relevant_ids.is_some()).count();
        if with_score > 0 && with_rel > 0 {
            return Err(Error::data(
                "mixed-mode file: both `score` and `relevant_ids` appear",
            ));
        }
        let mode = if with_score > 0 {
            if with_score != tuples.len() {
                return Err(Error::data(
                    "similarity mode requires `score` on every record",
                ));
            }
            DatasetMode::Similarity
        } else if with_rel > 0 {
            if with_rel != tuples.len() {
                return Err(Error::data(
                    "retrieval mode requires `relevant_ids` on every record",
                ));
            }
            DatasetMode::Retrieval
        } else {
            DatasetMode::Plain
        };
        for (n, t) in tuples.iter().enumerate() {
            if let Some(s) = t.score {
                if !(0.0..=5.0).contains(&s) {
                    return Err(Error::data_at(
                        format!("score {s} outside [0, 5] for id `{}`", t.id),
                        n + 1,
                    ));
                }
            }
            if let Some(rel) = &t.relevant_ids {
                if rel.is_empty() {
                    return Err(Error::data_at(
                        format!("empty relevant_ids for id `{}`", t.id),
                        n + 1,
                    ));
                }
                if let Some(missing) = rel.iter().find(|r| !ids.contains(*r)) {
                    return Err(Error::data_at(
                        format!("relevant id `{missing}` references no tuple"),
                        n + 1,
                    ));
                }
            }
        }
        Ok(TupleDataset { tuples, mode })
    }

    /// Build from already-validated rows, keeping gold fields that may
    /// reference tuples outside the subset.
    pub(crate) fn subset(&self, indices: &[usize]) -> TupleDataset {
        TupleDataset {
            tuples: indices.iter().map(|&i| self.tuples[i].clone()).collect(),
            mode: self.mode,
        }
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn mode(&self) -> DatasetMode {
        self.mode
    }

    /// True when every tuple carries a hard negative.
    pub fn has_hard_negatives(&self) -> bool {
        !self.tuples.is_empty() && self.tuples.iter().all(|t| t.hard_negative.is_some())
    }

    /// Gold relevance map (retrieval mode only): tuple id -> relevant ids.
    pub fn gold_relevance(&self) -> Option<BTreeMap<String, BTreeSet<String>>> {
        if self.mode != DatasetMode::Retrieval {
            return None;
        }
        Some(
            self.tuples
                .iter()
                .map(|t| (t.id.clone(), t.relevant_ids.clone().unwrap()))
                .collect(),
        )
    }

    /// Canonical JSONL serialization.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tuples {
            let line = serde_json::to_string(t).expect("tuple serialization cannot fail");
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// SHA-256 of the canonical serialization, hex-encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_jsonl().as_bytes());
        hex_digest(hasher)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Index tuples into clusters of identical gold signatures. Retrieval
    /// datasets group by `relevant_ids`; other modes treat every tuple as
    /// its own group. Used by all split machinery so no cluster straddles
    /// a split boundary.
    fn groups(&self) -> Vec<Vec<usize>> {
        match self.mode {
            DatasetMode::Retrieval => {
                let mut by_sig: BTreeMap<Vec<&str>, Vec<usize>> = BTreeMap::new();
                let mut order: Vec<Vec<&str>> = Vec::new();
                for (i, t) in self.tuples.iter().enumerate() {
                    let sig: Vec<&str> = t
                        .relevant_ids
                        .as_ref()
                        .unwrap()
                        .iter()
                        .map(String::as_str)
                        .collect();
                    let entry = by_sig.entry(sig.clone()).or_default();
                    if entry.is_empty() {
                        order.push(sig);
                    }
                    entry.push(i);
                }
                order.into_iter().map(|sig| by_sig[&sig].clone()).collect()
            }
            _ => (0..self.len()).map(|i| vec![i]).collect(),
        }
    }
}

pub fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// SHA-256 of a byte slice, hex-encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_digest(hasher)
}

/// Parse a JSONL file into a dataset, reporting the offending line number
/// on schema violations.
pub fn load_jsonl(path: &Path) -> Result<TupleDataset> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::data(format!("cannot read `{}`: {e}", path.display()))
    })?;
    parse_jsonl(&text)
}

/// Parse JSONL text (exposed for tests and in-memory use).
pub fn parse_jsonl(text: &str) -> Result<TupleDataset> {
    let mut tuples = Vec::new();
    let mut line_of: Vec<usize> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tuple: Tuple = serde_json::from_str(line)
            .map_err(|e| Error::data_at(format!("bad record: {e}"), lineno + 1))?;
        tuples.push(tuple);
        line_of.push(lineno + 1);
    }
    // Re-map validation errors onto source line numbers.
    TupleDataset::new(tuples).map_err(|e| match e {
        Error::Data {
            message,
            line: Some(record_no),
        } if record_no <= line_of.len() => Error::data_at(message, line_of[record_no - 1]),
        other => other,
    })
}

/// Settings for the synthetic paraphrase-cluster corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_clusters: usize,
    pub queries_per_cluster: usize,
    pub seed: u64,
    /// Per-character substitution probability applied to query texts.
    pub noise_rate: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters < 2 {
            return Err(Error::config("num_clusters must be >= 2"));
        }
        if self.queries_per_cluster < 1 {
            return Err(Error::config("queries_per_cluster must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise_rate must be in [0, 1)"));
        }
        Ok(())
    }
}

const WORDS: &[&str] = &[
    "account", "adapter", "address", "agent", "alarm", "album", "alert", "antenna", "archive",
    "audio", "backup", "badge", "balance", "banner", "battery", "beacon", "binding", "bridge",
    "browser", "bucket", "buffer", "button", "cable", "cache", "calendar", "camera", "canvas",
    "catalog", "channel", "charger", "client", "cluster", "codec", "command", "compass",
    "console", "contact", "cookie", "coupon", "cursor", "dashboard", "database", "desktop",
    "device", "dialog", "display", "domain", "driver", "editor", "engine", "export", "filter",
    "firmware", "folder", "format", "forum", "gallery", "gateway", "graphic", "handle",
    "headset", "history", "hotspot", "icon", "import", "inbox", "invoice", "kernel", "keyboard",
    "label", "laptop", "layout", "ledger", "library", "license", "locale", "login", "macro",
    "manual", "margin", "marker", "memory", "menu", "message", "mirror", "modem", "monitor",
    "mouse", "network", "notice", "packet", "palette", "panel", "password", "patch", "payment",
    "photo", "pixel", "playlist", "plugin", "pointer", "policy", "portal", "printer", "profile",
    "project", "prompt", "proxy", "query", "queue", "receipt", "record", "refund", "region",
    "registry", "remote", "report", "router", "runtime", "scanner", "schema", "screen",
    "script", "scroll", "sensor", "server", "session", "shortcut", "signal", "socket",
    "speaker", "storage", "stream", "stylus", "subnet", "switch", "tablet", "template",
    "terminal", "ticket", "timer", "token", "toolbar", "tracker", "upload", "vault", "vendor",
    "version", "viewer", "volume", "wallet", "webcam", "widget", "window", "wireless",
];

const QUERY_TEMPLATES: &[&str] = &[
    "how do i fix the",
    "what is wrong with my",
    "where can i find the",
    "help me set up the",
    "why does it show the",
    "i need support for the",
    "can you explain the",
    "steps to reset the",
];

const WORDS_PER_TOPIC: usize = 6;

/// Build a retrieval corpus of paraphrase clusters: each cluster has one
/// index text and `queries_per_cluster` templated queries of the same
/// topic, optionally corrupted by character noise. Gold relevance maps
/// every query to all tuples of its cluster (they share the index text).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<TupleDataset> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, "synth", 0);
    let mut used_topics = BTreeSet::new();
    let mut tuples = Vec::with_capacity(spec.num_clusters * spec.queries_per_cluster);
    for c in 0..spec.num_clusters {
        let topic = loop {
            let mut picks = BTreeSet::new();
            while picks.len() < WORDS_PER_TOPIC {
                picks.insert(rng::bounded(&mut r, WORDS.len() as u64) as usize);
            }
            let words: Vec<&str> = picks.iter().map(|&i| WORDS[i]).collect();
            let topic = words.join(" ");
            if used_topics.insert(topic.clone()) {
                break topic;
            }
        };
        let cluster_ids: BTreeSet<String> = (0..spec.queries_per_cluster)
            .map(|k| format!("c{c:04}q{k}"))
            .collect();
        for k in 0..spec.queries_per_cluster {
            let template = QUERY_TEMPLATES[k % QUERY_TEMPLATES.len()];
            let mut query = format!("{template} {topic}");
            if spec.noise_rate > 0.0 {
                query = query
                    .chars()
                    .map(|ch| {
                        if rng::unit_f64(&mut r) < spec.noise_rate {
                            (b'a' + rng::bounded(&mut r, 26) as u8) as char
                        } else {
                            ch
                        }
                    })
                    .collect();
            }
            tuples.push(Tuple {
                id: format!("c{c:04}q{k}"),
                query,
                index: topic.clone(),
                hard_negative: None,
                score: None,
                relevant_ids: Some(cluster_ids.clone()),
            });
        }
    }
    TupleDataset::new(tuples)
}

fn check_fractions(fractions: (f64, f64, f64)) -> Result<()> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::config("split fractions must be non-negative"));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must sum to 1.0, got {}",
            a + b + c
        )));
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items over the fractions.
fn targets(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut base: [usize; 3] = [raw[0] as usize, raw[1] as usize, raw[2] as usize];
    let mut remainder = n - base.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| {
        let fi = raw[i] - base[i] as f64;
        let fj = raw[j] - base[j] as f64;
        fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
    });
    for &i in &order {
        if remainder == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            base[i] += 1;
            remainder -= 1;
        }
    }
    base[0] += remainder; // all-zero-fraction leftovers cannot happen (sum is 1)
    base
}

/// Seeded three-way partition. Clusters (tuples sharing a gold signature)
/// never straddle a boundary. A part with a positive fraction that ends up
/// empty is an error.
pub fn split(
    data: &TupleDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(TupleDataset, TupleDataset, TupleDataset)> {
    check_fractions(fractions)?;
    if data.is_empty() {
        return Err(Error::data("cannot split an empty dataset"));
    }
    let mut groups = data.groups();
    let mut r = rng::stream(seed, "split", 0);
    rng::shuffle(&mut r, &mut groups);
    let want = targets(data.len(), [fractions.0, fractions.1, fractions.2]);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for group in groups {
        // First part with room for the whole group; otherwise the one with
        // the most remaining capacity (ties to the earlier part).
        let chosen = (0..3)
            .find(|&p| parts[p].len() + group.len() <= want[p])
            .unwrap_or_else(|| {
                (0..3)
                    .max_by_key(|&p| want[p] as i64 - parts[p].len() as i64)
                    .unwrap()
            });
        parts[chosen].extend(group);
    }
    let fracs = [fractions.0, fractions.1, fractions.2];
    for (p, frac) in fracs.iter().enumerate() {
        if *frac > 0.0 && parts[p].is_empty() {
            return Err(Error::data(format!(
                "split produced an empty part {p} for fraction {frac}"
            )));
        }
    }
    for part in parts.iter_mut() {
        part.sort_unstable(); // keep original tuple order within each part
    }
    Ok((
        data.subset(&parts[0]),
        data.subset(&parts[1]),
        data.subset(&parts[2]),
    ))
}

/// Seeded train/validation carve-out with at least one validation tuple.
/// Cluster-aware like `split`.
pub fn holdout(
    data: &TupleDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(TupleDataset, TupleDataset)> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
        return Err(Error::config("val_fraction must be in (0, 1)"));
    }
    if data.len() < 2 {
        return Err(Error::data("holdout needs at least 2 tuples"));
    }
    let want_val = ((val_fraction * data.len() as f64).round() as usize).max(1);
    let mut groups = data.groups();
    let mut r = rng::stream(seed, "holdout", 0);
    rng::shuffle(&mut r, &mut groups);
    let mut val: Vec<usize> = Vec::new();
    let mut train: Vec<usize> = Vec::new();
    for group in groups {
        if val.len() < want_val {
            val.extend(group);
        } else {
            train.extend(group);
        }
    }
    if train.is_empty() {
        return Err(Error::data("holdout left no training tuples"));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((data.subset(&train), data.subset(&val)))
}

/// Seeded k-fold partition (cluster-aware); returns tuple indices per fold,
/// balanced by tuple count.
pub fn kfold_indices(data: &TupleDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config("k must be >= 2"));
    }
    if data.len() < k {
        return Err(Error::data(format!(
            "dataset of {} tuples is too small for {k} folds",
            data.len()
        )));
    }
    let mut groups = data.groups();
    let mut r = rng::stream(seed, "kfold", 0);
    rng::shuffle(&mut r, &mut groups);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for group in groups {
        let smallest = (0..k).min_by_key(|&f| (folds[f].len(), f)).unwrap();
        folds[smallest].extend(group);
    }
    if folds.iter().any(Vec::is_empty) {
        return Err(Error::data("k-fold partition produced an empty fold"));
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Materialize one fold's (train, eval) datasets from `kfold_indices`.
pub fn fold_datasets(
    data: &TupleDataset,
    folds: &[Vec<usize>],
    fold: usize,
) -> (TupleDataset, TupleDataset) {
    let eval_set: BTreeSet<usize> = folds[fold].iter().copied().collect();
    let train: Vec<usize> = (0..data.len()).filter(|i| !eval_set.contains(i)).collect();
    (data.subset(&train), data.subset(&folds[fold]))
}

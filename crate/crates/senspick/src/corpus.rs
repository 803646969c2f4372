//! Sense-annotated corpora in the native JSON-lines format.
//!
//! One object per line: `{"id": str, "tokens": [str], "target": int,
//! "lemma": str, "pos": "n|v|a|r", "gold": [str]}`. Evaluation sets may
//! list several acceptable gold senses. Upstream XML distributions are
//! converted to this format by [`crate::convert`].

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{Fnv, PartOfSpeech, SenseInventory};

/// Sentences longer than this are truncated around the target.
pub const MAX_TOKENS: usize = 128;
const HALF_WINDOW: usize = 64;

/// One disambiguation example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub lemma: String,
    pub pos: PartOfSpeech,
    pub gold: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    id: String,
    tokens: Vec<String>,
    target: usize,
    lemma: String,
    pos: String,
    gold: Vec<String>,
}

/// What happened during a corpus load: kept count plus skipped records
/// with the reason each was dropped.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub kept: usize,
    pub skipped: Vec<(String, String)>,
}

impl LoadReport {
    fn skip(&mut self, id: impl Into<String>, reason: impl Into<String>) {
        self.skipped.push((id.into(), reason.into()));
    }
}

/// Loads instances in file order, validating each against `inv`.
/// Malformed or unresolvable records are skipped and reported.
pub fn load_corpus(path: &Path, inv: &SenseInventory) -> Result<(Vec<Instance>, LoadReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::CorpusLoad {
        file: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    let mut report = LoadReport::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = match serde_json::from_str(line) {
            Ok(rec) => rec,
            Err(e) => {
                report.skip(format!("line {}", lineno + 1), e.to_string());
                continue;
            }
        };
        match validate(rec, inv) {
            Ok(inst) => {
                report.kept += 1;
                out.push(inst);
            }
            Err((id, reason)) => report.skip(id, reason),
        }
    }
    Ok((out, report))
}

fn validate(rec: InstanceRecord, inv: &SenseInventory) -> std::result::Result<Instance, (String, String)> {
    let fail = |reason: String| (rec.id.clone(), reason);
    let pos = PartOfSpeech::parse(&rec.pos)
        .ok_or_else(|| fail(format!("unknown pos '{}'", rec.pos)))?;
    if rec.tokens.is_empty() {
        return Err(fail("empty token list".into()));
    }
    if rec.target >= rec.tokens.len() {
        return Err(fail(format!(
            "target index {} out of range for {} tokens",
            rec.target,
            rec.tokens.len()
        )));
    }
    if rec.gold.is_empty() {
        return Err(fail("no gold senses".into()));
    }
    for g in &rec.gold {
        if !inv.contains(g) {
            return Err(fail(format!("gold sense {g} does not resolve in the inventory")));
        }
    }
    let (tokens, target_index) = truncate_window(rec.tokens, rec.target);
    Ok(Instance {
        id: rec.id,
        tokens: tokens.iter().map(|t| t.to_lowercase()).collect(),
        target_index,
        lemma: rec.lemma.to_lowercase(),
        pos,
        gold: rec.gold,
    })
}

/// Keeps at most [`MAX_TOKENS`] tokens in a window around the target.
fn truncate_window(tokens: Vec<String>, target: usize) -> (Vec<String>, usize) {
    if tokens.len() <= MAX_TOKENS {
        return (tokens, target);
    }
    let end = (target + HALF_WINDOW + 1).min(tokens.len());
    let start = end.saturating_sub(MAX_TOKENS).min(target.saturating_sub(HALF_WINDOW));
    let end = (start + MAX_TOKENS).min(tokens.len());
    let kept = tokens[start..end].to_vec();
    (kept, target - start)
}

/// Serializes instances back to the native format, one JSON object per line.
pub fn save_corpus(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for inst in instances {
        let rec = InstanceRecord {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
            target: inst.target_index,
            lemma: inst.lemma.clone(),
            pos: inst.pos.to_string(),
            gold: inst.gold.clone(),
        };
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Error {
        Error::InvalidArgument(e.to_string())
    }
}

/// Per-(lemma, pos) bijection between sense ids and contiguous class
/// indices, ordered by sense rank. Covers every inventory sense of each
/// lemma that appears in the instances, attested or not.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "LabelIndexRepr", into = "LabelIndexRepr")]
pub struct SenseLabelIndex {
    classes: HashMap<(String, PartOfSpeech), Vec<String>>,
}

/// Serialized form: sorted `(lemma, pos, classes)` rows.
#[derive(Serialize, Deserialize)]
struct LabelIndexRepr(Vec<(String, PartOfSpeech, Vec<String>)>);

impl From<LabelIndexRepr> for SenseLabelIndex {
    fn from(repr: LabelIndexRepr) -> Self {
        SenseLabelIndex {
            classes: repr.0.into_iter().map(|(l, p, c)| ((l, p), c)).collect(),
        }
    }
}

impl From<SenseLabelIndex> for LabelIndexRepr {
    fn from(index: SenseLabelIndex) -> Self {
        let mut rows: Vec<_> = index
            .classes
            .into_iter()
            .map(|((l, p), c)| (l, p, c))
            .collect();
        rows.sort();
        LabelIndexRepr(rows)
    }
}

impl SenseLabelIndex {
    pub fn classes(&self, lemma: &str, pos: PartOfSpeech) -> Option<&[String]> {
        self.classes.get(&(lemma.to_string(), pos)).map(|v| v.as_slice())
    }

    pub fn class_of(&self, lemma: &str, pos: PartOfSpeech, sense_id: &str) -> Option<usize> {
        self.classes(lemma, pos)?.iter().position(|s| s == sense_id)
    }

    pub fn keys(&self) -> impl Iterator<Item = &(String, PartOfSpeech)> {
        self.classes.keys()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut keys: Vec<_> = self.classes.keys().collect();
        keys.sort();
        let mut h = Fnv::new();
        for k in keys {
            h.write(k.0.as_bytes());
            h.write(&[k.1.as_char() as u8]);
            for c in &self.classes[k] {
                h.write(c.as_bytes());
                h.write(b"|");
            }
        }
        h.finish()
    }
}

/// Builds the label index for every (lemma, pos) seen in `instances`.
/// Lemmas with no inventory senses are excluded and reported.
pub fn build_label_index(
    instances: &[Instance],
    inv: &SenseInventory,
) -> (SenseLabelIndex, Vec<(String, PartOfSpeech)>) {
    let mut classes = HashMap::new();
    let mut excluded = Vec::new();
    for inst in instances {
        let key = (inst.lemma.clone(), inst.pos);
        if classes.contains_key(&key) || excluded.contains(&key) {
            continue;
        }
        let senses = inv.senses_of(&inst.lemma, inst.pos);
        if senses.is_empty() {
            excluded.push(key);
        } else {
            classes.insert(key, senses.iter().map(|s| s.id.clone()).collect());
        }
    }
    (SenseLabelIndex { classes }, excluded)
}

/// Gold-label counts over a training corpus, per (lemma, pos).
#[derive(Debug, Clone, Default)]
pub struct SenseFrequency {
    counts: HashMap<(String, PartOfSpeech), HashMap<String, u64>>,
}

impl SenseFrequency {
    pub fn count(&self, lemma: &str, pos: PartOfSpeech, sense_id: &str) -> u64 {
        self.counts
            .get(&(lemma.to_string(), pos))
            .and_then(|m| m.get(sense_id))
            .copied()
            .unwrap_or(0)
    }

    /// The most frequent training sense; ties go to the lower rank.
    pub fn most_frequent(&self, lemma: &str, pos: PartOfSpeech, inv: &SenseInventory) -> Option<String> {
        let by_sense = self.counts.get(&(lemma.to_string(), pos))?;
        let mut best: Option<(u64, u32, &str)> = None;
        for (sense_id, &count) in by_sense {
            let rank = inv.sense(sense_id).map(|s| s.rank).unwrap_or(u32::MAX);
            let better = match best {
                None => true,
                Some((bc, br, _)) => count > bc || (count == bc && rank < br),
            };
            if better {
                best = Some((count, rank, sense_id));
            }
        }
        best.map(|(_, _, id)| id.to_string())
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flat_map(|m| m.values()).sum()
    }
}

/// Exact multiset counts of gold labels; multi-gold instances contribute
/// one count to each listed gold sense.
pub fn sense_frequencies(instances: &[Instance]) -> SenseFrequency {
    let mut counts: HashMap<(String, PartOfSpeech), HashMap<String, u64>> = HashMap::new();
    for inst in instances {
        let per_lemma = counts.entry((inst.lemma.clone(), inst.pos)).or_default();
        for g in &inst.gold {
            *per_lemma.entry(g.clone()).or_insert(0) += 1;
        }
    }
    SenseFrequency { counts }
}

/// Stable content hash of a corpus, recorded in checkpoints.
pub fn corpus_fingerprint(instances: &[Instance]) -> u64 {
    let mut h = Fnv::new();
    for inst in instances {
        h.write(inst.id.as_bytes());
        for t in &inst.tokens {
            h.write(t.as_bytes());
            h.write(b" ");
        }
        h.write(&inst.target_index.to_le_bytes());
        h.write(inst.lemma.as_bytes());
        h.write(&[inst.pos.as_char() as u8]);
        for g in &inst.gold {
            h.write(g.as_bytes());
            h.write(b"|");
        }
        h.write(b"\n");
    }
    h.finish()
}

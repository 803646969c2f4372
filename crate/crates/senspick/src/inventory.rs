//! Sense inventory: a WordNet-style lexical database held in memory.
//!
//! Two on-disk layouts are accepted, auto-detected from the directory
//! contents:
//!
//! - the classic flat-file layout (`data.noun` / `index.noun`, ...);
//! - a repo-native `senses.tsv` with one record per line:
//!   `sense_id	lemma	pos	rank	hypernym_ids	hyponym_ids	gloss text`
//!   (relation id lists are comma-separated, may be empty).
//!
//! The inventory is immutable after load and safe to share across threads.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod wordnet;

pub use wordnet::load_sense_key_map;

pub const DEFAULT_HYPONYM_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartOfSpeech {
    Noun,
    Verb,
    Adjective,
    Adverb,
}

impl PartOfSpeech {
    pub fn parse(s: &str) -> Option<PartOfSpeech> {
        match s {
            "n" | "noun" => Some(PartOfSpeech::Noun),
            "v" | "verb" => Some(PartOfSpeech::Verb),
            "a" | "adj" | "adjective" | "s" => Some(PartOfSpeech::Adjective),
            "r" | "adv" | "adverb" => Some(PartOfSpeech::Adverb),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            PartOfSpeech::Noun => 'n',
            PartOfSpeech::Verb => 'v',
            PartOfSpeech::Adjective => 'a',
            PartOfSpeech::Adverb => 'r',
        }
    }
}

impl fmt::Display for PartOfSpeech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// One dictionary meaning of a (lemma, part-of-speech) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sense {
    pub id: String,
    pub lemma: String,
    pub pos: PartOfSpeech,
    /// Normalized gloss tokens: lowercased, punctuation stripped, example
    /// segment (text after the first double quote) dropped.
    pub gloss: Vec<String>,
    /// 1-based inventory rank; rank 1 is the first sense.
    pub rank: u32,
}

/// The expanded gloss sequence of one sense: hypernym-chain glosses at
/// offsets -m..-1, the sense's own gloss at offset 0, hyponym glosses at
/// offsets 1..n in breadth-first discovery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlossSet {
    pub sense_id: String,
    pub entries: Vec<(i32, Vec<String>)>,
}

impl GlossSet {
    /// Hypernym chain length (number of negative offsets).
    pub fn m(&self) -> usize {
        self.entries.iter().filter(|(o, _)| *o < 0).count()
    }

    /// Hyponym count (number of positive offsets).
    pub fn n(&self) -> usize {
        self.entries.iter().filter(|(o, _)| *o > 0).count()
    }

    pub fn own_gloss(&self) -> &[String] {
        &self
            .entries
            .iter()
            .find(|(o, _)| *o == 0)
            .expect("offset 0 always present")
            .1
    }
}

#[derive(Debug)]
pub struct SenseInventory {
    senses: Vec<Sense>,
    by_id: HashMap<String, usize>,
    by_key: HashMap<(String, PartOfSpeech), Vec<usize>>,
    hypernyms: Vec<Vec<usize>>,
    hyponyms: Vec<Vec<usize>>,
    hyponym_cap: usize,
    fingerprint: u64,
}

/// Raw sense record produced by the format-specific readers.
pub(crate) struct RawSense {
    pub id: String,
    pub lemma: String,
    pub pos: PartOfSpeech,
    pub rank: u32,
    pub hypernyms: Vec<String>,
    pub hyponyms: Vec<String>,
    pub gloss: String,
}

impl SenseInventory {
    /// Loads a lexical database from `dir`, auto-detecting the layout.
    pub fn load(dir: &Path) -> Result<SenseInventory> {
        let tsv = dir.join("senses.tsv");
        let raw = if tsv.is_file() {
            read_tsv(&tsv)?
        } else if wordnet::looks_like_wordnet(dir) {
            wordnet::read_wordnet(dir)?
        } else {
            return Err(Error::InventoryLoad {
                file: dir.to_path_buf(),
                reason: "no senses.tsv and no index.*/data.* files found".into(),
            });
        };
        Self::from_raw(raw, dir)
    }

    fn from_raw(raw: Vec<RawSense>, dir: &Path) -> Result<SenseInventory> {
        let mut senses = Vec::with_capacity(raw.len());
        let mut by_id = HashMap::new();
        for rec in &raw {
            let gloss = normalize_gloss(&rec.gloss);
            if gloss.is_empty() {
                return Err(Error::InventoryLoad {
                    file: dir.to_path_buf(),
                    reason: format!("sense {} has an empty gloss after normalization", rec.id),
                });
            }
            let idx = senses.len();
            if by_id.insert(rec.id.clone(), idx).is_some() {
                return Err(Error::InventoryLoad {
                    file: dir.to_path_buf(),
                    reason: format!("duplicate sense_id {}", rec.id),
                });
            }
            senses.push(Sense {
                id: rec.id.clone(),
                lemma: rec.lemma.to_lowercase(),
                pos: rec.pos,
                gloss,
                rank: rec.rank,
            });
        }

        let resolve = |list: &[String], referrer: &str| -> Result<Vec<usize>> {
            list.iter()
                .map(|id| {
                    by_id.get(id).copied().ok_or_else(|| Error::DanglingRelation {
                        referrer: referrer.to_string(),
                        target: id.clone(),
                    })
                })
                .collect()
        };
        let mut hypernyms = Vec::with_capacity(raw.len());
        let mut hyponyms = Vec::with_capacity(raw.len());
        for rec in &raw {
            hypernyms.push(resolve(&rec.hypernyms, &rec.id)?);
            hyponyms.push(resolve(&rec.hyponyms, &rec.id)?);
        }

        let mut by_key: HashMap<(String, PartOfSpeech), Vec<usize>> = HashMap::new();
        for (idx, s) in senses.iter().enumerate() {
            by_key.entry((s.lemma.clone(), s.pos)).or_default().push(idx);
        }
        for (key, list) in by_key.iter_mut() {
            list.sort_by_key(|&i| senses[i].rank);
            for (want, &i) in (1..).zip(list.iter()) {
                if senses[i].rank != want {
                    return Err(Error::InventoryLoad {
                        file: dir.to_path_buf(),
                        reason: format!(
                            "ranks of '{}' ({}) are not contiguous from 1: found rank {} where {} was expected",
                            key.0, key.1, senses[i].rank, want
                        ),
                    });
                }
            }
        }

        let inv = SenseInventory {
            fingerprint: fingerprint_of(&senses, &raw),
            senses,
            by_id,
            by_key,
            hypernyms,
            hyponyms,
            hyponym_cap: DEFAULT_HYPONYM_CAP,
        };
        inv.check_first_parent_acyclic(dir)?;
        Ok(inv)
    }

    fn check_first_parent_acyclic(&self, dir: &Path) -> Result<()> {
        // 0 = unvisited, 1 = on current walk, 2 = proven acyclic
        let mut state = vec![0u8; self.senses.len()];
        for start in 0..self.senses.len() {
            let mut walk = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => {
                        return Err(Error::InventoryLoad {
                            file: dir.to_path_buf(),
                            reason: format!(
                                "first-listed hypernym cycle through {}",
                                self.senses[cur].id
                            ),
                        })
                    }
                    _ => {}
                }
                state[cur] = 1;
                walk.push(cur);
                match self.hypernyms[cur].first() {
                    Some(&next) => cur = next,
                    None => break,
                }
            }
            for i in walk {
                state[i] = 2;
            }
        }
        Ok(())
    }

    /// Senses of a lemma in ascending rank order; empty if unknown.
    pub fn senses_of(&self, lemma: &str, pos: PartOfSpeech) -> Vec<&Sense> {
        self.by_key
            .get(&(lemma.to_lowercase(), pos))
            .map(|list| list.iter().map(|&i| &self.senses[i]).collect())
            .unwrap_or_default()
    }

    /// The rank-1 sense, or `None` when the lemma is unknown.
    pub fn first_sense(&self, lemma: &str, pos: PartOfSpeech) -> Option<&Sense> {
        self.by_key
            .get(&(lemma.to_lowercase(), pos))
            .and_then(|list| list.first())
            .map(|&i| &self.senses[i])
    }

    pub fn sense(&self, id: &str) -> Option<&Sense> {
        self.by_id.get(id).map(|&i| &self.senses[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.senses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senses.is_empty()
    }

    /// Stable content hash; training corpora and checkpoints record it so a
    /// model is never evaluated against a different inventory.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn hyponym_cap(&self) -> usize {
        self.hyponym_cap
    }

    pub fn set_hyponym_cap(&mut self, cap: usize) {
        self.hyponym_cap = cap;
    }

    /// Builds the depth-bounded expanded gloss set of `sense`.
    ///
    /// Offset 0 carries the sense's own gloss. Offsets -1..-m walk the
    /// hypernym chain (first-listed parent at each level, nearest first)
    /// with m = min(k, chain length). Offsets 1..n are hyponym glosses
    /// found breadth-first over first-listed-order children within depth
    /// k, truncated at the hyponym cap.
    pub fn expand_gloss(&self, sense: &Sense, k: usize) -> Result<GlossSet> {
        let &idx = self.by_id.get(&sense.id).ok_or_else(|| {
            Error::InvalidArgument(format!("sense {} is not in this inventory", sense.id))
        })?;

        let mut entries = Vec::new();

        // hypernym chain, nearest ancestor first
        let mut chain = Vec::new();
        let mut cur = idx;
        while chain.len() < k {
            match self.hypernyms[cur].first() {
                Some(&parent) => {
                    chain.push(parent);
                    cur = parent;
                }
                None => break,
            }
        }
        for (depth, &anc) in chain.iter().enumerate() {
            entries.push((-(depth as i32) - 1, self.senses[anc].gloss.clone()));
        }
        entries.reverse();

        entries.push((0, self.senses[idx].gloss.clone()));

        // hyponyms: BFS in first-listed order, depth <= k, capped
        let mut seen: HashSet<usize> = HashSet::new();
        seen.insert(idx);
        let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
        queue.push_back((idx, 0));
        let mut offset = 0;
        'bfs: while let Some((node, depth)) = queue.pop_front() {
            if depth == k {
                continue;
            }
            for &child in &self.hyponyms[node] {
                if !seen.insert(child) {
                    continue;
                }
                offset += 1;
                entries.push((offset, self.senses[child].gloss.clone()));
                if offset as usize >= self.hyponym_cap {
                    break 'bfs;
                }
                queue.push_back((child, depth + 1));
            }
        }

        Ok(GlossSet {
            sense_id: sense.id.clone(),
            entries,
        })
    }
}

/// Lowercase, drop the quoted example segment, strip punctuation, split.
pub fn normalize_gloss(text: &str) -> Vec<String> {
    let definition = text.split('"').next().unwrap_or("");
    definition
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn fingerprint_of(senses: &[Sense], raw: &[RawSense]) -> u64 {
    let mut order: Vec<usize> = (0..senses.len()).collect();
    order.sort_by(|&a, &b| senses[a].id.cmp(&senses[b].id));
    let mut h = Fnv::new();
    for i in order {
        let s = &senses[i];
        h.write(s.id.as_bytes());
        h.write(s.lemma.as_bytes());
        h.write(&[s.pos.as_char() as u8]);
        h.write(&s.rank.to_le_bytes());
        for t in &s.gloss {
            h.write(t.as_bytes());
            h.write(b" ");
        }
        for r in raw[i].hypernyms.iter().chain(raw[i].hyponyms.iter()) {
            h.write(r.as_bytes());
            h.write(b"|");
        }
        h.write(b"\n");
    }
    h.finish()
}

/// FNV-1a, used for content fingerprints.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub fn new() -> Fnv {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    pub fn finish(&self) -> u64 {
        self.0
    }
}

fn read_tsv(file: &PathBuf) -> Result<Vec<RawSense>> {
    let text = fs::read_to_string(file).map_err(|e| Error::InventoryLoad {
        file: file.clone(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::InventoryLoad {
                file: file.clone(),
                reason: format!("line {}: expected 7 tab-separated fields, got {}", lineno + 1, fields.len()),
            });
        }
        let pos = PartOfSpeech::parse(fields[2]).ok_or_else(|| Error::InventoryLoad {
            file: file.clone(),
            reason: format!("line {}: unknown part of speech '{}'", lineno + 1, fields[2]),
        })?;
        let rank: u32 = fields[3].parse().map_err(|_| Error::InventoryLoad {
            file: file.clone(),
            reason: format!("line {}: bad rank '{}'", lineno + 1, fields[3]),
        })?;
        if rank == 0 {
            return Err(Error::InventoryLoad {
                file: file.clone(),
                reason: format!("line {}: rank must be positive", lineno + 1),
            });
        }
        let split_ids = |s: &str| -> Vec<String> {
            s.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        };
        out.push(RawSense {
            id: fields[0].to_string(),
            lemma: fields[1].to_string(),
            pos,
            rank,
            hypernyms: split_ids(fields[4]),
            hyponyms: split_ids(fields[5]),
            gloss: fields[6].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    fn toy() -> SenseInventory {
        SenseInventory::load(&fixture("toy")).unwrap()
    }

    #[test]
    fn minimal_fixture_has_three_ranked_senses() {
        let inv = SenseInventory::load(&fixture("toy_minimal")).unwrap();
        assert_eq!(inv.len(), 3);
        let senses = inv.senses_of("set", PartOfSpeech::Noun);
        assert_eq!(senses.len(), 3);
        assert_eq!(
            senses.iter().map(|s| s.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn unknown_lemma_is_empty_not_error() {
        let inv = toy();
        assert!(inv.senses_of("zzzz", PartOfSpeech::Noun).is_empty());
        assert!(inv.first_sense("zzzz", PartOfSpeech::Noun).is_none());
    }

    #[test]
    fn first_sense_is_head_of_senses_of() {
        let inv = toy();
        for key in ["spark", "flare", "light", "arc"] {
            let all = inv.senses_of(key, PartOfSpeech::Noun);
            assert_eq!(inv.first_sense(key, PartOfSpeech::Noun).unwrap().id, all[0].id);
            assert_eq!(all[0].rank, 1);
        }
    }

    #[test]
    fn pos_spaces_are_separate() {
        let inv = toy();
        assert_eq!(inv.senses_of("spark", PartOfSpeech::Noun).len(), 3);
        assert_eq!(inv.senses_of("spark", PartOfSpeech::Verb).len(), 1);
    }

    #[test]
    fn empty_directory_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = SenseInventory::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::InventoryLoad { .. }));
    }

    #[test]
    fn k_zero_yields_only_own_gloss() {
        let inv = toy();
        for lemma in ["spark", "flare", "light", "arc", "bolt"] {
            for sense in inv.senses_of(lemma, PartOfSpeech::Noun) {
                let gs = inv.expand_gloss(sense, 0).unwrap();
                assert_eq!(gs.entries.len(), 1);
                assert_eq!(gs.entries[0].0, 0);
                assert_eq!(gs.entries[0].1, sense.gloss);
            }
        }
    }

    #[test]
    fn hypernym_chain_is_truncated_at_k() {
        let inv = toy();
        // spark#1 -> flare -> light -> phenomenon is a 3-deep chain
        let sense = inv.first_sense("spark", PartOfSpeech::Noun).unwrap();
        let gs = inv.expand_gloss(sense, 2).unwrap();
        assert_eq!(gs.m(), 2);
        let minus_one = gs.entries.iter().find(|(o, _)| *o == -1).unwrap();
        assert_eq!(minus_one.1, inv.sense("flare%n%1").unwrap().gloss);
        let minus_two = gs.entries.iter().find(|(o, _)| *o == -2).unwrap();
        assert_eq!(minus_two.1, inv.sense("light%n%1").unwrap().gloss);

        let gs3 = inv.expand_gloss(sense, 3).unwrap();
        assert_eq!(gs3.m(), 3);
        let gs9 = inv.expand_gloss(sense, 9).unwrap();
        assert_eq!(gs9.m(), 3, "chain exhausted before k");
    }

    #[test]
    fn multi_parent_sense_follows_first_listed() {
        let inv = toy();
        let flash = inv.sense("flash%n%1").unwrap().clone();
        let gs = inv.expand_gloss(&flash, 1).unwrap();
        assert_eq!(gs.m(), 1);
        assert_eq!(gs.entries[0].1, inv.sense("light%n%1").unwrap().gloss);
    }

    #[test]
    fn hyponyms_are_bfs_ordered_and_capped() {
        let inv = toy();
        let sense = inv.first_sense("spark", PartOfSpeech::Noun).unwrap();
        // depth 2 reaches {arc, flash, glint} then {bolt, surge, strobe}; cap 5
        let gs = inv.expand_gloss(sense, 2).unwrap();
        assert_eq!(gs.n(), 5);
        let hypo: Vec<&[String]> = gs
            .entries
            .iter()
            .filter(|(o, _)| *o > 0)
            .map(|(_, g)| g.as_slice())
            .collect();
        for (i, id) in ["arc%n%1", "flash%n%1", "glint%n%1", "bolt%n%1", "surge%n%1"]
            .iter()
            .enumerate()
        {
            assert_eq!(hypo[i], inv.sense(id).unwrap().gloss.as_slice(), "slot {i}");
        }
        // depth 1 sees only the direct children
        let gs1 = inv.expand_gloss(sense, 1).unwrap();
        assert_eq!(gs1.n(), 3);
    }

    #[test]
    fn offsets_are_gap_free_and_deterministic_for_all_depths() {
        let inv = toy();
        for lemma in ["spark", "flare", "light", "phenomenon", "arc", "flash"] {
            for sense in inv.senses_of(lemma, PartOfSpeech::Noun) {
                for k in 0..5 {
                    let gs = inv.expand_gloss(sense, k).unwrap();
                    let offsets: Vec<i32> = gs.entries.iter().map(|(o, _)| *o).collect();
                    let m = gs.m() as i32;
                    let n = gs.n() as i32;
                    assert_eq!(offsets, (-m..=n).collect::<Vec<_>>());
                    assert!(gs.m() <= k);
                    assert_eq!(gs.own_gloss(), sense.gloss.as_slice());
                    assert_eq!(gs, inv.expand_gloss(sense, k).unwrap());
                }
            }
        }
    }

    #[test]
    fn depth_k_entries_reappear_at_depth_k_plus_one() {
        let inv = toy();
        for lemma in ["spark", "flare", "arc", "flash"] {
            for sense in inv.senses_of(lemma, PartOfSpeech::Noun) {
                for k in 0..4 {
                    let small = inv.expand_gloss(sense, k).unwrap();
                    let big = inv.expand_gloss(sense, k + 1).unwrap();
                    for (off, gloss) in &small.entries {
                        let found = big
                            .entries
                            .iter()
                            .find(|(o, g)| o.signum() == off.signum() && g == gloss);
                        assert!(
                            found.is_some(),
                            "{lemma} k={k} offset {off} missing at k+1"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn quoted_example_segment_is_dropped() {
        let inv = toy();
        let glint = inv.sense("glint%n%1").unwrap();
        assert_eq!(
            glint.gloss,
            vec!["a", "brief", "flash", "of", "light"]
        );
    }

    #[test]
    fn gloss_normalization_rules() {
        assert_eq!(
            normalize_gloss("Sharp, intense FLASH; e.g. (of light)"),
            vec!["sharp", "intense", "flash", "e", "g", "of", "light"]
        );
        assert_eq!(normalize_gloss("plain words here"), vec!["plain", "words", "here"]);
        assert!(normalize_gloss("\"only an example\"").is_empty());
    }

    #[test]
    fn dangling_relation_names_the_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("senses.tsv")).unwrap();
        writeln!(f, "a%n%1\ta\tn\t1\tmissing%n%1\t\tsome gloss").unwrap();
        drop(f);
        match SenseInventory::load(dir.path()).unwrap_err() {
            Error::DanglingRelation { referrer, target } => {
                assert_eq!(referrer, "a%n%1");
                assert_eq!(target, "missing%n%1");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_gloss_is_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("senses.tsv")).unwrap();
        writeln!(f, "a%n%1\ta\tn\t1\t\t\t\"entirely an example\"").unwrap();
        drop(f);
        let err = SenseInventory::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("a%n%1"), "{err}");
    }

    #[test]
    fn non_contiguous_ranks_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("senses.tsv")).unwrap();
        writeln!(f, "a%n%1\ta\tn\t1\t\t\tfirst gloss").unwrap();
        writeln!(f, "a%n%3\ta\tn\t3\t\t\tthird gloss").unwrap();
        drop(f);
        let err = SenseInventory::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("not contiguous"), "{err}");
    }

    #[test]
    fn first_parent_cycle_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("senses.tsv")).unwrap();
        writeln!(f, "a%n%1\ta\tn\t1\tb%n%1\t\tgloss of a").unwrap();
        writeln!(f, "b%n%1\tb\tn\t1\ta%n%1\t\tgloss of b").unwrap();
        drop(f);
        let err = SenseInventory::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn fingerprint_is_stable_across_reloads() {
        let a = toy().fingerprint();
        let b = toy().fingerprint();
        assert_eq!(a, b);
        assert_ne!(a, SenseInventory::load(&fixture("toy_minimal")).unwrap().fingerprint());
    }

    #[test]
    fn wordnet_layout_mini_database() {
        let inv = SenseInventory::load(&fixture("wn_mini")).unwrap();
        // "play" has two noun senses, ranked by index order
        let plays = inv.senses_of("play", PartOfSpeech::Noun);
        assert!(plays.len() >= 2);
        assert_eq!(plays[0].id, "play%n%07018931");
        assert_eq!(plays[0].rank, 1);
        // the root has no hypernyms, so k=2 expansion has m = 0
        let entity = inv.first_sense("entity", PartOfSpeech::Noun).unwrap();
        let gs = inv.expand_gloss(entity, 2).unwrap();
        assert_eq!(gs.m(), 0);
        assert!(gs.n() > 0);
        // example segment dropped from a data-file gloss
        let object = inv.first_sense("object", PartOfSpeech::Noun).unwrap();
        assert_eq!(
            object.gloss,
            vec!["a", "tangible", "and", "visible", "entity"]
        );
    }

    // The same facts hold for a real installation; run when one is present.
    #[test]
    fn wordnet_full_database_if_installed() {
        let Some(dir) = std::env::var_os("WORDNET_DIR") else {
            eprintln!("WORDNET_DIR not set; skipping full-database checks");
            return;
        };
        let inv = SenseInventory::load(Path::new(&dir)).unwrap();
        assert!(inv.senses_of("play", PartOfSpeech::Noun).len() >= 2);
        let entity = inv.first_sense("entity", PartOfSpeech::Noun).unwrap();
        let gs = inv.expand_gloss(entity, 2).unwrap();
        assert_eq!(gs.m(), 0);
    }
}

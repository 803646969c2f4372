//! Reader for the classic WordNet 3.0 flat-file layout.
//!
//! `index.{pos}` supplies the lemma -> synset list (in rank order) and
//! `data.{pos}` supplies glosses plus hypernym (`@`, `@i`) and hyponym
//! (`~`, `~i`) pointers. A sense here is a (lemma, synset) pair with id
//! `lemma%pos%offset`; relation targets resolve to the first-listed word
//! of the target synset.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{PartOfSpeech, RawSense};

const POS_FILES: [(&str, PartOfSpeech); 4] = [
    ("noun", PartOfSpeech::Noun),
    ("verb", PartOfSpeech::Verb),
    ("adj", PartOfSpeech::Adjective),
    ("adv", PartOfSpeech::Adverb),
];

pub(super) fn looks_like_wordnet(dir: &Path) -> bool {
    POS_FILES
        .iter()
        .any(|(suffix, _)| dir.join(format!("data.{suffix}")).is_file())
}

struct Synset {
    first_word: String,
    gloss: String,
    hypernyms: Vec<(PartOfSpeech, String)>,
    hyponyms: Vec<(PartOfSpeech, String)>,
}

pub(super) fn read_wordnet(dir: &Path) -> Result<Vec<RawSense>> {
    let mut synsets: HashMap<(PartOfSpeech, String), Synset> = HashMap::new();
    let mut present = Vec::new();

    for (suffix, pos) in POS_FILES {
        let data = dir.join(format!("data.{suffix}"));
        if !data.is_file() {
            continue;
        }
        let index = dir.join(format!("index.{suffix}"));
        if !index.is_file() {
            return Err(Error::InventoryLoad {
                file: index,
                reason: format!("data.{suffix} is present but index.{suffix} is missing"),
            });
        }
        present.push((index, pos));
        read_data_file(&data, pos, &mut synsets)?;
    }

    let mut out = Vec::new();
    for (index, pos) in present {
        read_index_file(&index, pos, &synsets, &mut out)?;
    }
    Ok(out)
}

fn sense_id(lemma: &str, pos: PartOfSpeech, offset: &str) -> String {
    format!("{lemma}%{}%{offset}", pos.as_char())
}

fn read_data_file(
    file: &PathBuf,
    pos: PartOfSpeech,
    synsets: &mut HashMap<(PartOfSpeech, String), Synset>,
) -> Result<()> {
    let text = fs::read_to_string(file).map_err(|e| Error::InventoryLoad {
        file: file.clone(),
        reason: e.to_string(),
    })?;
    for line in text.lines() {
        if line.starts_with(' ') || line.trim().is_empty() {
            continue; // license header
        }
        let (head, gloss) = line.split_once('|').ok_or_else(|| Error::InventoryLoad {
            file: file.clone(),
            reason: format!("data line without a gloss separator: {}", truncate(line)),
        })?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let corrupt = |what: &str| Error::InventoryLoad {
            file: file.clone(),
            reason: format!("{what} in data line: {}", truncate(line)),
        };
        if fields.len() < 4 {
            return Err(corrupt("too few fields"));
        }
        let offset = fields[0].to_string();
        let ss_type = fields[2];
        let word_pos = match ss_type {
            "s" => PartOfSpeech::Adjective,
            other => PartOfSpeech::parse(other).ok_or_else(|| corrupt("bad synset type"))?,
        };
        if word_pos != pos {
            return Err(corrupt("synset type does not match the file"));
        }
        let w_cnt =
            usize::from_str_radix(fields[3], 16).map_err(|_| corrupt("bad word count"))?;
        if w_cnt == 0 || fields.len() < 4 + 2 * w_cnt + 1 {
            return Err(corrupt("truncated word list"));
        }
        let first_word = normalize_word(fields[4]);
        let p_cnt: usize = fields[4 + 2 * w_cnt]
            .parse()
            .map_err(|_| corrupt("bad pointer count"))?;
        let ptr_base = 4 + 2 * w_cnt + 1;
        if fields.len() < ptr_base + 4 * p_cnt {
            return Err(corrupt("truncated pointer list"));
        }
        let mut hypernyms = Vec::new();
        let mut hyponyms = Vec::new();
        for p in 0..p_cnt {
            let sym = fields[ptr_base + 4 * p];
            let target_offset = fields[ptr_base + 4 * p + 1];
            let target_pos = PartOfSpeech::parse(fields[ptr_base + 4 * p + 2])
                .ok_or_else(|| corrupt("bad pointer pos"))?;
            match sym {
                "@" | "@i" => hypernyms.push((target_pos, target_offset.to_string())),
                "~" | "~i" => hyponyms.push((target_pos, target_offset.to_string())),
                _ => {}
            }
        }
        synsets.insert(
            (pos, offset),
            Synset {
                first_word,
                gloss: gloss.trim().to_string(),
                hypernyms,
                hyponyms,
            },
        );
    }
    Ok(())
}

fn read_index_file(
    file: &PathBuf,
    pos: PartOfSpeech,
    synsets: &HashMap<(PartOfSpeech, String), Synset>,
    out: &mut Vec<RawSense>,
) -> Result<()> {
    let text = fs::read_to_string(file).map_err(|e| Error::InventoryLoad {
        file: file.clone(),
        reason: e.to_string(),
    })?;
    for line in text.lines() {
        if line.starts_with(' ') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let corrupt = |what: &str| Error::InventoryLoad {
            file: file.clone(),
            reason: format!("{what} in index line: {}", truncate(line)),
        };
        if fields.len() < 6 {
            return Err(corrupt("too few fields"));
        }
        let lemma = fields[0].to_lowercase();
        let synset_cnt: usize = fields[2].parse().map_err(|_| corrupt("bad synset count"))?;
        let p_cnt: usize = fields[3].parse().map_err(|_| corrupt("bad pointer count"))?;
        let offsets_at = 4 + p_cnt + 2;
        if fields.len() < offsets_at + synset_cnt {
            return Err(corrupt("truncated offset list"));
        }
        for (i, &offset) in fields[offsets_at..offsets_at + synset_cnt].iter().enumerate() {
            let synset = synsets.get(&(pos, offset.to_string())).ok_or_else(|| {
                Error::DanglingRelation {
                    referrer: format!("index entry {lemma} ({pos})"),
                    target: sense_id(&lemma, pos, offset),
                }
            })?;
            let resolve = |targets: &[(PartOfSpeech, String)]| -> Result<Vec<String>> {
                targets
                    .iter()
                    .map(|(tpos, toff)| {
                        let t = synsets.get(&(*tpos, toff.clone())).ok_or_else(|| {
                            Error::DanglingRelation {
                                referrer: sense_id(&lemma, pos, offset),
                                target: sense_id("?", *tpos, toff),
                            }
                        })?;
                        Ok(sense_id(&t.first_word, *tpos, toff))
                    })
                    .collect()
            };
            out.push(RawSense {
                id: sense_id(&lemma, pos, offset),
                lemma: lemma.clone(),
                pos,
                rank: (i + 1) as u32,
                hypernyms: resolve(&synset.hypernyms)?,
                hyponyms: resolve(&synset.hyponyms)?,
                gloss: synset.gloss.clone(),
            });
        }
    }
    Ok(())
}

/// Data-file words may carry adjective syntax markers like `word(a)`.
fn normalize_word(word: &str) -> String {
    let bare = word.split('(').next().unwrap_or(word);
    bare.to_lowercase()
}

fn truncate(line: &str) -> String {
    if line.len() > 60 {
        format!("{}...", &line[..60])
    } else {
        line.to_string()
    }
}

/// Resolves a sense key like `play%1:10:00::` against `index.sense`,
/// yielding this crate's sense ids. Used by the corpus converter.
pub fn load_sense_key_map(dir: &Path) -> Result<HashMap<String, String>> {
    let file = dir.join("index.sense");
    let text = fs::read_to_string(&file).map_err(|e| Error::InventoryLoad {
        file: file.clone(),
        reason: e.to_string(),
    })?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            continue;
        }
        let key = fields[0];
        let offset = fields[1];
        let Some((lemma, rest)) = key.split_once('%') else {
            continue;
        };
        let pos = match rest.chars().next() {
            Some('1') => PartOfSpeech::Noun,
            Some('2') => PartOfSpeech::Verb,
            Some('3') | Some('5') => PartOfSpeech::Adjective,
            Some('4') => PartOfSpeech::Adverb,
            _ => continue,
        };
        map.insert(key.to_string(), sense_id(&lemma.to_lowercase(), pos, offset));
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sense_key_map_resolves_pos_digits() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wn_mini");
        let map = load_sense_key_map(&dir).unwrap();
        assert_eq!(map["play%1:10:00::"], "play%n%07018931");
        assert_eq!(map["entity%1:03:00::"], "entity%n%00001740");
    }
}

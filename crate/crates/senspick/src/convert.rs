//! Converter from the unified evaluation-framework XML layout (one
//! `<corpus>` of `<text>`/`<sentence>` elements holding `<wf>` and
//! `<instance>` tokens, plus a gold key file) into the native JSON-lines
//! corpus format.
//!
//! Tokenization and lemmatization live here, not in the library: tokens
//! are lowercased surface forms, tokens without any alphanumeric
//! character are dropped, and gold sense keys are resolved to inventory
//! sense ids through `index.sense` when a lexical-database directory is
//! supplied.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inventory::load_sense_key_map;

#[derive(Debug, Serialize)]
pub struct ConvertedInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub target: usize,
    pub lemma: String,
    pub pos: String,
    pub gold: Vec<String>,
}

#[derive(Debug, Default)]
pub struct ConvertReport {
    pub sentences: usize,
    pub instances: usize,
    pub skipped: Vec<(String, String)>,
    /// targets whose lowercased surface form differs from the lemma
    /// (inflections); informational
    pub surface_divergences: usize,
}

struct PendingTarget {
    id: String,
    lemma: String,
    pos: String,
    token_index: usize,
    surface: String,
}

/// Converts `xml` with gold labels from `keys`; `wordnet_dir`, when
/// given, maps standard sense keys to this crate's sense ids.
pub fn convert(
    xml: &Path,
    keys: &Path,
    wordnet_dir: Option<&Path>,
) -> Result<(Vec<ConvertedInstance>, ConvertReport)> {
    let key_map = read_key_file(keys)?;
    let sense_ids = match wordnet_dir {
        Some(dir) => Some(load_sense_key_map(dir)?),
        None => None,
    };

    let text = fs::read_to_string(xml).map_err(|e| Error::Convert {
        file: xml.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut reader = Reader::from_str(&text);
    reader.config_mut().trim_text(true);

    let mut report = ConvertReport::default();
    let mut out = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut targets: Vec<PendingTarget> = Vec::new();
    let mut current: Option<PendingTarget> = None;
    let mut in_wf = false;

    loop {
        match reader.read_event() {
            Err(e) => {
                return Err(Error::Convert {
                    file: xml.to_path_buf(),
                    reason: format!("XML parse error at byte {}: {e}", reader.buffer_position()),
                })
            }
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) => match e.name().as_ref() {
                b"sentence" => {
                    tokens.clear();
                    targets.clear();
                }
                b"wf" => in_wf = true,
                b"instance" => {
                    let get = |name: &[u8]| -> Option<String> {
                        e.attributes().flatten().find_map(|a| {
                            (a.key.as_ref() == name)
                                .then(|| String::from_utf8_lossy(&a.value).into_owned())
                        })
                    };
                    current = Some(PendingTarget {
                        id: get(b"id").unwrap_or_default(),
                        lemma: get(b"lemma").unwrap_or_default().to_lowercase(),
                        pos: get(b"pos").unwrap_or_default(),
                        token_index: usize::MAX,
                        surface: String::new(),
                    });
                }
                _ => {}
            },
            Ok(Event::Text(t)) => {
                let surface = t.xml_content().map_err(|e| Error::Convert {
                    file: xml.to_path_buf(),
                    reason: e.to_string(),
                })?;
                let token = surface.to_lowercase();
                if !token.chars().any(|c| c.is_alphanumeric()) {
                    continue; // punctuation-only token
                }
                if let Some(target) = current.as_mut() {
                    target.token_index = tokens.len();
                    target.surface = token.clone();
                } else if !in_wf {
                    continue; // stray text outside wf/instance
                }
                tokens.push(token);
            }
            Ok(Event::End(e)) => match e.name().as_ref() {
                b"wf" => in_wf = false,
                b"instance" => {
                    if let Some(target) = current.take() {
                        targets.push(target);
                    }
                }
                b"sentence" => {
                    report.sentences += 1;
                    flush_sentence(
                        &tokens,
                        std::mem::take(&mut targets),
                        &key_map,
                        sense_ids.as_ref(),
                        &mut out,
                        &mut report,
                    );
                }
                _ => {}
            },
            Ok(_) => {}
        }
    }
    Ok((out, report))
}

fn flush_sentence(
    tokens: &[String],
    targets: Vec<PendingTarget>,
    key_map: &HashMap<String, Vec<String>>,
    sense_ids: Option<&HashMap<String, String>>,
    out: &mut Vec<ConvertedInstance>,
    report: &mut ConvertReport,
) {
    for target in targets {
        let skip = |report: &mut ConvertReport, reason: String| {
            report.skipped.push((target.id.clone(), reason));
        };
        let pos = match target.pos.as_str() {
            "NOUN" => "n",
            "VERB" => "v",
            "ADJ" => "a",
            "ADV" => "r",
            other => {
                skip(report, format!("unsupported pos '{other}'"));
                continue;
            }
        };
        if target.token_index == usize::MAX || tokens.is_empty() {
            skip(report, "no surface token".into());
            continue;
        }
        let Some(keys) = key_map.get(&target.id) else {
            skip(report, "no gold key".into());
            continue;
        };
        let gold: Vec<String> = keys
            .iter()
            .map(|k| match sense_ids {
                Some(map) => map.get(k).cloned().unwrap_or_else(|| k.clone()),
                None => k.clone(),
            })
            .collect();
        if target.surface != target.lemma {
            report.surface_divergences += 1;
        }
        report.instances += 1;
        out.push(ConvertedInstance {
            id: target.id,
            tokens: tokens.to_vec(),
            target: target.token_index,
            lemma: target.lemma,
            pos: pos.to_string(),
            gold,
        });
    }
}

fn read_key_file(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Convert {
        file: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let keys: Vec<String> = parts.map(str::to_string).collect();
        if !keys.is_empty() {
            map.insert(id.to_string(), keys);
        }
    }
    Ok(map)
}

/// Writes converted instances in the native corpus format.
pub fn write_native(path: &Path, instances: &[ConvertedInstance]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for inst in instances {
        writeln!(f, "{}", serde_json::to_string(inst)?)?;
    }
    f.flush()?;
    Ok(())
}

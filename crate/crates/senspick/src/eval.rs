//! All-words evaluation: F-1 with first-sense backoff, plus the
//! most-frequent-sense and first-sense baselines.
//!
//! Coverage is total: every instance gets an answer, from the model when
//! it can resolve the target and from the rank-1 sense otherwise, so
//! precision, recall and F-1 coincide with accuracy.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{Instance, SenseFrequency};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::inventory::SenseInventory;
use crate::scorer;
use crate::training::Checkpoint;

/// Counts and percentages for one slice of the data.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct ScoreBlock {
    pub total: usize,
    pub answered: usize,
    pub backoff: usize,
    pub correct: usize,
    /// percentages, rounded to one decimal
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreBlock {
    fn add(&mut self, correct: bool, answered: bool, backoff: bool) {
        self.total += 1;
        if answered {
            self.answered += 1;
        }
        if backoff {
            self.backoff += 1;
        }
        if correct {
            self.correct += 1;
        }
    }

    fn finish(&mut self) {
        let pct = |x: f64| (x * 1000.0).round() / 10.0;
        let precision = if self.answered == 0 {
            0.0
        } else {
            self.correct as f64 / self.answered as f64
        };
        let recall = if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        self.precision = pct(precision);
        self.recall = pct(recall);
        self.f1 = pct(f1);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub overall: ScoreBlock,
    /// breakdown keyed by part-of-speech letter
    pub by_pos: BTreeMap<String, ScoreBlock>,
}

/// `(instance_id, predicted sense_id)` pairs, written alongside reports
/// for external rescoring. An empty sense_id marks an unanswerable
/// instance.
pub type Predictions = Vec<(String, String)>;

fn score(
    instances: &[Instance],
    mut predict: impl FnMut(&Instance) -> (Option<String>, bool),
) -> (EvalReport, Predictions) {
    let mut overall = ScoreBlock::default();
    let mut by_pos: BTreeMap<String, ScoreBlock> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(instances.len());
    for inst in instances {
        let (answer, backoff) = predict(inst);
        let correct = answer
            .as_ref()
            .map(|a| inst.gold.iter().any(|g| g == a))
            .unwrap_or(false);
        let answered = answer.is_some();
        overall.add(correct, answered, backoff);
        by_pos
            .entry(inst.pos.to_string())
            .or_default()
            .add(correct, answered, backoff);
        predictions.push((inst.id.clone(), answer.unwrap_or_default()));
    }
    overall.finish();
    for block in by_pos.values_mut() {
        block.finish();
    }
    (EvalReport { overall, by_pos }, predictions)
}

/// Scores a trained checkpoint. Instances the model cannot resolve fall
/// back to the first sense; a prediction is correct when it is in the
/// instance's gold set. Refuses to run against an inventory other than
/// the one the model was trained with.
pub fn evaluate(
    ckpt: &Checkpoint,
    instances: &[Instance],
    inv: &SenseInventory,
    table: &EmbeddingTable,
) -> Result<(EvalReport, Predictions)> {
    if ckpt.inventory_fingerprint != inv.fingerprint() {
        return Err(Error::FingerprintMismatch {
            found: inv.fingerprint(),
            expected: ckpt.inventory_fingerprint,
        });
    }
    let model = ckpt.to_model()?;
    let mut failure: Option<Error> = None;
    let (report, predictions) = score(instances, |inst| {
        match scorer::disambiguate(&model, inst, inv, table) {
            Ok(out) => (Some(out.sense_id), false),
            Err(Error::Unresolvable { .. }) => (
                inv.first_sense(&inst.lemma, inst.pos).map(|s| s.id.clone()),
                true,
            ),
            Err(other) => {
                failure.get_or_insert(other);
                (None, false)
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok((report, predictions)),
    }
}

/// Predicts each target's most frequently annotated training sense,
/// ties to the lower rank, unseen lemmas to the first sense.
pub fn mfs_baseline(
    freq: &SenseFrequency,
    instances: &[Instance],
    inv: &SenseInventory,
) -> (EvalReport, Predictions) {
    score(instances, |inst| {
        match freq.most_frequent(&inst.lemma, inst.pos, inv) {
            Some(id) => (Some(id), false),
            None => (
                inv.first_sense(&inst.lemma, inst.pos).map(|s| s.id.clone()),
                true,
            ),
        }
    })
}

/// Predicts the rank-1 inventory sense for every target.
pub fn first_sense_baseline(
    instances: &[Instance],
    inv: &SenseInventory,
) -> (EvalReport, Predictions) {
    score(instances, |inst| {
        (
            inv.first_sense(&inst.lemma, inst.pos).map(|s| s.id.clone()),
            false,
        )
    })
}

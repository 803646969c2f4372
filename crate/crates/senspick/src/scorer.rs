//! Sense scoring: gloss evidence from the final attention pass, context
//! evidence from a per-lemma affine head, blended by a learned weight
//! into a probability distribution over the candidate senses.

use ndarray::{Array1, Array2};

use crate::attention::{softmax, AttentionPass, AttentionTrace};
use crate::corpus::Instance;
use crate::embeddings::EmbeddingTable;
use crate::encoders::DropoutMode;
use crate::error::{Error, Result};
use crate::inventory::SenseInventory;
use crate::model::ModelState;
use crate::tape::Tape;

/// Probabilities over one target's candidate senses, in inventory rank
/// order (class 0 is the rank-1 sense).
#[derive(Debug, Clone, PartialEq)]
pub struct SenseDistribution {
    pub sense_ids: Vec<String>,
    pub probs: Vec<f64>,
}

impl SenseDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Gloss score: the raw (pre-softmax) scores of the final attention pass.
pub fn gloss_score(trace: &AttentionTrace) -> Vec<f64> {
    trace.final_raw().to_vec()
}

/// Context score: the per-lemma affine map `W c + b`.
pub fn context_score(
    context: &Array1<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<Array1<f64>> {
    if w.ncols() != context.len() || w.nrows() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "context_score: w {:?} against context {} and bias {}",
            w.dim(),
            context.len(),
            b.len()
        )));
    }
    Ok(w.dot(context) + b)
}

/// Blends the two scores: `softmax(lambda * s_c + (1 - lambda) * s_g)`
/// with `lambda = sigmoid(lambda_raw)`.
pub fn combine(s_c: &[f64], s_g: &[f64], lambda_raw: f64) -> Result<Vec<f64>> {
    if s_c.len() != s_g.len() {
        return Err(Error::ShapeMismatch(format!(
            "combine: {} context scores vs {} gloss scores",
            s_c.len(),
            s_g.len()
        )));
    }
    let lambda = 1.0 / (1.0 + (-lambda_raw).exp());
    let logits: Vec<f64> = s_c
        .iter()
        .zip(s_g)
        .map(|(c, g)| lambda * c + (1.0 - lambda) * g)
        .collect();
    Ok(softmax(&logits))
}

/// The most probable sense; exact ties go to the lower inventory rank.
pub fn predict(dist: &SenseDistribution) -> &str {
    let mut best = 0;
    for (i, p) in dist.probs.iter().enumerate().skip(1) {
        if *p > dist.probs[best] {
            best = i;
        }
    }
    &dist.sense_ids[best]
}

/// Full single-instance output.
#[derive(Debug, Clone)]
pub struct Disambiguation {
    pub sense_id: String,
    pub distribution: SenseDistribution,
    pub trace: AttentionTrace,
}

/// Runs the whole pipeline on one instance: candidate senses, gloss
/// expansion, both encoders, attention, scoring, prediction. A lemma
/// with no trained head is scored on gloss evidence alone.
pub fn disambiguate(
    model: &ModelState,
    instance: &Instance,
    inv: &SenseInventory,
    table: &EmbeddingTable,
) -> Result<Disambiguation> {
    let mut tape = Tape::new(model.store());
    let graph = model.build_batch(
        &mut tape,
        &[instance],
        inv,
        table,
        &mut DropoutMode::Inference,
        None,
    )?;
    let inst = &graph.instances[0];

    let passes = inst
        .passes
        .iter()
        .map(|p| AttentionPass {
            raw: tape.value(p.raw).column(0).to_vec(),
            attention: tape.value(p.phi).column(0).to_vec(),
            pooled: tape.value(p.pooled).column(0).to_vec(),
            memory: tape.value(p.memory).column(0).to_vec(),
        })
        .collect();
    let distribution = SenseDistribution {
        sense_ids: inst.candidates.clone(),
        probs: tape.value(inst.yhat).column(0).to_vec(),
    };
    let sense_id = predict(&distribution).to_string();
    Ok(Disambiguation {
        sense_id,
        distribution,
        trace: AttentionTrace { passes },
    })
}

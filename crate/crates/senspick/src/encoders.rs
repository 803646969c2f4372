//! Stacked bidirectional LSTM encoders for contexts and glosses.
//!
//! The context encoder runs a forward stack over the words before the
//! target and a backward stack over the words after it; the target's own
//! embedding is consumed by neither. The gloss encoder is two-level:
//! every gloss in an expanded gloss set is encoded by a word-level
//! BiLSTM, then a forward chain LSTM consumes the hypernym-side entries
//! ending at the sense's own gloss and a backward chain LSTM consumes
//! the hyponym-side entries ending at the same place; the sense vector
//! is the concatenation of the two final states.
//!
//! All encoders output `2 * hidden_units` wide vectors. Missing
//! directions (a sentence-initial or sentence-final target) contribute a
//! zero final state. Dropout sits between stacked layers and is active
//! only in training mode.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::inventory::GlossSet;
use crate::model::ModelState;
use crate::tape::{Arr, LstmLayerVars, LstmSpec, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hidden units per direction; encoder outputs are twice this wide.
    pub hidden_units: usize,
    pub num_layers: usize,
    pub dropout: f64,
    /// Width of the word embeddings feeding the word-level encoders.
    pub input_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_units: 512,
            num_layers: 2,
            dropout: 0.5,
            input_dim: 300,
        }
    }
}

impl EncoderConfig {
    pub fn output_width(&self) -> usize {
        2 * self.hidden_units
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.num_layers == 0 || self.input_dim == 0 {
            return Err(Error::InvalidArgument(
                "hidden_units, num_layers and input_dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One LSTM step. Gate weights are packed in i, f, g, o row order:
/// `w_x` is (4H, D), `w_h` is (4H, H), `b` is (4H). Returns the new
/// hidden and cell states.
pub fn lstm_step(
    w_x: ArrayView2<f64>,
    w_h: ArrayView2<f64>,
    b: ArrayView1<f64>,
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    c: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let hidden = w_h.ncols();
    if w_x.nrows() != 4 * hidden
        || w_h.nrows() != 4 * hidden
        || b.len() != 4 * hidden
        || w_x.ncols() != x.len()
        || h.len() != hidden
        || c.len() != hidden
    {
        return Err(Error::ShapeMismatch(format!(
            "lstm_step: w_x {:?}, w_h {:?}, b {}, x {}, h {}, c {}",
            w_x.dim(),
            w_h.dim(),
            b.len(),
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let z = w_x.dot(&x) + w_h.dot(&h) + b;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h_new = Array1::zeros(hidden);
    let mut c_new = Array1::zeros(hidden);
    for j in 0..hidden {
        let i = sig(z[j]);
        let f = sig(z[hidden + j]);
        let g = z[2 * hidden + j].tanh();
        let o = sig(z[3 * hidden + j]);
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    Ok((h_new, c_new))
}

/// Parameter ids of one stacked LSTM direction.
#[derive(Debug, Clone)]
pub(crate) struct StackIds {
    pub layers: Vec<(ParamId, ParamId, ParamId)>, // (w_x, w_h, b)
}

pub(crate) fn register_stack(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &EncoderConfig,
    input_dim: usize,
    rng: &mut ChaCha8Rng,
) -> StackIds {
    let h = cfg.hidden_units;
    let mut layers = Vec::new();
    for l in 0..cfg.num_layers {
        let d = if l == 0 { input_dim } else { h };
        let w_x = store.register(&format!("{prefix}.l{l}.w_x"), uniform_init(rng, 4 * h, d));
        let w_h = store.register(&format!("{prefix}.l{l}.w_h"), uniform_init(rng, 4 * h, h));
        let b = store.register(&format!("{prefix}.l{l}.b"), uniform_init(rng, 4 * h, 1));
        layers.push((w_x, w_h, b));
    }
    StackIds { layers }
}

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Arr {
    Arr::from_shape_fn((rows, cols), |_| rng.random_range(-0.1..0.1))
}

/// All encoder parameter ids plus the shared configuration.
#[derive(Debug, Clone)]
pub(crate) struct EncoderParams {
    pub cfg: EncoderConfig,
    pub ctx_fwd: StackIds,
    pub ctx_bwd: StackIds,
    pub gloss_fwd: StackIds,
    pub gloss_bwd: StackIds,
    pub chain_fwd: StackIds,
    pub chain_bwd: StackIds,
}

impl EncoderParams {
    pub fn register(store: &mut ParamStore, cfg: EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let emb = cfg.input_dim;
        let chain_in = cfg.output_width();
        EncoderParams {
            ctx_fwd: register_stack(store, "ctx.fwd", &cfg, emb, rng),
            ctx_bwd: register_stack(store, "ctx.bwd", &cfg, emb, rng),
            gloss_fwd: register_stack(store, "gloss.fwd", &cfg, emb, rng),
            gloss_bwd: register_stack(store, "gloss.bwd", &cfg, emb, rng),
            chain_fwd: register_stack(store, "chain.fwd", &cfg, chain_in, rng),
            chain_bwd: register_stack(store, "chain.bwd", &cfg, chain_in, rng),
            cfg,
        }
    }
}

/// Dropout source for a batch graph: masks are sampled in construction
/// order, so a fixed seed reproduces the run exactly.
pub(crate) enum DropoutMode<'r> {
    Inference,
    Train { rng: &'r mut ChaCha8Rng, rate: f64 },
}

impl DropoutMode<'_> {
    fn masks(
        &mut self,
        cfg: &EncoderConfig,
        steps: usize,
        batch: usize,
    ) -> Option<Vec<Vec<Arr>>> {
        match self {
            DropoutMode::Inference => None,
            DropoutMode::Train { rng, rate } => {
                if *rate == 0.0 || cfg.num_layers < 2 || steps == 0 {
                    return None;
                }
                let keep = 1.0 - *rate;
                let scale = 1.0 / keep;
                Some(
                    (0..cfg.num_layers - 1)
                        .map(|_| {
                            (0..steps)
                                .map(|_| {
                                    Arr::from_shape_fn((cfg.hidden_units, batch), |_| {
                                        if rng.random::<f64>() < keep {
                                            scale
                                        } else {
                                            0.0
                                        }
                                    })
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
        }
    }
}

fn run_stack(
    tape: &mut Tape<'_>,
    ids: &StackIds,
    inputs: Vec<Var>,
    lengths: Vec<usize>,
    cfg: &EncoderConfig,
    dropout: &mut DropoutMode<'_>,
) -> Var {
    let steps = inputs.len();
    let batch = lengths.len();
    let layers = ids
        .layers
        .iter()
        .map(|&(w_x, w_h, b)| LstmLayerVars {
            w_x: tape.param(w_x),
            w_h: tape.param(w_h),
            b: tape.param(b),
        })
        .collect();
    let dropout_masks = dropout.masks(cfg, steps, batch);
    tape.lstm_stack(
        LstmSpec {
            layers,
            inputs,
            lengths,
            dropout_masks,
        },
        cfg.hidden_units,
    )
}

/// Builds the context matrix (2H, B) for a batch of instances: forward
/// stack over the words before each target, backward stack over the
/// words after it.
pub(crate) fn context_graph(
    tape: &mut Tape<'_>,
    enc: &EncoderParams,
    instances: &[&Instance],
    table: &EmbeddingTable,
    dropout: &mut DropoutMode<'_>,
) -> Var {
    let batch = instances.len();
    let dim = enc.cfg.input_dim;

    let fwd_lens: Vec<usize> = instances.iter().map(|i| i.target_index).collect();
    let bwd_lens: Vec<usize> = instances
        .iter()
        .map(|i| i.tokens.len() - i.target_index - 1)
        .collect();
    let fwd_steps = fwd_lens.iter().copied().max().unwrap_or(0);
    let bwd_steps = bwd_lens.iter().copied().max().unwrap_or(0);

    let mut fwd_inputs = Vec::with_capacity(fwd_steps);
    for t in 0..fwd_steps {
        let mut m = Arr::zeros((dim, batch));
        for (b, inst) in instances.iter().enumerate() {
            if t < fwd_lens[b] {
                m.column_mut(b).assign(&table.lookup(&inst.tokens[t]));
            }
        }
        fwd_inputs.push(tape.constant(m));
    }
    let mut bwd_inputs = Vec::with_capacity(bwd_steps);
    for t in 0..bwd_steps {
        let mut m = Arr::zeros((dim, batch));
        for (b, inst) in instances.iter().enumerate() {
            if t < bwd_lens[b] {
                let pos = inst.tokens.len() - 1 - t;
                m.column_mut(b).assign(&table.lookup(&inst.tokens[pos]));
            }
        }
        bwd_inputs.push(tape.constant(m));
    }

    let fwd = run_stack(tape, &enc.ctx_fwd, fwd_inputs, fwd_lens, &enc.cfg, dropout);
    let bwd = run_stack(tape, &enc.ctx_bwd, bwd_inputs, bwd_lens, &enc.cfg, dropout);
    tape.concat_rows(vec![fwd, bwd])
}

/// Word-level BiLSTM over a batch of token sequences; returns (2H, N).
pub(crate) fn gloss_words_graph(
    tape: &mut Tape<'_>,
    enc: &EncoderParams,
    seqs: &[&[String]],
    table: &EmbeddingTable,
    dropout: &mut DropoutMode<'_>,
) -> Result<Var> {
    if seqs.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument("empty gloss token sequence".into()));
    }
    let batch = seqs.len();
    let dim = enc.cfg.input_dim;
    let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    let steps = lens.iter().copied().max().unwrap_or(0);

    let mut fwd_inputs = Vec::with_capacity(steps);
    let mut bwd_inputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut fm = Arr::zeros((dim, batch));
        let mut bm = Arr::zeros((dim, batch));
        for (b, seq) in seqs.iter().enumerate() {
            if t < lens[b] {
                fm.column_mut(b).assign(&table.lookup(&seq[t]));
                bm.column_mut(b).assign(&table.lookup(&seq[lens[b] - 1 - t]));
            }
        }
        fwd_inputs.push(tape.constant(fm));
        bwd_inputs.push(tape.constant(bm));
    }

    let fwd = run_stack(tape, &enc.gloss_fwd, fwd_inputs, lens.clone(), &enc.cfg, dropout);
    let bwd = run_stack(tape, &enc.gloss_bwd, bwd_inputs, lens, &enc.cfg, dropout);
    Ok(tape.concat_rows(vec![fwd, bwd]))
}

/// Chain-level encoding. `entry_cols[s]` lists the columns of
/// `gloss_vectors` holding sense `s`'s entries in offset order -m..n,
/// with `m_of[s]` negative offsets. Returns the (2H, S) sense matrix.
pub(crate) fn gloss_chain_graph(
    tape: &mut Tape<'_>,
    enc: &EncoderParams,
    gloss_vectors: Var,
    entry_cols: &[Vec<usize>],
    m_of: &[usize],
    dropout: &mut DropoutMode<'_>,
) -> Var {
    let senses = entry_cols.len();

    // forward chain: g(-m) .. g(-1), g(0)
    let fwd_lens: Vec<usize> = m_of.iter().map(|&m| m + 1).collect();
    let fwd_steps = fwd_lens.iter().copied().max().unwrap_or(0);
    let mut fwd_inputs = Vec::with_capacity(fwd_steps);
    for t in 0..fwd_steps {
        let idx: Vec<usize> = (0..senses)
            .map(|s| {
                if t < fwd_lens[s] {
                    entry_cols[s][t]
                } else {
                    entry_cols[s][0] // frozen, masked out
                }
            })
            .collect();
        fwd_inputs.push(tape.gather_cols(gloss_vectors, idx));
    }

    // backward chain: g(n) .. g(1), g(0)
    let bwd_lens: Vec<usize> = entry_cols
        .iter()
        .zip(m_of)
        .map(|(cols, &m)| cols.len() - m)
        .collect();
    let bwd_steps = bwd_lens.iter().copied().max().unwrap_or(0);
    let mut bwd_inputs = Vec::with_capacity(bwd_steps);
    for t in 0..bwd_steps {
        let idx: Vec<usize> = (0..senses)
            .map(|s| {
                if t < bwd_lens[s] {
                    let last = entry_cols[s].len() - 1;
                    entry_cols[s][last - t]
                } else {
                    entry_cols[s][0]
                }
            })
            .collect();
        bwd_inputs.push(tape.gather_cols(gloss_vectors, idx));
    }

    let fwd = run_stack(tape, &enc.chain_fwd, fwd_inputs, fwd_lens, &enc.cfg, dropout);
    let bwd = run_stack(tape, &enc.chain_bwd, bwd_inputs, bwd_lens, &enc.cfg, dropout);
    tape.concat_rows(vec![fwd, bwd])
}

/// Encodes one instance's context into its 2H-dimensional vector
/// (inference mode, dropout-free).
pub fn encode_context(
    model: &ModelState,
    instance: &Instance,
    table: &EmbeddingTable,
) -> Result<Array1<f64>> {
    if instance.target_index >= instance.tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "target index {} out of range",
            instance.target_index
        )));
    }
    check_dim(model, table)?;
    let mut tape = Tape::new(model.store());
    let c = context_graph(
        &mut tape,
        model.encoders(),
        &[instance],
        table,
        &mut DropoutMode::Inference,
    );
    Ok(tape.value(c).index_axis(Axis(1), 0).to_owned())
}

/// Encodes one gloss's tokens with the word-level BiLSTM.
pub fn encode_gloss_words(
    model: &ModelState,
    tokens: &[String],
    table: &EmbeddingTable,
) -> Result<Array1<f64>> {
    check_dim(model, table)?;
    let mut tape = Tape::new(model.store());
    let g = gloss_words_graph(
        &mut tape,
        model.encoders(),
        &[tokens],
        table,
        &mut DropoutMode::Inference,
    )?;
    Ok(tape.value(g).index_axis(Axis(1), 0).to_owned())
}

/// Encodes one expanded gloss set per candidate sense; vectors come back
/// in the order the gloss sets were given.
pub fn encode_gloss_set(
    model: &ModelState,
    gloss_sets: &[GlossSet],
    table: &EmbeddingTable,
) -> Result<Vec<Array1<f64>>> {
    check_dim(model, table)?;
    let mut tape = Tape::new(model.store());
    let mut dropout = DropoutMode::Inference;

    let mut seqs: Vec<&[String]> = Vec::new();
    let mut entry_cols = Vec::new();
    let mut m_of = Vec::new();
    for gs in gloss_sets {
        let base = seqs.len();
        for (_, gloss) in &gs.entries {
            seqs.push(gloss.as_slice());
        }
        entry_cols.push((base..base + gs.entries.len()).collect::<Vec<_>>());
        m_of.push(gs.m());
    }

    let gloss_vecs = gloss_words_graph(&mut tape, model.encoders(), &seqs, table, &mut dropout)?;
    let sense_mat = gloss_chain_graph(
        &mut tape,
        model.encoders(),
        gloss_vecs,
        &entry_cols,
        &m_of,
        &mut dropout,
    );
    let value = tape.value(sense_mat);
    Ok((0..gloss_sets.len())
        .map(|s| value.index_axis(Axis(1), s).to_owned())
        .collect())
}

fn check_dim(model: &ModelState, table: &EmbeddingTable) -> Result<()> {
    let expect = model.encoders().cfg.input_dim;
    if table.dim() != expect {
        return Err(Error::ShapeMismatch(format!(
            "embedding dim {} does not match the model's input dim {expect}",
            table.dim()
        )));
    }
    Ok(())
}

//! Whole-model state: every trainable parameter plus the assembly of the
//! per-batch computation graph (encoders -> attention -> scorer -> loss).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Instance, SenseLabelIndex};
use crate::embeddings::EmbeddingTable;
use crate::encoders::{
    context_graph, gloss_chain_graph, gloss_words_graph, uniform_init, DropoutMode,
    EncoderConfig, EncoderParams,
};
use crate::error::{Error, Result};
use crate::inventory::{PartOfSpeech, SenseInventory};
use crate::tape::{Arr, ParamId, ParamStore, Tape, Var};

/// Per-lemma output head: affine context scorer plus the raw mixing
/// weight (lambda is its sigmoid).
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadIds {
    pub w: ParamId,
    pub b: ParamId,
    pub lambda: ParamId,
}

pub struct ModelState {
    store: ParamStore,
    enc: EncoderParams,
    attention_w: ParamId,
    attention_b: ParamId,
    heads: BTreeMap<(String, PartOfSpeech), HeadIds>,
    pub attention_passes: usize,
    pub k_depth: usize,
    pub label_index: SenseLabelIndex,
}

impl ModelState {
    /// Registers and initializes all parameters: encoder and attention
    /// weights uniform in [-0.1, 0.1] from the seed, lambda at 0 (so the
    /// gloss/context blend starts at one half).
    pub fn new(
        cfg: EncoderConfig,
        attention_passes: usize,
        k_depth: usize,
        label_index: SenseLabelIndex,
        seed: u64,
    ) -> Result<ModelState> {
        cfg.validate()?;
        if attention_passes == 0 {
            return Err(Error::InvalidArgument("attention_passes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = EncoderParams::register(&mut store, cfg, &mut rng);
        let width = cfg.output_width();
        let attention_w = store.register("attention.w", uniform_init(&mut rng, width, 3 * width));
        let attention_b = store.register("attention.b", uniform_init(&mut rng, width, 1));

        let mut heads = BTreeMap::new();
        let mut keys: Vec<(String, PartOfSpeech)> = label_index.keys().cloned().collect();
        keys.sort();
        for key in keys {
            let classes = label_index.classes(&key.0, key.1).expect("key from index");
            let s_n = classes.len();
            let prefix = format!("head.{}%{}", key.0, key.1);
            let ids = HeadIds {
                w: store.register(&format!("{prefix}.w"), uniform_init(&mut rng, s_n, width)),
                b: store.register(&format!("{prefix}.b"), uniform_init(&mut rng, s_n, 1)),
                lambda: store.register(&format!("{prefix}.lambda"), Arr::zeros((1, 1))),
            };
            heads.insert(key, ids);
        }

        Ok(ModelState {
            store,
            enc,
            attention_w,
            attention_b,
            heads,
            attention_passes,
            k_depth,
            label_index,
        })
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn encoders(&self) -> &EncoderParams {
        &self.enc
    }

    pub(crate) fn head(&self, lemma: &str, pos: PartOfSpeech) -> Option<HeadIds> {
        self.heads.get(&(lemma.to_string(), pos)).copied()
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.enc.cfg
    }

    /// Sigmoid of the trained mixing weight for a lemma, if it has a head.
    pub fn lambda_of(&self, lemma: &str, pos: PartOfSpeech) -> Option<f64> {
        self.head(lemma, pos)
            .map(|h| 1.0 / (1.0 + (-self.store.get(h.lambda)[(0, 0)]).exp()))
    }

    pub fn param_names(&self) -> Vec<String> {
        self.store.iter().map(|(_, name, _)| name.to_string()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Array2<f64>> {
        self.store.id_of(name).map(|id| self.store.get(id))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        let id = self.store.id_of(name)?;
        Some(self.store.get_mut(id))
    }

    /// The class index trained against: the first listed gold sense.
    pub fn gold_class(&self, inst: &Instance) -> Result<usize> {
        let gold = inst.gold.first().ok_or_else(|| {
            Error::InvalidArgument(format!("instance {} has no gold senses", inst.id))
        })?;
        self.label_index
            .class_of(&inst.lemma, inst.pos, gold)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "instance {}: gold {gold} is not an indexed sense of '{}' ({})",
                    inst.id, inst.lemma, inst.pos
                ))
            })
    }

    /// Mean cross-entropy of a batch, dropout-free.
    pub fn batch_loss(
        &self,
        instances: &[&Instance],
        inv: &SenseInventory,
        table: &EmbeddingTable,
    ) -> Result<f64> {
        let golds = self.gold_classes(instances)?;
        let mut tape = Tape::new(&self.store);
        let graph = self.build_batch(
            &mut tape,
            instances,
            inv,
            table,
            &mut DropoutMode::Inference,
            Some(&golds),
        )?;
        Ok(tape.value(graph.loss.expect("losses requested"))[(0, 0)])
    }

    /// Mean cross-entropy plus analytic gradients by parameter name,
    /// dropout-free. The gradient map only holds parameters on the
    /// batch's computation path.
    pub fn batch_loss_and_grads(
        &self,
        instances: &[&Instance],
        inv: &SenseInventory,
        table: &EmbeddingTable,
    ) -> Result<(f64, HashMap<String, Array2<f64>>)> {
        let golds = self.gold_classes(instances)?;
        let mut tape = Tape::new(&self.store);
        let graph = self.build_batch(
            &mut tape,
            instances,
            inv,
            table,
            &mut DropoutMode::Inference,
            Some(&golds),
        )?;
        let loss_var = graph.loss.expect("losses requested");
        let loss = tape.value(loss_var)[(0, 0)];
        let grads = tape.backward(loss_var);
        Ok((
            loss,
            grads
                .into_iter()
                .map(|(id, g)| (self.store.name_of(id).to_string(), g))
                .collect(),
        ))
    }

    fn gold_classes(&self, instances: &[&Instance]) -> Result<Vec<usize>> {
        instances.iter().map(|i| self.gold_class(i)).collect()
    }

    /// Builds the full forward graph for a batch. Gloss sets are encoded
    /// once per distinct (lemma, pos) and shared by that lemma's
    /// instances; semantics are identical to per-instance processing.
    pub(crate) fn build_batch<'t>(
        &self,
        tape: &mut Tape<'t>,
        instances: &[&Instance],
        inv: &SenseInventory,
        table: &EmbeddingTable,
        dropout: &mut DropoutMode<'_>,
        golds: Option<&[usize]>,
    ) -> Result<BatchGraph> {
        if instances.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if table.dim() != self.enc.cfg.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding dim {} does not match the model's input dim {}",
                table.dim(),
                self.enc.cfg.input_dim
            )));
        }

        // gloss sets per distinct key, in sorted order
        let keys: BTreeSet<(String, PartOfSpeech)> = instances
            .iter()
            .map(|i| (i.lemma.clone(), i.pos))
            .collect();
        let mut gloss_seqs: Vec<Vec<String>> = Vec::new();
        let mut entry_cols: Vec<Vec<usize>> = Vec::new();
        let mut m_of: Vec<usize> = Vec::new();
        let mut key_info: HashMap<(String, PartOfSpeech), (usize, usize, Vec<String>)> =
            HashMap::new();
        for key in &keys {
            let senses = inv.senses_of(&key.0, key.1);
            if senses.is_empty() {
                return Err(Error::Unresolvable {
                    lemma: key.0.clone(),
                    pos: key.1.to_string(),
                });
            }
            let sense_start = entry_cols.len();
            let mut ids = Vec::with_capacity(senses.len());
            for sense in &senses {
                let gs = inv.expand_gloss(sense, self.k_depth)?;
                let base = gloss_seqs.len();
                let count = gs.entries.len();
                m_of.push(gs.m());
                for (_, gloss) in gs.entries {
                    gloss_seqs.push(gloss);
                }
                entry_cols.push((base..base + count).collect());
                ids.push(sense.id.clone());
            }
            key_info.insert(key.clone(), (sense_start, senses.len(), ids));
        }

        let seq_refs: Vec<&[String]> = gloss_seqs.iter().map(|s| s.as_slice()).collect();
        let gloss_vecs = gloss_words_graph(tape, &self.enc, &seq_refs, table, dropout)?;
        let sense_mat = gloss_chain_graph(tape, &self.enc, gloss_vecs, &entry_cols, &m_of, dropout);

        let context = context_graph(tape, &self.enc, instances, table, dropout);
        let batch = instances.len();

        // per-instance gloss matrices and contexts
        let mut g_of: Vec<Var> = Vec::with_capacity(batch);
        let mut candidates: Vec<Vec<String>> = Vec::with_capacity(batch);
        let mut c_of: Vec<Var> = Vec::with_capacity(batch);
        for (b, inst) in instances.iter().enumerate() {
            let (start, count, ids) = &key_info[&(inst.lemma.clone(), inst.pos)];
            g_of.push(tape.cols(sense_mat, *start, start + count));
            candidates.push(ids.clone());
            c_of.push(tape.cols(context, b, b + 1));
        }

        // multi-pass attention; the memory update is batched per pass
        let w_att = tape.param(self.attention_w);
        let b_att = tape.param(self.attention_b);
        let mut memory = context;
        let mut passes: Vec<Vec<PassVars>> = vec![Vec::new(); batch];
        for _ in 0..self.attention_passes {
            let mut pooled_cols = Vec::with_capacity(batch);
            for b in 0..batch {
                let m_b = tape.cols(memory, b, b + 1);
                let raw = tape.matmul_ta(g_of[b], m_b);
                let phi = tape.softmax(raw);
                let pooled = tape.matmul(g_of[b], phi);
                pooled_cols.push(pooled);
                passes[b].push(PassVars {
                    raw,
                    phi,
                    pooled,
                    memory: m_b, // placeholder, replaced below with post-update memory
                });
            }
            let pooled_mat = tape.concat_cols(pooled_cols);
            let stacked = tape.concat_rows(vec![memory, pooled_mat, context]);
            let lin = tape.matmul(w_att, stacked);
            let lin = tape.add_col_broadcast(lin, b_att);
            memory = tape.relu(lin);
            for (b, inst_passes) in passes.iter_mut().enumerate() {
                inst_passes.last_mut().unwrap().memory = tape.cols(memory, b, b + 1);
            }
        }

        // scorer
        let mut graphs = Vec::with_capacity(batch);
        let mut losses = Vec::with_capacity(batch);
        for (b, inst) in instances.iter().enumerate() {
            let s_g = passes[b].last().unwrap().raw;
            let head = self.head(&inst.lemma, inst.pos);
            let logits = match head {
                Some(ids) => {
                    let s_n = self.store.get(ids.w).nrows();
                    if s_n != candidates[b].len() {
                        return Err(Error::ShapeMismatch(format!(
                            "head for '{}' ({}) scores {s_n} senses but the inventory lists {}",
                            inst.lemma,
                            inst.pos,
                            candidates[b].len()
                        )));
                    }
                    let w = tape.param(ids.w);
                    let bias = tape.param(ids.b);
                    let lambda_raw = tape.param(ids.lambda);
                    let affine = tape.matmul(w, c_of[b]);
                    let s_c = tape.add(affine, bias);
                    let lambda = tape.sigmoid(lambda_raw);
                    let beta = tape.affine_const(lambda, -1.0, 1.0);
                    let weighted_c = tape.mul_scalar(lambda, s_c);
                    let weighted_g = tape.mul_scalar(beta, s_g);
                    tape.add(weighted_c, weighted_g)
                }
                None => s_g,
            };
            let yhat = tape.softmax(logits);
            if let Some(g) = golds {
                losses.push(tape.nll_logits(logits, g[b]));
            }
            graphs.push(InstanceGraph {
                candidates: candidates[b].clone(),
                passes: std::mem::take(&mut passes[b]),
                yhat,
            });
        }

        let loss = if losses.is_empty() {
            None
        } else {
            let sum = tape.add_n(losses);
            Some(tape.scale(sum, 1.0 / batch as f64))
        };

        Ok(BatchGraph {
            instances: graphs,
            loss,
        })
    }
}

pub(crate) struct BatchGraph {
    pub instances: Vec<InstanceGraph>,
    pub loss: Option<Var>,
}

pub(crate) struct InstanceGraph {
    pub candidates: Vec<String>,
    pub passes: Vec<PassVars>,
    pub yhat: Var,
}

#[derive(Clone, Copy)]
pub(crate) struct PassVars {
    pub raw: Var,
    pub phi: Var,
    pub pooled: Var,
    pub memory: Var,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Write;

    pub const TINY_DIM: usize = 3;

    pub fn tiny_table() -> EmbeddingTable {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "alpha 0.1 0.4 -0.2").unwrap();
        writeln!(f, "beta -0.3 0.2 0.5").unwrap();
        writeln!(f, "gamma 0.6 -0.1 0.1").unwrap();
        writeln!(f, "delta -0.2 -0.4 0.3").unwrap();
        let (table, _) = EmbeddingTable::load(f.path(), TINY_DIM).unwrap();
        table
    }

    pub fn tiny_model() -> ModelState {
        let cfg = EncoderConfig {
            hidden_units: 2,
            num_layers: 2,
            dropout: 0.5,
            input_dim: TINY_DIM,
        };
        ModelState::new(cfg, 3, 2, SenseLabelIndex::default(), 7).unwrap()
    }

    #[test]
    fn construction_is_deterministic_in_the_seed() {
        let a = tiny_model();
        let b = tiny_model();
        for name in a.param_names() {
            assert_eq!(a.param(&name), b.param(&name), "{name}");
        }
        let cfg = *a.encoder_config();
        let c = ModelState::new(cfg, 3, 2, SenseLabelIndex::default(), 8).unwrap();
        assert_ne!(a.param("ctx.fwd.l0.w_x"), c.param("ctx.fwd.l0.w_x"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = EncoderConfig {
            hidden_units: 0,
            ..*tiny_model().encoder_config()
        };
        assert!(ModelState::new(bad, 3, 2, SenseLabelIndex::default(), 1).is_err());
        let cfg = *tiny_model().encoder_config();
        assert!(ModelState::new(cfg, 0, 2, SenseLabelIndex::default(), 1).is_err());
    }
}

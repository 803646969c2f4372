//! Cross-entropy training with Adam, gradient clipping, a seeded dev
//! split for model selection, and bit-exact checkpointing.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_label_index, corpus_fingerprint, Instance, SenseLabelIndex};
use crate::embeddings::EmbeddingTable;
use crate::encoders::{DropoutMode, EncoderConfig};
use crate::error::{Error, Result};
use crate::inventory::{Fnv, SenseInventory};
use crate::model::ModelState;
use crate::scorer;
use crate::tape::{Arr, ParamId, ParamStore, Tape};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub k_depth: usize,
    pub attention_passes: usize,
    pub seed: u64,
    pub grad_clip: f64,
    pub dev_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 100,
            dropout: 0.5,
            batch_size: 32,
            k_depth: 2,
            attention_passes: 3,
            seed: 42,
            grad_clip: 5.0,
            dev_split: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.into()));
        if self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.attention_passes == 0 {
            return bad("epochs, batch_size and attention_passes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        if !(0.0..1.0).contains(&self.dev_split) {
            return bad("dev_split must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    /// Checkpoint with the best dev accuracy (the final one when there
    /// is no dev split).
    pub best: Checkpoint,
    /// Checkpoint after the last epoch.
    pub last: Checkpoint,
    pub log: Vec<EpochRecord>,
    /// Loss of the very first batch before any parameter update.
    pub first_batch_loss: f64,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl Adam {
    fn new(lr: f64, store: &ParamStore) -> Adam {
        let zeros: Vec<Arr> = store.iter().map(|(_, _, p)| Arr::zeros(p.raw_dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Clips by global norm, then applies one bias-corrected Adam update.
    fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Arr>, clip: f64) {
        let norm = grads
            .values()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let scale = if norm > clip { clip / norm } else { 1.0 };

        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t);
        let bias2 = 1.0 - self.beta2.powi(self.t);
        let lr_t = self.lr * bias2.sqrt() / bias1;

        for id in 0..store.len() {
            let pid = ParamId(id);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let param = store.get_mut(pid);
            let (ms, vs, ps) = (
                m.as_slice_mut().unwrap(),
                v.as_slice_mut().unwrap(),
                param.as_slice_mut().unwrap(),
            );
            match grads.get(&pid) {
                Some(g) => {
                    // matrix products against transposed views can come
                    // back in column-major order
                    let g_std = g.as_standard_layout();
                    let gs = g_std.as_slice().unwrap();
                    for i in 0..ps.len() {
                        let gi = gs[i] * scale;
                        ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * gi;
                        vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * gi * gi;
                        ps[i] -= lr_t * ms[i] / (vs[i].sqrt() + self.eps);
                    }
                }
                None => {
                    for i in 0..ps.len() {
                        ms[i] *= self.beta1;
                        vs[i] *= self.beta2;
                        ps[i] -= lr_t * ms[i] / (vs[i].sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

fn derive_rng(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = Fnv::new();
    h.write(&seed.to_le_bytes());
    h.write(tag.as_bytes());
    h.write(&a.to_le_bytes());
    h.write(&b.to_le_bytes());
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Trains a fresh model on `instances`. The dev split is carved from the
/// training data by seed; the best-dev checkpoint is retained alongside
/// the final one.
pub fn train(
    instances: &[Instance],
    inv: &SenseInventory,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    enc_cfg: &EncoderConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let emb_checksum = table.checksum();

    let (label_index, excluded) = build_label_index(instances, inv);
    if !excluded.is_empty() {
        let list: Vec<String> = excluded.iter().map(|(l, p)| format!("{l} ({p})")).collect();
        return Err(Error::InvalidArgument(format!(
            "lemmas without inventory senses cannot be trained: {}",
            list.join(", ")
        )));
    }

    let mut model = ModelState::new(
        *enc_cfg,
        cfg.attention_passes,
        cfg.k_depth,
        label_index,
        cfg.seed,
    )?;
    for inst in instances {
        model.gold_class(inst)?;
    }

    // seeded dev carve-out
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut derive_rng(cfg.seed, "dev-split", 0, 0));
    let n_dev = (cfg.dev_split * instances.len() as f64).floor() as usize;
    let dev_idx: Vec<usize> = order[..n_dev].to_vec();
    let train_idx: Vec<usize> = order[n_dev..].to_vec();

    let inv_fp = inv.fingerprint();
    let corpus_fp = corpus_fingerprint(instances);
    let mut adam = Adam::new(cfg.learning_rate, model.store());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut first_batch_loss = None;
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 1..=cfg.epochs {
        let mut epoch_order = train_idx.clone();
        epoch_order.shuffle(&mut derive_rng(cfg.seed, "epoch-order", epoch as u64, 0));

        let mut loss_sum = 0.0;
        for (batch_no, chunk) in epoch_order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &instances[i]).collect();
            let golds: Vec<usize> = batch
                .iter()
                .map(|inst| model.gold_class(inst))
                .collect::<Result<_>>()?;

            let mut rng = derive_rng(cfg.seed, "dropout", epoch as u64, batch_no as u64);
            let mut mode = DropoutMode::Train {
                rng: &mut rng,
                rate: cfg.dropout,
            };
            let t0 = std::time::Instant::now();
            let mut tape = Tape::new(model.store());
            let graph = model.build_batch(&mut tape, &batch, inv, table, &mut mode, Some(&golds))?;
            let loss_var = graph.loss.expect("training batch has losses");
            let loss = tape.value(loss_var)[(0, 0)];
            let t_fwd = t0.elapsed();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
            }
            first_batch_loss.get_or_insert(loss);
            loss_sum += loss * batch.len() as f64;

            let t1 = std::time::Instant::now();
            let grads = tape.backward(loss_var);
            let t_bwd = t1.elapsed();
            drop(tape);
            let t2 = std::time::Instant::now();
            adam.step(model.store_mut(), &grads, cfg.grad_clip);
            if std::env::var("SENSPICK_TIMING").is_ok() {
                eprintln!("timing: fwd {:?} bwd {:?} adam {:?}", t_fwd, t_bwd, t2.elapsed());
            }
        }

        let train_loss = loss_sum / train_idx.len().max(1) as f64;
        let dev_accuracy = if dev_idx.is_empty() {
            None
        } else {
            let mut correct = 0usize;
            for &i in &dev_idx {
                let inst = &instances[i];
                let out = scorer::disambiguate(&model, inst, inv, table)?;
                if inst.gold.iter().any(|g| *g == out.sense_id) {
                    correct += 1;
                }
            }
            Some(correct as f64 / dev_idx.len() as f64)
        };

        let record = EpochRecord {
            epoch,
            train_loss,
            dev_accuracy,
        };
        progress(&record);

        if let Some(acc) = dev_accuracy {
            let improved = best.as_ref().map_or(true, |(b, _)| acc > *b);
            if improved {
                best = Some((
                    acc,
                    Checkpoint::from_model(&model, cfg, enc_cfg, inv_fp, corpus_fp, epoch, dev_accuracy),
                ));
            }
        }
        log.push(record);
    }

    if table.checksum() != emb_checksum {
        return Err(Error::InvalidArgument(
            "embedding table changed during training; embeddings must stay frozen".into(),
        ));
    }

    let last = Checkpoint::from_model(
        &model,
        cfg,
        enc_cfg,
        inv_fp,
        corpus_fp,
        cfg.epochs,
        log.last().and_then(|r| r.dev_accuracy),
    );
    let best = best.map(|(_, ckpt)| ckpt).unwrap_or_else(|| last.clone());

    Ok(TrainOutcome {
        best,
        last,
        log,
        first_batch_loss: first_batch_loss.unwrap_or(f64::NAN),
    })
}

/// Everything needed to reproduce inference bit-for-bit.
#[derive(Clone)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub encoder_config: EncoderConfig,
    pub label_index: SenseLabelIndex,
    pub inventory_fingerprint: u64,
    pub corpus_fingerprint: u64,
    pub epoch: usize,
    pub dev_accuracy: Option<f64>,
    params: Vec<(String, Array2<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    label_index: SenseLabelIndex,
    inventory_fingerprint: u64,
    corpus_fingerprint: u64,
    epoch: usize,
    dev_accuracy: Option<f64>,
    params: Vec<(String, usize, usize)>,
}

impl Checkpoint {
    pub(crate) fn from_model(
        model: &ModelState,
        cfg: &TrainConfig,
        enc_cfg: &EncoderConfig,
        inventory_fingerprint: u64,
        corpus_fingerprint: u64,
        epoch: usize,
        dev_accuracy: Option<f64>,
    ) -> Checkpoint {
        Checkpoint {
            train_config: *cfg,
            encoder_config: *enc_cfg,
            label_index: model.label_index.clone(),
            inventory_fingerprint,
            corpus_fingerprint,
            epoch,
            dev_accuracy,
            params: model
                .store()
                .iter()
                .map(|(_, name, value)| (name.to_string(), value.clone()))
                .collect(),
        }
    }

    /// Rebuilds a model carrying exactly this checkpoint's parameters.
    pub fn to_model(&self) -> Result<ModelState> {
        let mut model = ModelState::new(
            self.encoder_config,
            self.train_config.attention_passes,
            self.train_config.k_depth,
            self.label_index.clone(),
            self.train_config.seed,
        )?;
        if self.params.len() != model.param_names().len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} parameters but the model defines {}",
                self.params.len(),
                model.param_names().len()
            )));
        }
        for (name, value) in &self.params {
            let slot = model.param_mut(name).ok_or_else(|| {
                Error::InvalidArgument(format!("checkpoint parameter {name} is not in the model"))
            })?;
            if slot.raw_dim() != value.raw_dim() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint parameter {name} has shape {:?}, model expects {:?}",
                    value.dim(),
                    slot.dim()
                )));
            }
            slot.assign(value);
        }
        Ok(model)
    }

    /// Container layout: `SPCK` magic, little-endian u32 version, u64
    /// JSON header length, the header, then raw row-major f64 data for
    /// each parameter in manifest order. Floats round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            train_config: self.train_config,
            encoder_config: self.encoder_config,
            label_index: self.label_index.clone(),
            inventory_fingerprint: self.inventory_fingerprint,
            corpus_fingerprint: self.corpus_fingerprint,
            epoch: self.epoch,
            dev_accuracy: self.dev_accuracy,
            params: self
                .params
                .iter()
                .map(|(n, a)| (n.clone(), a.nrows(), a.ncols()))
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        for (_, arr) in &self.params {
            for v in arr.iter() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let err = |reason: &str| Error::Checkpoint {
            file: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut f = std::io::BufReader::new(fs::File::open(path).map_err(|e| Error::Checkpoint {
            file: path.to_path_buf(),
            reason: e.to_string(),
        })?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(|_| err("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        f.read_exact(&mut word).map_err(|_| err("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut len = [0u8; 8];
        f.read_exact(&mut len).map_err(|_| err("truncated header length"))?;
        let header_len = u64::from_le_bytes(len) as usize;
        let mut header_bytes = vec![0u8; header_len];
        f.read_exact(&mut header_bytes).map_err(|_| err("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| err(&format!("bad header: {e}")))?;

        let mut params = Vec::with_capacity(header.params.len());
        for (name, rows, cols) in header.params {
            let mut data = vec![0u8; rows * cols * 8];
            f.read_exact(&mut data)
                .map_err(|_| err(&format!("truncated data for parameter {name}")))?;
            let values: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let arr = Array2::from_shape_vec((rows, cols), values)
                .map_err(|_| err(&format!("bad shape for parameter {name}")))?;
            params.push((name, arr));
        }
        Ok(Checkpoint {
            train_config: header.train_config,
            encoder_config: header.encoder_config,
            label_index: header.label_index,
            inventory_fingerprint: header.inventory_fingerprint,
            corpus_fingerprint: header.corpus_fingerprint,
            epoch: header.epoch,
            dev_accuracy: header.dev_accuracy,
            params,
        })
    }
}

//! Fixed pre-trained word embeddings.
//!
//! Plain-text format: one token followed by `dim` floats per line,
//! space-separated. Vectors are frozen; training never writes to them,
//! which [`EmbeddingTable::checksum`] lets callers verify.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::inventory::Fnv;

pub struct EmbeddingTable {
    dim: usize,
    vocab: std::collections::HashMap<String, usize>,
    matrix: Array2<f64>,
    unk: Array1<f64>,
}

/// Lines that could not be ingested, with reasons.
#[derive(Debug, Default)]
pub struct EmbeddingReport {
    pub loaded: usize,
    pub skipped: Vec<(usize, String)>,
}

impl EmbeddingTable {
    /// Reads every parseable line of `path`; duplicate tokens keep the
    /// first occurrence. Zero usable lines is an error.
    pub fn load(path: &Path, dim: usize) -> Result<(EmbeddingTable, EmbeddingReport)> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        let file = File::open(path).map_err(|e| Error::EmbeddingLoad {
            file: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut vocab = std::collections::HashMap::new();
        let mut rows: Vec<f64> = Vec::new();
        let mut report = EmbeddingReport::default();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::EmbeddingLoad {
                file: path.to_path_buf(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = match parts.map(str::parse).collect() {
                Ok(v) => v,
                Err(_) => {
                    report.skipped.push((lineno + 1, "unparseable float".into()));
                    continue;
                }
            };
            if values.len() != dim {
                report
                    .skipped
                    .push((lineno + 1, format!("expected {dim} floats, got {}", values.len())));
                continue;
            }
            if !values.iter().all(|v| v.is_finite()) {
                report.skipped.push((lineno + 1, "non-finite value".into()));
                continue;
            }
            if vocab.contains_key(token) {
                report.skipped.push((lineno + 1, format!("duplicate token '{token}'")));
                continue;
            }
            vocab.insert(token.to_string(), vocab.len());
            rows.extend_from_slice(&values);
            report.loaded += 1;
        }
        if report.loaded == 0 {
            return Err(Error::EmbeddingLoad {
                file: path.to_path_buf(),
                reason: "no usable embedding lines".into(),
            });
        }
        let matrix = Array2::from_shape_vec((report.loaded, dim), rows)
            .expect("row count matches loaded count");
        let unk = matrix.mean_axis(ndarray::Axis(0)).expect("non-empty matrix");
        Ok((EmbeddingTable { dim, vocab, matrix, unk }, report))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Exact-match row, else lowercased-match row, else the unk vector
    /// (the element-wise mean of all loaded vectors). Total and pure.
    pub fn lookup(&self, token: &str) -> ArrayView1<'_, f64> {
        if let Some(&row) = self.vocab.get(token) {
            return self.matrix.row(row);
        }
        let lower = token.to_lowercase();
        if let Some(&row) = self.vocab.get(lower.as_str()) {
            return self.matrix.row(row);
        }
        self.unk.view()
    }

    /// Bit-level hash over every stored vector; unchanged across training.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(&(self.dim as u64).to_le_bytes());
        let mut tokens: Vec<&String> = self.vocab.keys().collect();
        tokens.sort();
        for t in tokens {
            h.write(t.as_bytes());
            for v in self.matrix.row(self.vocab[t]) {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        for v in &self.unk {
            h.write(&v.to_bits().to_le_bytes());
        }
        h.finish()
    }
}

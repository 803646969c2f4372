//! Gloss-aware word sense disambiguation.
//!
//! `senspick` picks the dictionary sense of an ambiguous word from its
//! sentence context. It encodes the context and the candidate senses'
//! glosses with stacked bidirectional LSTMs, relates them through a
//! multi-pass memory attention, and blends gloss and context evidence
//! into a per-sense probability distribution. Glosses are expanded with
//! hypernym- and hyponym-chain definitions drawn from a WordNet-style
//! lexical database before encoding.
//!
//! The crate is a library first; the `senspick` binary is a thin wrapper
//! over [`cli::run`]. Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example expand_glosses      # gloss-set expansion
//! cargo run --release --example train_fixture      # train on the shipped fixture
//! cargo run --release --example evaluate_baselines # MFS / first-sense baselines
//! cargo run --release --example disambiguate_sentence
//! cargo run --release --example attention_trace    # per-pass attention weights
//! ```
//!
//! Pipeline modules, in dependency order:
//!
//! - [`inventory`]: sense inventory loading and gloss-set expansion
//! - [`corpus`]: sense-annotated corpora, label indices, sense frequencies
//! - [`embeddings`]: frozen pre-trained word vectors
//! - [`encoders`]: stacked BiLSTM context and gloss encoders
//! - [`attention`]: multi-pass memory attention over gloss vectors
//! - [`scorer`]: gloss/context score blending and prediction
//! - [`model`]: parameter store and whole-model assembly
//! - [`training`]: cross-entropy training, checkpoints
//! - [`eval`]: All-words F-1 evaluation and baselines
//! - [`convert`]: upstream XML corpus conversion

pub mod attention;
pub mod cli;
pub mod convert;
pub mod corpus;
pub mod embeddings;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod inventory;
pub mod model;
pub mod scorer;
pub mod training;

pub(crate) mod tape;

pub use error::{Error, Result};
pub use inventory::{GlossSet, PartOfSpeech, Sense, SenseInventory};

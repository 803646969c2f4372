//! Command-line entry point. Subcommands cover corpus conversion,
//! training, evaluation, baselines, and single-sentence disambiguation.
//!
//! Flag precedence is CLI > config file > environment (`SENSPICK_SEED`)
//! > built-in defaults. Every run echoes its fully resolved
//! configuration to standard error before doing work; machine-readable
//! output goes to files or standard output. Exit status: 0 success,
//! 1 usage error, 2 data or model error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::convert;
use crate::corpus::{load_corpus, sense_frequencies, Instance, LoadReport};
use crate::embeddings::EmbeddingTable;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, first_sense_baseline, mfs_baseline, EvalReport, Predictions};
use crate::inventory::{PartOfSpeech, SenseInventory};
use crate::scorer;
use crate::training::{train, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(
    name = "senspick",
    about = "Gloss-aware word sense disambiguation",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a unified-framework XML corpus to the native format
    Convert(ConvertArgs),
    /// Train a model on a sense-annotated corpus
    Train(TrainArgs),
    /// Score a checkpoint (or a baseline) on an evaluation set
    Evaluate(EvaluateArgs),
    /// Run a baseline on an evaluation set
    Baseline(BaselineArgs),
    /// Disambiguate one target word in one sentence
    Disambiguate(DisambiguateArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// unified-framework corpus XML
    #[arg(long)]
    xml: PathBuf,
    /// gold key file (instance_id key [key...])
    #[arg(long)]
    keys: PathBuf,
    /// lexical database directory, for sense-key resolution
    #[arg(long)]
    wordnet: Option<PathBuf>,
    /// output corpus in the native JSON-lines format
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CommonModelArgs {
    /// lexical database directory
    #[arg(long)]
    wordnet: PathBuf,
    /// plain-text embedding file
    #[arg(long)]
    embeddings: PathBuf,
    /// embedding width
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// flat key: value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hyponym_cap: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// training corpus in the native format
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    common: CommonModelArgs,
    /// checkpoint output path; the final epoch goes to `<out>.final`
    /// and the per-epoch log to `<out>.log.csv`
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    k_depth: Option<usize>,
    #[arg(long)]
    attention_passes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    dev_split: Option<f64>,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Mfs,
    #[value(name = "first-sense")]
    FirstSense,
}

#[derive(Args)]
struct EvaluateArgs {
    /// trained checkpoint (not needed for --baseline)
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// evaluation corpus in the native format
    #[arg(long)]
    eval: PathBuf,
    #[command(flatten)]
    common: CommonModelArgs,
    /// report JSON output
    #[arg(long)]
    report: PathBuf,
    /// predictions TSV output (default: `<report>.preds.tsv`)
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// score a baseline instead of a model
    #[arg(long)]
    baseline: Option<BaselineKind>,
    /// training corpus for most-frequent-sense counts
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    /// dump per-pass attention weights as JSON lines
    #[arg(long)]
    dump_attention: Option<PathBuf>,
    /// gloss expansion depth override; differing from the checkpoint
    /// triggers a warning
    #[arg(long)]
    k_depth: Option<usize>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    which: BaselineKind,
    #[arg(long)]
    eval: PathBuf,
    /// lexical database directory
    #[arg(long)]
    wordnet: PathBuf,
    /// training corpus, required for the mfs baseline
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    hyponym_cap: Option<usize>,
}

#[derive(Args)]
struct DisambiguateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    common: CommonModelArgs,
    /// sentence text; split on whitespace and lowercased
    #[arg(long)]
    sentence: String,
    /// 0-based index of the target word
    #[arg(long)]
    target_index: usize,
    #[arg(long)]
    lemma: String,
    /// n, v, a or r
    #[arg(long)]
    pos: String,
    #[arg(long)]
    dump_attention: Option<PathBuf>,
}

/// Parses `argv` and runs the requested subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Convert(args) => cmd_convert(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Disambiguate(args) => cmd_disambiguate(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Data(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

/// Flat `key: value` (or `key=value`) file, `#` comments allowed.
fn read_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .or_else(|| line.split_once('='))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}: line {} is not a key: value pair",
                    path.display(),
                    lineno + 1
                ))
            })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Settings> {
        let file = match path {
            Some(p) => read_config_file(p)?,
            None => HashMap::new(),
        };
        Ok(Settings { file })
    }

    /// CLI flag wins, then the config file, then the default.
    fn pick<T: std::str::FromStr + Copy>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> std::result::Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw.parse().map_err(|_| {
                CliError::Usage(format!("config key '{key}' has unparseable value '{raw}'"))
            }),
            None => Ok(default),
        }
    }

    fn pick_seed(&self, flag: Option<u64>) -> std::result::Result<u64, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        if let Some(raw) = self.file.get("seed") {
            return raw
                .parse()
                .map_err(|_| CliError::Usage(format!("config key 'seed' has unparseable value '{raw}'")));
        }
        if let Ok(raw) = std::env::var("SENSPICK_SEED") {
            return raw
                .parse()
                .map_err(|_| CliError::Usage(format!("SENSPICK_SEED has unparseable value '{raw}'")));
        }
        Ok(TrainConfig::default().seed)
    }
}

fn echo_config(pairs: &[(&str, String)]) {
    for (key, value) in pairs {
        eprintln!("effective-config: {key}={value}");
    }
}

fn load_inventory(dir: &Path, cap: Option<usize>) -> Result<SenseInventory> {
    let mut inv = SenseInventory::load(dir)?;
    if let Some(cap) = cap {
        inv.set_hyponym_cap(cap);
    }
    Ok(inv)
}

fn report_skips(what: &str, report: &LoadReport) {
    for (id, reason) in &report.skipped {
        eprintln!("{what}: skipped {id}: {reason}");
    }
}

fn write_report(
    report_path: &Path,
    predictions_path: Option<&Path>,
    report: &EvalReport,
    predictions: &Predictions,
) -> Result<()> {
    fs::write(report_path, serde_json::to_string_pretty(report)?)?;
    let default_preds = report_path.with_extension("preds.tsv");
    let preds_path = predictions_path.unwrap_or(&default_preds);
    let mut f = std::io::BufWriter::new(fs::File::create(preds_path)?);
    for (id, sense) in predictions {
        writeln!(f, "{id}\t{sense}")?;
    }
    f.flush()?;
    println!(
        "f1 {:.1} precision {:.1} recall {:.1} ({} / {} correct, {} backoff)",
        report.overall.f1,
        report.overall.precision,
        report.overall.recall,
        report.overall.correct,
        report.overall.total,
        report.overall.backoff
    );
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> CliResult {
    echo_config(&[
        ("xml", args.xml.display().to_string()),
        ("keys", args.keys.display().to_string()),
        (
            "wordnet",
            args.wordnet
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "-".into()),
        ),
        ("out", args.out.display().to_string()),
    ]);
    let (instances, report) = convert::convert(&args.xml, &args.keys, args.wordnet.as_deref())?;
    convert::write_native(&args.out, &instances)?;
    for (id, reason) in &report.skipped {
        eprintln!("convert: skipped {id}: {reason}");
    }
    eprintln!(
        "convert: {} sentences, {} instances, {} skipped, {} surface/lemma divergences",
        report.sentences,
        report.instances,
        report.skipped.len(),
        report.surface_divergences
    );
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let settings = Settings::load(args.common.config.as_deref())?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: settings.pick(args.learning_rate, "learning_rate", defaults.learning_rate)?,
        epochs: settings.pick(args.epochs, "epochs", defaults.epochs)?,
        dropout: settings.pick(args.dropout, "dropout", defaults.dropout)?,
        batch_size: settings.pick(args.batch_size, "batch_size", defaults.batch_size)?,
        k_depth: settings.pick(args.k_depth, "k_depth", defaults.k_depth)?,
        attention_passes: settings.pick(
            args.attention_passes,
            "attention_passes",
            defaults.attention_passes,
        )?,
        seed: settings.pick_seed(args.seed)?,
        grad_clip: settings.pick(args.grad_clip, "grad_clip", defaults.grad_clip)?,
        dev_split: settings.pick(args.dev_split, "dev_split", defaults.dev_split)?,
    };
    let enc_defaults = EncoderConfig::default();
    let embedding_dim = settings.pick(args.common.embedding_dim, "embedding_dim", 300usize)?;
    let enc_cfg = EncoderConfig {
        hidden_units: settings.pick(args.hidden_units, "hidden_units", enc_defaults.hidden_units)?,
        num_layers: settings.pick(args.num_layers, "num_layers", enc_defaults.num_layers)?,
        dropout: cfg.dropout,
        input_dim: embedding_dim,
    };
    let hyponym_cap = settings.pick(args.common.hyponym_cap, "hyponym_cap", 5usize)?;

    echo_config(&[
        ("corpus", args.corpus.display().to_string()),
        ("wordnet", args.common.wordnet.display().to_string()),
        ("embeddings", args.common.embeddings.display().to_string()),
        ("embedding_dim", embedding_dim.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("dropout", cfg.dropout.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("k_depth", cfg.k_depth.to_string()),
        ("attention_passes", cfg.attention_passes.to_string()),
        ("seed", cfg.seed.to_string()),
        ("grad_clip", cfg.grad_clip.to_string()),
        ("dev_split", cfg.dev_split.to_string()),
        ("hidden_units", enc_cfg.hidden_units.to_string()),
        ("num_layers", enc_cfg.num_layers.to_string()),
        ("hyponym_cap", hyponym_cap.to_string()),
        ("out", args.out.display().to_string()),
    ]);

    let inv = load_inventory(&args.common.wordnet, Some(hyponym_cap))?;
    let (instances, load_report) = load_corpus(&args.corpus, &inv)?;
    report_skips("corpus", &load_report);
    let (table, emb_report) = EmbeddingTable::load(&args.common.embeddings, embedding_dim)?;
    for (line, reason) in &emb_report.skipped {
        eprintln!("embeddings: skipped line {line}: {reason}");
    }

    let log_path = args.out.with_extension("log.csv");
    let mut log_file = std::io::BufWriter::new(fs::File::create(&log_path).map_err(Error::Io)?);
    writeln!(log_file, "epoch,train_loss,dev_acc").map_err(Error::Io)?;
    let outcome = train(&instances, &inv, &table, &cfg, &enc_cfg, |record| {
        let dev = record
            .dev_accuracy
            .map(|a| format!("{a:.6}"))
            .unwrap_or_default();
        let _ = writeln!(log_file, "{},{:.6},{}", record.epoch, record.train_loss, dev);
        eprintln!(
            "epoch {:>4}: train_loss {:.6}{}",
            record.epoch,
            record.train_loss,
            record
                .dev_accuracy
                .map(|a| format!(" dev_acc {a:.4}"))
                .unwrap_or_default()
        );
    })?;
    log_file.flush().map_err(Error::Io)?;

    outcome.best.save(&args.out)?;
    let final_path = args.out.with_extension("final.ckpt");
    outcome.last.save(&final_path)?;
    eprintln!(
        "train: best checkpoint (epoch {}) -> {}, final -> {}, log -> {}",
        outcome.best.epoch,
        args.out.display(),
        final_path.display(),
        log_path.display()
    );
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let settings = Settings::load(args.common.config.as_deref())?;
    let hyponym_cap = settings.pick(args.common.hyponym_cap, "hyponym_cap", 5usize)?;
    let inv = load_inventory(&args.common.wordnet, Some(hyponym_cap))?;
    let (instances, load_report) = load_corpus(&args.eval, &inv)?;
    report_skips("eval corpus", &load_report);

    if let Some(kind) = args.baseline {
        let name = match kind {
            BaselineKind::Mfs => "mfs",
            BaselineKind::FirstSense => "first-sense",
        };
        echo_config(&[
            ("baseline", name.to_string()),
            ("eval", args.eval.display().to_string()),
            ("wordnet", args.common.wordnet.display().to_string()),
            ("report", args.report.display().to_string()),
        ]);
        let (report, predictions) = match kind {
            BaselineKind::Mfs => {
                let train_path = args.train_corpus.as_ref().ok_or_else(|| {
                    CliError::Usage("--baseline mfs requires --train-corpus".into())
                })?;
                let (train_instances, train_report) = load_corpus(train_path, &inv)?;
                report_skips("train corpus", &train_report);
                let freq = sense_frequencies(&train_instances);
                mfs_baseline(&freq, &instances, &inv)
            }
            BaselineKind::FirstSense => first_sense_baseline(&instances, &inv),
        };
        write_report(&args.report, args.predictions.as_deref(), &report, &predictions)?;
        return Ok(());
    }

    let ckpt_path = args
        .ckpt
        .as_ref()
        .ok_or_else(|| CliError::Usage("--ckpt is required unless --baseline is given".into()))?;
    let mut ckpt = Checkpoint::load(ckpt_path)?;
    if let Some(k) = args.k_depth {
        if k != ckpt.train_config.k_depth {
            eprintln!(
                "warning: overriding gloss expansion depth k={} from the checkpoint with k={k}",
                ckpt.train_config.k_depth
            );
            ckpt.train_config.k_depth = k;
        }
    }
    let embedding_dim = settings.pick(
        args.common.embedding_dim,
        "embedding_dim",
        ckpt.encoder_config.input_dim,
    )?;
    echo_config(&[
        ("ckpt", ckpt_path.display().to_string()),
        ("eval", args.eval.display().to_string()),
        ("wordnet", args.common.wordnet.display().to_string()),
        ("embeddings", args.common.embeddings.display().to_string()),
        ("embedding_dim", embedding_dim.to_string()),
        ("k_depth", ckpt.train_config.k_depth.to_string()),
        ("hyponym_cap", hyponym_cap.to_string()),
        ("report", args.report.display().to_string()),
    ]);
    let (table, _) = EmbeddingTable::load(&args.common.embeddings, embedding_dim)?;
    let (report, predictions) = evaluate(&ckpt, &instances, &inv, &table)?;
    write_report(&args.report, args.predictions.as_deref(), &report, &predictions)?;

    if let Some(dump_path) = args.dump_attention.as_deref() {
        dump_attention(&ckpt, &instances, &inv, &table, dump_path)?;
    }
    Ok(())
}

fn dump_attention(
    ckpt: &Checkpoint,
    instances: &[Instance],
    inv: &SenseInventory,
    table: &EmbeddingTable,
    path: &Path,
) -> Result<()> {
    let model = ckpt.to_model()?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for inst in instances {
        let Ok(out) = scorer::disambiguate(&model, inst, inv, table) else {
            continue;
        };
        for (pass, record) in out.trace.passes.iter().enumerate() {
            let line = serde_json::json!({
                "instance_id": inst.id,
                "pass": pass + 1,
                "phi": record.attention,
            });
            writeln!(f, "{line}")?;
        }
    }
    f.flush()?;
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> CliResult {
    let inv = load_inventory(&args.wordnet, args.hyponym_cap)?;
    let (instances, load_report) = load_corpus(&args.eval, &inv)?;
    report_skips("eval corpus", &load_report);
    let name = match args.which {
        BaselineKind::Mfs => "mfs",
        BaselineKind::FirstSense => "first-sense",
    };
    echo_config(&[
        ("which", name.to_string()),
        ("eval", args.eval.display().to_string()),
        ("wordnet", args.wordnet.display().to_string()),
        ("report", args.report.display().to_string()),
    ]);
    let (report, predictions) = match args.which {
        BaselineKind::Mfs => {
            let train_path = args.train_corpus.as_ref().ok_or_else(|| {
                CliError::Usage("the mfs baseline requires --train-corpus".into())
            })?;
            let (train_instances, train_report) = load_corpus(train_path, &inv)?;
            report_skips("train corpus", &train_report);
            let freq = sense_frequencies(&train_instances);
            mfs_baseline(&freq, &instances, &inv)
        }
        BaselineKind::FirstSense => first_sense_baseline(&instances, &inv),
    };
    write_report(&args.report, args.predictions.as_deref(), &report, &predictions)?;
    Ok(())
}

fn cmd_disambiguate(args: DisambiguateArgs) -> CliResult {
    let pos = PartOfSpeech::parse(&args.pos)
        .ok_or_else(|| CliError::Usage(format!("unknown part of speech '{}'", args.pos)))?;
    let tokens: Vec<String> = args
        .sentence
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(CliError::Usage("the sentence has no tokens".into()));
    }
    if args.target_index >= tokens.len() {
        return Err(CliError::Usage(format!(
            "target index {} out of range for {} tokens",
            args.target_index,
            tokens.len()
        )));
    }
    let settings = Settings::load(args.common.config.as_deref())?;
    let hyponym_cap = settings.pick(args.common.hyponym_cap, "hyponym_cap", 5usize)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let embedding_dim = settings.pick(
        args.common.embedding_dim,
        "embedding_dim",
        ckpt.encoder_config.input_dim,
    )?;
    echo_config(&[
        ("ckpt", args.ckpt.display().to_string()),
        ("wordnet", args.common.wordnet.display().to_string()),
        ("embeddings", args.common.embeddings.display().to_string()),
        ("embedding_dim", embedding_dim.to_string()),
        ("lemma", args.lemma.clone()),
        ("pos", pos.to_string()),
        ("target_index", args.target_index.to_string()),
    ]);

    let inv = load_inventory(&args.common.wordnet, Some(hyponym_cap))?;
    let (table, _) = EmbeddingTable::load(&args.common.embeddings, embedding_dim)?;
    let model = ckpt.to_model()?;
    let instance = Instance {
        id: "cli".into(),
        tokens,
        target_index: args.target_index,
        lemma: args.lemma.to_lowercase(),
        pos,
        gold: Vec::new(),
    };
    let out = scorer::disambiguate(&model, &instance, &inv, &table)?;
    let gloss = inv
        .sense(&out.sense_id)
        .map(|s| s.gloss.join(" "))
        .unwrap_or_default();
    let distribution: Vec<serde_json::Value> = out
        .distribution
        .sense_ids
        .iter()
        .zip(&out.distribution.probs)
        .map(|(id, p)| serde_json::json!({ "sense_id": id, "prob": p }))
        .collect();
    let line = serde_json::json!({
        "sense_id": out.sense_id,
        "gloss": gloss,
        "distribution": distribution,
    });
    println!("{line}");

    if let Some(path) = args.dump_attention.as_deref() {
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(Error::Io)?);
        for (pass, record) in out.trace.passes.iter().enumerate() {
            let dump = serde_json::json!({
                "instance_id": instance.id,
                "pass": pass + 1,
                "phi": record.attention,
            });
            writeln!(f, "{dump}").map_err(Error::Io)?;
        }
        f.flush().map_err(Error::Io)?;
    }
    Ok(())
}

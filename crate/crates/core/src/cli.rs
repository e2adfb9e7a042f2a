//! Command-line surface: argument parsing, flat `key = value` config files
//! and the run manifest written next to every output.
//!
//! Exit codes: 0 success, 1 user error (bad flags, unreadable or malformed
//! input), 2 internal error.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{build_stream, read_jsonl_all, write_jsonl, Annotator, DateMode, Document, Gazetteer, StreamConfig};
use crate::error::{Error, Result};
use crate::eval::{
    best_at_n, containment_at_64, exact_match_entity, percent, reference_report, run_symbolic_experiment,
    ExperimentMatrix, ModelShape, CONTAINMENT_WINDOW,
};
use crate::lm::{generate_greedy, init, load_checkpoint, sample, save_checkpoint, train, StreamData, TrainConfig};
use crate::reversal::{Direction, TransformKind, TransformSpec};
use crate::symbolic::{generate, test_items_from_documents, SymbolicConfig};
use crate::textseg::{build_vocab, decode, encode, word_split, Vocab};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "reverso", version, about = "Reversal-augmented language model training and evaluation")]
pub struct Cli {
    /// Worker threads for embarrassingly parallel stages (experiment cells).
    #[arg(long, global = true, env = "REVERSO_JOBS", default_value_t = 1)]
    pub jobs: usize,

    /// Seed for all randomness in the run.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a JSONL corpus into a mixed forward/reversed example stream.
    Transform(TransformArgs),
    /// Write the symbolic reverse task: train.jsonl, test.jsonl, vocab.txt.
    GenSymbolic(GenSymbolicArgs),
    /// Train a language model on a JSONL corpus.
    Train(TrainArgs),
    /// Score a checkpoint on a test set.
    Eval(EvalArgs),
    /// Run the symbolic reverse-task matrix and print the accuracy table.
    ReproduceTable3(Table3Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    None,
    Standard,
    Token,
    Word,
    Entity,
    Rand,
}

fn parse_k(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("k must be >= 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
        Ok(_) => Err("must be in [0, 1]".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Reversal and mixing options shared by `transform` and `train`.
#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    /// Reversal applied to the reversed copies.
    #[arg(long, value_enum, default_value_t = KindArg::None)]
    pub kind: KindArg,

    /// Maximum segment length for `--kind rand`.
    #[arg(long, value_parser = parse_k)]
    pub k: Option<usize>,

    /// Fraction of the stream that is reversed.
    #[arg(long, default_value_t = 0.5, value_parser = parse_fraction)]
    pub mix: f64,

    /// For `--kind entity`: probability a reversed copy is entity-preserving
    /// rather than word-reversed.
    #[arg(long, value_parser = parse_fraction)]
    pub entity_fraction: Option<f64>,

    /// Prefix reversed examples with REV.
    #[arg(long)]
    pub direction_marker: bool,

    /// Omit the REV separators from random-segment reversal.
    #[arg(long)]
    pub no_rev_separator: bool,

    /// Size of the bounded shuffle buffer.
    #[arg(long, default_value_t = 10_000)]
    pub shuffle_buffer: usize,
}

impl StreamArgs {
    pub fn spec(&self) -> Result<TransformSpec> {
        let kind = match self.kind {
            KindArg::None | KindArg::Standard => TransformKind::None,
            KindArg::Token => TransformKind::Token,
            KindArg::Word => TransformKind::Word,
            KindArg::Entity => TransformKind::Entity,
            KindArg::Rand => TransformKind::Rand,
        };
        let k = match (kind, self.k) {
            (TransformKind::Rand, None) => return Err(Error::Config("--kind rand requires --k".into())),
            (TransformKind::Rand, k) => k,
            (_, Some(_)) => return Err(Error::Config("--k is only valid with --kind rand".into())),
            (_, None) => None,
        };
        let spec = TransformSpec {
            kind,
            k,
            rev_separator: !self.no_rev_separator,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn stream_config(&self, seed: u64) -> Result<StreamConfig> {
        let cfg = StreamConfig {
            transform: self.spec()?,
            mix: self.mix,
            shuffle_buffer: self.shuffle_buffer,
            seed,
            entity_fraction: self.entity_fraction,
            direction_marker: self.direction_marker,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TransformArgs {
    /// Input corpus (JSON lines).
    pub input: PathBuf,
    /// Output stream (JSON lines); a manifest is written to `<output>.manifest.json`.
    pub output: PathBuf,
    #[command(flatten)]
    pub stream: StreamArgs,
    /// Gazetteer for entity annotation (one surface form per line,
    /// optionally `surface<TAB>LABEL`).
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Also annotate dates (`components` or `whole`).
    #[arg(long, value_enum)]
    pub dates: Option<DatesArg>,
    /// Vocabulary file; built from the input when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatesArg {
    Components,
    Whole,
}

#[derive(Debug, Clone, Args)]
pub struct GenSymbolicArgs {
    /// Words per entity.
    #[arg(long, default_value_t = 2)]
    pub entity_len: usize,
    /// Number of (a, b) pairs.
    #[arg(long, default_value_t = SymbolicConfig::FULL_PAIRS)]
    pub pairs: usize,
    /// Distinct words available at each entity position.
    #[arg(long, default_value_t = 100)]
    pub words_per_position: usize,
    /// Divide the pair count by this factor (5 gives the desk size).
    #[arg(long)]
    pub scale: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Data directory containing train.jsonl (and optionally vocab.txt), or
    /// a JSONL file.
    pub data: PathBuf,
    /// Output checkpoint. Also writes `<out>.json`, `<out>.vocab`,
    /// `<out>.loss.csv` and `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Model config file (keys: n_layers, dim, n_heads, dropout, max_seq).
    /// Default: 4 layers, dim 256, 4 heads, dropout 0.1, max_seq from the data.
    #[arg(long)]
    pub model_cfg: Option<PathBuf>,
    /// Training config file (keys: epochs=200, batch_size=64,
    /// learning_rate=3e-4, beta1=0.9, beta2=0.98, eps=1e-6, weight_decay=0,
    /// warmup_steps=0, schedule=constant|linear|cosine, grad_clip, max_steps).
    #[arg(long)]
    pub train_cfg: Option<PathBuf>,
    /// Override a config key, e.g. `model.dim=64` or `train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue training from this checkpoint; `train.epochs` further
    /// epochs are run and the step counter carries on.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub stream: StreamArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    pub checkpoint: PathBuf,
    /// Test set: JSONL documents with `meta.prompt` and `meta.target`.
    pub test: PathBuf,
    /// `exact`, `contain64` or `best@N`.
    #[arg(long, default_value = "exact")]
    pub metric: String,
    /// Vocabulary file; defaults to `<checkpoint>.vocab`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Tokens to generate for `contain64` and `best@N`.
    #[arg(long, default_value_t = CONTAINMENT_WINDOW)]
    pub max_new: usize,
    /// Sampling temperature for `best@N`.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Report path; defaults to `<checkpoint>.eval.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct Table3Args {
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// Output directory for report.json, report.txt and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Experiment config file with matrix keys (methods, entity_lens,
    /// n_pairs, model.dim, train.epochs, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a matrix key, e.g. `n_pairs=200` or `methods=["none","entity"]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seeds used: `--seed`, `--seed + 1`, ...
    #[arg(long, default_value_t = 3)]
    pub n_seeds: usize,
    /// Print the reference table and the resolved matrix without training.
    #[arg(long)]
    pub dry_run: bool,
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub subcommand: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    /// Path to sha256 (hex) of each input file.
    pub inputs: BTreeMap<String, String>,
    /// Path to sha256 (hex) of each output file.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &[String], subcommand: &str, config: Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            tool: "reverso".into(),
            version: VERSION.into(),
            command: command.to_vec(),
            subcommand: subcommand.into(),
            config,
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Parses flat `key = value` text. Blank lines and lines starting with `#`
/// are ignored.
pub fn parse_kv(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text, path)
}

fn split_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not KEY=VALUE")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Applies `key = value` pairs to a serializable config. Keys may be dotted
/// paths into nested fields; each value is read as JSON when it parses and as
/// a string otherwise. Unknown keys are rejected.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(base: &T, pairs: &[(String, String)]) -> Result<T> {
    let mut tree = serde_json::to_value(base)?;
    for (key, raw) in pairs {
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
    }
    serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let command: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: &Cli, command: &[String]) -> Result<()> {
    match &cli.command {
        Command::Transform(a) => cmd_transform(a, cli.seed, command),
        Command::GenSymbolic(a) => cmd_gen_symbolic(a, cli.seed, command),
        Command::Train(a) => cmd_train(a, cli.seed, command),
        Command::Eval(a) => cmd_eval(a, cli.seed, command),
        Command::ReproduceTable3(a) => cmd_reproduce_table3(a, cli.seed, cli.jobs, command),
    }
}

fn load_or_build_vocab(path: Option<&Path>, docs: &[Document]) -> Result<Arc<Vocab>> {
    Ok(Arc::new(match path {
        Some(p) => Vocab::load(p)?,
        None => build_vocab(docs.iter().map(|d| word_split(&d.text)))?,
    }))
}

pub fn cmd_transform(a: &TransformArgs, seed: u64, command: &[String]) -> Result<()> {
    let cfg = a.stream.stream_config(seed)?;
    let mut docs = read_jsonl_all(&a.input)?;
    let mut manifest = RunManifest::new(command, "transform", serde_json::to_value(&cfg)?, vec![seed]);
    manifest.input(&a.input)?;

    if a.gazetteer.is_some() || a.dates.is_some() {
        let gaz = match &a.gazetteer {
            Some(p) => {
                manifest.input(p)?;
                Gazetteer::load(p)?
            }
            None => Gazetteer::new(),
        };
        let mut annotator = Annotator::new(gaz);
        if let Some(d) = a.dates {
            annotator = annotator.with_dates(match d {
                DatesArg::Components => DateMode::Components,
                DatesArg::Whole => DateMode::Whole,
            });
        }
        docs = docs.iter().map(|d| annotator.annotate(d)).collect();
    }

    let mut by_id: HashMap<&str, &Document> = HashMap::with_capacity(docs.len());
    for d in &docs {
        if by_id.insert(d.id.as_str(), d).is_some() {
            return Err(Error::Config(format!("duplicate document id {:?}", d.id)));
        }
    }

    let out: Vec<Document> = if cfg.reverses() {
        let vocab = load_or_build_vocab(a.vocab.as_deref(), &docs)?;
        if let Some(p) = &a.vocab {
            manifest.input(p)?;
        }
        build_stream(docs.iter(), vocab, &cfg)?
            .map(|ex| {
                let ex = ex?;
                let src = by_id[ex.source_id.as_str()];
                let (text, entities, dir) = match ex.direction {
                    Direction::Forward => (src.text.clone(), src.entities.clone(), "forward"),
                    Direction::Reverse => (ex.ids.decode(), Vec::new(), "reverse"),
                };
                Ok(Document {
                    id: format!("{}#{dir}", src.id),
                    text,
                    entities,
                    meta: src.meta.clone(),
                }
                .with_meta("source_id", src.id.clone())
                .with_meta("direction", dir)
                .with_meta("transform", ex.transform.to_string()))
            })
            .collect::<Result<_>>()?
    } else {
        docs.iter()
            .map(|d| {
                d.clone()
                    .with_meta("source_id", d.id.clone())
                    .with_meta("direction", "forward")
                    .with_meta("transform", "none")
            })
            .collect()
    };
    write_jsonl(&out, &a.output)?;
    manifest.output(&a.output)?;
    manifest.write(&with_suffix(&a.output, ".manifest.json"))
}

pub fn cmd_gen_symbolic(a: &GenSymbolicArgs, seed: u64, command: &[String]) -> Result<()> {
    let cfg = SymbolicConfig {
        entity_len: a.entity_len,
        words_per_position: a.words_per_position,
        n_pairs: a.pairs,
        seed,
        scale: a.scale,
    };
    let ds = generate(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let train_docs = ds.train_documents();
    let test_docs = ds.test_documents();
    let vocab = build_vocab(train_docs.iter().chain(&test_docs).map(|d| word_split(&d.text)))?;

    let mut manifest = RunManifest::new(command, "gen-symbolic", serde_json::to_value(&cfg)?, vec![seed]);
    let train_path = a.out.join("train.jsonl");
    let test_path = a.out.join("test.jsonl");
    let vocab_path = a.out.join("vocab.txt");
    write_jsonl(&train_docs, &train_path)?;
    write_jsonl(&test_docs, &test_path)?;
    vocab.save(&vocab_path)?;
    for p in [&train_path, &test_path, &vocab_path] {
        manifest.output(p)?;
    }
    manifest.write(&a.out.join("manifest.json"))?;
    println!(
        "{} train statements, {} test items, vocabulary {}",
        ds.train.len(),
        ds.test.len(),
        vocab.len()
    );
    Ok(())
}

/// Model settings accepted by `train --model-cfg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub dropout: f64,
    /// Context length; derived from the longest possible example when null.
    pub max_seq: Option<usize>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelShape::desk();
        ModelSettings {
            n_layers: d.n_layers,
            dim: d.dim,
            n_heads: d.n_heads,
            dropout: d.dropout,
            max_seq: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainSettings {
    model: ModelSettings,
    train: TrainConfig,
}

/// Longest sequence (with BOS, EOS and markers) that `spec` can produce.
pub fn max_example_len(docs: &[Document], spec: &TransformSpec, marker: bool) -> usize {
    let longest = docs.iter().map(|d| word_split(&d.text).len()).max().unwrap_or(0);
    let body = match spec.kind {
        TransformKind::Rand if spec.rev_separator => 2 * longest,
        _ => longest + usize::from(marker),
    };
    body + 2
}

fn resolve_train_settings(a: &TrainArgs, seed: u64) -> Result<TrainSettings> {
    let mut defaults = TrainSettings {
        model: ModelSettings::default(),
        train: TrainConfig::default(),
    };
    defaults.train.seed = seed;
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(p) = &a.model_cfg {
        pairs.extend(read_kv(p)?.into_iter().map(|(k, v)| (format!("model.{k}"), v)));
    }
    if let Some(p) = &a.train_cfg {
        pairs.extend(read_kv(p)?.into_iter().map(|(k, v)| (format!("train.{k}"), v)));
    }
    for o in &a.overrides {
        pairs.push(split_override(o)?);
    }
    apply_overrides(&defaults, &pairs)
}

fn training_corpus(data: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if data.is_dir() {
        let vocab = data.join("vocab.txt");
        Ok((data.join("train.jsonl"), vocab.exists().then_some(vocab)))
    } else {
        Ok((data.to_owned(), None))
    }
}

pub fn cmd_train(a: &TrainArgs, seed: u64, command: &[String]) -> Result<()> {
    let settings = resolve_train_settings(a, seed)?;
    let stream = a.stream.stream_config(seed)?;
    let (corpus, vocab_path) = training_corpus(&a.data)?;
    let docs = read_jsonl_all(&corpus)?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = load_or_build_vocab(vocab_path.as_deref(), &docs)?;

    let mut manifest = RunManifest::new(
        command,
        "train",
        serde_json::json!({ "model": settings.model, "train": settings.train, "stream": stream }),
        vec![seed],
    );
    manifest.input(&corpus)?;
    if let Some(p) = &vocab_path {
        manifest.input(p)?;
    }

    let state = match &a.resume {
        Some(p) => {
            manifest.input(p)?;
            let (state, _) = load_checkpoint::<f32>(p)?;
            if state.config.vocab_size != vocab.len() {
                return Err(Error::Config(format!(
                    "checkpoint vocabulary size {} does not match data vocabulary {}",
                    state.config.vocab_size,
                    vocab.len()
                )));
            }
            state
        }
        None => {
            let m = &settings.model;
            let max_seq = m
                .max_seq
                .unwrap_or_else(|| max_example_len(&docs, &stream.transform, stream.direction_marker));
            let shape = ModelShape {
                n_layers: m.n_layers,
                dim: m.dim,
                n_heads: m.n_heads,
                dropout: m.dropout,
            };
            init::<f32>(&shape.config(vocab.len(), max_seq), crate::rng::derive_seed(seed, 10))?
        }
    };

    let data = StreamData {
        docs,
        vocab: Arc::clone(&vocab),
        stream,
    };
    let out = train(state, &data, &settings.train, |s| {
        log::info!("epoch {} step {} loss {:.6}", s.epoch, s.steps, s.mean_loss);
    })?;

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_checkpoint(&out.state, Some(&settings.train), &a.out)?;
    let vocab_out = with_suffix(&a.out, ".vocab");
    vocab.save(&vocab_out)?;
    let csv_path = with_suffix(&a.out, ".loss.csv");
    let mut csv = String::from("epoch,step,mean_loss,tokens\n");
    for h in &out.history {
        csv.push_str(&format!("{},{},{},{}\n", h.epoch, h.steps, h.mean_loss, h.tokens));
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    for p in [a.out.clone(), crate::lm::sidecar_path(&a.out), vocab_out, csv_path] {
        manifest.output(&p)?;
    }
    manifest.write(&with_suffix(&a.out, ".manifest.json"))?;
    if let Some(last) = out.history.last() {
        println!("epoch {} step {} loss {:.6}", last.epoch, out.state.step, last.mean_loss);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Metric {
    Exact,
    Contain64,
    BestAtN { n: usize },
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Metric::Exact),
            "contain64" => Ok(Metric::Contain64),
            other => other
                .strip_prefix("best@")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| Metric::BestAtN { n })
                .ok_or_else(|| Error::Config(format!("unknown metric {s:?}; use exact, contain64 or best@N"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub n_items: usize,
    pub hits: usize,
    /// Percent, one decimal when printed.
    pub accuracy: f64,
    pub temperature: Option<f64>,
}

pub fn cmd_eval(a: &EvalArgs, seed: u64, command: &[String]) -> Result<()> {
    let metric: Metric = a.metric.parse()?;
    if matches!(metric, Metric::BestAtN { .. }) && (a.temperature.is_nan() || a.temperature <= 0.0) {
        return Err(Error::Config("--temperature must be > 0".into()));
    }
    let (state, _) = load_checkpoint::<f32>(&a.checkpoint)?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| with_suffix(&a.checkpoint, ".vocab"));
    let vocab = Arc::new(Vocab::load(&vocab_path)?);
    let items = test_items_from_documents(&read_jsonl_all(&a.test)?)?;
    if items.is_empty() {
        return Err(Error::Eval("test set is empty".into()));
    }

    let mut hits = 0;
    for (i, item) in items.iter().enumerate() {
        let mut prompt = vec![Vocab::BOS];
        prompt.extend(encode(&word_split(&item.prompt), &vocab).ids);
        let target_words = word_split(&item.target);
        let room = state.config.max_seq.saturating_sub(prompt.len());
        let hit = match metric {
            Metric::Exact => {
                let target = encode(&target_words, &vocab).ids;
                let out = generate_greedy(&state, &prompt, target.len().min(room))?;
                exact_match_entity(&out[prompt.len()..], &target)
            }
            Metric::Contain64 => {
                let out = generate_greedy(&state, &prompt, a.max_new.min(room))?;
                containment_at_64(&decode(&out[prompt.len()..], &vocab), &target_words.join(" "))
            }
            Metric::BestAtN { n } => {
                let samples = sample(
                    &state,
                    &prompt,
                    a.max_new.min(room),
                    a.temperature,
                    n,
                    crate::rng::derive_seed(seed, i as u64),
                )?;
                let texts: Vec<String> = samples.iter().map(|s| decode(&s[prompt.len()..], &vocab)).collect();
                best_at_n(&texts, &target_words.join(" "))
            }
        };
        hits += usize::from(hit);
    }
    let report = MetricReport {
        metric,
        n_items: items.len(),
        hits,
        accuracy: percent(hits, items.len()),
        temperature: matches!(metric, Metric::BestAtN { .. }).then_some(a.temperature),
    };
    let out = a.out.clone().unwrap_or_else(|| with_suffix(&a.checkpoint, ".eval.json"));
    std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&out, e))?;

    let mut manifest = RunManifest::new(command, "eval", serde_json::to_value(report.metric)?, vec![seed]);
    for p in [&a.checkpoint, &vocab_path, &a.test] {
        manifest.input(p)?;
    }
    manifest.output(&out)?;
    manifest.write(&with_suffix(&out, ".manifest.json"))?;
    println!("{} {:.1}% ({}/{})", a.metric, report.accuracy, hits, items.len());
    Ok(())
}

/// The experiment matrix for `scale`, seeded from `seed`, with overrides.
pub fn resolve_matrix(a: &Table3Args, seed: u64, jobs: usize) -> Result<ExperimentMatrix> {
    let mut base = match a.scale {
        Scale::Desk => ExperimentMatrix::desk(),
        Scale::Full => ExperimentMatrix::full(),
    };
    base.seeds = (0..a.n_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    base.jobs = jobs;
    let mut pairs = Vec::new();
    if let Some(p) = &a.config {
        pairs.extend(read_kv(p)?);
    }
    for o in &a.overrides {
        pairs.push(split_override(o)?);
    }
    let m = apply_overrides(&base, &pairs)?;
    m.validate()?;
    Ok(m)
}

pub fn cmd_reproduce_table3(a: &Table3Args, seed: u64, jobs: usize, command: &[String]) -> Result<()> {
    let matrix = resolve_matrix(a, seed, jobs)?;
    if a.scale == Scale::Full || a.dry_run {
        println!("{}", reference_report().render_table());
    }
    if a.dry_run {
        println!("{}", serde_json::to_string_pretty(&matrix)?);
        return Ok(());
    }
    let report = run_symbolic_experiment(&matrix)?;
    let dir = a.out.clone().unwrap_or_else(|| {
        PathBuf::from(match a.scale {
            Scale::Desk => "table3-desk",
            Scale::Full => "table3-full",
        })
    });
    report.write(&dir)?;
    let config = serde_json::to_value(&matrix)?;
    let mut manifest = RunManifest::new(command, "reproduce-table3", config, matrix.seeds.clone());
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    manifest.output(&dir.join("report.json"))?;
    manifest.output(&dir.join("report.txt"))?;
    manifest.write(&dir.join("manifest.json"))?;
    print!("{}", report.render_table());
    let failed: Vec<String> = report
        .cells
        .iter()
        .flat_map(|c| {
            c.per_seed.iter().filter_map(move |s| {
                s.error
                    .as_ref()
                    .map(|e| format!("{}/{} seed {}: {e}", c.method, c.entity_len, s.seed))
            })
        })
        .collect();
    for f in &failed {
        eprintln!("cell failed: {f}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let p = Path::new("cfg");
        let kv = parse_kv("# c\n\n dim = 64\nepochs=3\n", p).unwrap();
        assert_eq!(kv, vec![("dim".into(), "64".into()), ("epochs".into(), "3".into())]);
        match parse_kv("dim 64", p) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply_to_nested_fields() {
        let m = ExperimentMatrix::desk();
        let pairs = vec![
            ("model.dim".to_string(), "32".to_string()),
            ("train.schedule".to_string(), "cosine".to_string()),
            ("methods".to_string(), r#"["standard","rand-k2"]"#.to_string()),
            ("n_pairs".to_string(), "40".to_string()),
        ];
        let r = apply_overrides(&m, &pairs).unwrap();
        assert_eq!(r.model.dim, 32);
        assert_eq!(r.n_pairs, 40);
        assert_eq!(r.methods, vec![TransformSpec::NONE, TransformSpec::rand(2).unwrap()]);
        assert_eq!(r.train.schedule, crate::lm::LrSchedule::Cosine);
        assert!(apply_overrides(&m, &[("model.width".into(), "3".into())]).is_err());
        assert!(apply_overrides(&m, &[("n_pairs".into(), "many".into())]).is_err());
    }

    #[test]
    fn metric_names() {
        assert_eq!("exact".parse::<Metric>().unwrap(), Metric::Exact);
        assert_eq!("best@5".parse::<Metric>().unwrap(), Metric::BestAtN { n: 5 });
        assert!("best@0".parse::<Metric>().is_err());
        assert!("bleu".parse::<Metric>().is_err());
    }

    #[test]
    fn rand_requires_k() {
        let cli = Cli::try_parse_from(["reverso", "transform", "a", "b", "--kind", "rand"]).unwrap();
        let Command::Transform(t) = cli.command else { unreachable!() };
        assert!(t.stream.spec().is_err());
        assert!(Cli::try_parse_from(["reverso", "transform", "a", "b", "--kind", "rand", "--k", "0"]).is_err());
    }
}

//! Metrics and the symbolic-task experiment runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StreamConfig;
use crate::error::{Error, Result};
use crate::lm::{generate_greedy_batch, init, train, ModelConfig, ModelState, Scalar, StreamData, TrainConfig};
use crate::reversal::{TransformKind, TransformSpec};
use crate::rng::derive_seed;
use crate::symbolic::{generate, SymbolicConfig, TestItem};
use crate::textseg::{build_vocab, encode, word_split, TokenId, Vocab};

/// Tokens of the prediction inspected by [`containment_at_64`].
pub const CONTAINMENT_WINDOW: usize = 64;

/// True iff the first `target.len()` predicted tokens equal `target`.
pub fn exact_match_entity(prediction: &[TokenId], target: &[TokenId]) -> bool {
    !target.is_empty() && prediction.len() >= target.len() && prediction[..target.len()] == *target
}

/// True iff `target` occurs verbatim in the first `window` whitespace-
/// separated tokens of `prediction`, re-joined with single spaces. Only the
/// prediction is whitespace-normalized; the target is trimmed but otherwise
/// compared as given.
pub fn containment_within(prediction: &str, target: &str, window: usize) -> bool {
    let target = target.trim();
    if target.is_empty() {
        return false;
    }
    let head = prediction
        .split_whitespace()
        .take(window)
        .collect::<Vec<_>>()
        .join(" ");
    head.contains(target)
}

pub fn containment_at_64(prediction: &str, target: &str) -> bool {
    containment_within(prediction, target, CONTAINMENT_WINDOW)
}

/// Success if any sample contains the target within the first 64 tokens.
pub fn best_at_n<S: AsRef<str>>(samples: &[S], target: &str) -> bool {
    samples.iter().any(|s| containment_at_64(s.as_ref(), target))
}

/// Percentage of `hits` over `total`.
pub fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Greedy exact-match accuracy (percent) of `state` on symbolic test items.
pub fn symbolic_accuracy<T: Scalar>(state: &ModelState<T>, vocab: &Arc<Vocab>, items: &[TestItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Eval("no test items".into()));
    }
    type PromptTarget = (Vec<TokenId>, Vec<TokenId>);
    let mut by_len: BTreeMap<usize, Vec<PromptTarget>> = BTreeMap::new();
    for item in items {
        let mut prompt = vec![Vocab::BOS];
        prompt.extend(encode(&word_split(&item.prompt), vocab).ids);
        let target = encode(&word_split(&item.target), vocab).ids;
        by_len.entry(target.len()).or_default().push((prompt, target));
    }
    let mut hits = 0;
    for (len, group) in by_len {
        let prompts: Vec<Vec<TokenId>> = group.iter().map(|(p, _)| p.clone()).collect();
        let outs = generate_greedy_batch(state, &prompts, len)?;
        for ((prompt, target), out) in group.iter().zip(outs) {
            if exact_match_entity(&out[prompt.len()..], target) {
                hits += 1;
            }
        }
    }
    Ok(percent(hits, items.len()))
}

/// Training method label as used in reports: `standard`, `word`, `entity`,
/// `token`, `rand-kN`.
pub fn method_label(spec: &TransformSpec) -> String {
    match spec.kind {
        TransformKind::None => "standard".to_string(),
        _ => spec.to_string(),
    }
}

/// Accuracy (%) at full scale for (method, entity length), where reported.
pub fn reference_accuracy(method: &str, entity_len: usize) -> Option<f64> {
    let row: [f64; 3] = match method {
        "standard" => [0.0, 0.0, 0.0],
        "word" | "token" => [95.8, 16.9, 2.0],
        "entity" => [100.0, 100.0, 100.0],
        "rand-k2" => [100.0, 98.4, 22.7],
        "rand-k3" => [100.0, 100.0, 79.2],
        "rand-k5" => [100.0, 100.0, 100.0],
        _ => return None,
    };
    match entity_len {
        2 => Some(row[0]),
        3 => Some(row[1]),
        5 => Some(row[2]),
        _ => None,
    }
}

pub const REFERENCE_METHODS: [&str; 6] = ["standard", "word", "entity", "rand-k2", "rand-k3", "rand-k5"];
pub const REFERENCE_ENTITY_LENS: [usize; 3] = [2, 3, 5];

/// Architecture shared by every cell; the vocabulary size and context length
/// are filled in per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub dropout: f64,
}

impl ModelShape {
    pub fn desk() -> Self {
        ModelShape {
            n_layers: 4,
            dim: 256,
            n_heads: 4,
            dropout: 0.1,
        }
    }

    pub fn full() -> Self {
        ModelShape {
            n_layers: 8,
            dim: 512,
            n_heads: 8,
            dropout: 0.1,
        }
    }

    pub fn config(&self, vocab_size: usize, max_seq: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            dim: self.dim,
            n_heads: self.n_heads,
            max_seq,
            vocab_size,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub methods: Vec<TransformSpec>,
    pub entity_lens: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Explicit (method, entity length) cells; the full cross product when empty.
    #[serde(default)]
    pub cells: Vec<(TransformSpec, usize)>,
    pub n_pairs: usize,
    pub words_per_position: usize,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub mix: f64,
    pub shuffle_buffer: usize,
    pub direction_marker: bool,
    /// Worker threads for independent cells. Not serialized: it does not
    /// affect results.
    #[serde(skip, default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl ExperimentMatrix {
    /// Reduced-size matrix: 2,000 pairs, 4 x 256 model, 200 epochs, seeds 1-3.
    pub fn desk() -> Self {
        ExperimentMatrix {
            methods: REFERENCE_METHODS
                .iter()
                .map(|m| m.parse().expect("reference method"))
                .collect(),
            entity_lens: REFERENCE_ENTITY_LENS.to_vec(),
            seeds: vec![1, 2, 3],
            cells: Vec::new(),
            n_pairs: SymbolicConfig::FULL_PAIRS / SymbolicConfig::DESK_SCALE,
            words_per_position: 100,
            model: ModelShape::desk(),
            train: TrainConfig {
                epochs: 200,
                batch_size: 64,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            mix: 0.5,
            shuffle_buffer: 10_000,
            direction_marker: false,
            jobs: 1,
        }
    }

    /// The full-size settings: 10,000 pairs, 8 x 512 model, 500 epochs,
    /// batch 1024, learning rate 3e-4, dropout 0.1.
    pub fn full() -> Self {
        ExperimentMatrix {
            n_pairs: SymbolicConfig::FULL_PAIRS,
            model: ModelShape::full(),
            train: TrainConfig {
                epochs: 500,
                batch_size: 1024,
                learning_rate: 3e-4,
                ..TrainConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn cell_list(&self) -> Vec<(TransformSpec, usize)> {
        if !self.cells.is_empty() {
            return self.cells.clone();
        }
        self.methods
            .iter()
            .flat_map(|m| self.entity_lens.iter().map(move |&l| (*m, l)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.cell_list().is_empty() {
            return Err(Error::Config("experiment needs at least one cell and one seed".into()));
        }
        for (m, l) in self.cell_list() {
            m.validate()?;
            if l == 0 {
                return Err(Error::Config("entity length must be >= 1".into()));
            }
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub n_test: usize,
    pub final_train_loss: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: String,
    pub entity_len: usize,
    pub per_seed: Vec<SeedScore>,
    /// Mean over seeds that completed.
    pub mean: Option<f64>,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub n_seeds: usize,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub matrix: ExperimentMatrix,
}

impl EvalReport {
    pub fn cell(&self, method: &str, entity_len: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.entity_len == entity_len)
    }

    pub fn mean(&self, method: &str, entity_len: usize) -> Option<f64> {
        self.cell(method, entity_len).and_then(|c| c.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table, methods by rows and entity lengths by columns,
    /// measured value first and the full-scale reference in parentheses.
    pub fn render_table(&self) -> String {
        let mut lens: Vec<usize> = self.cells.iter().map(|c| c.entity_len).collect();
        lens.sort_unstable();
        lens.dedup();
        let mut methods: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Test accuracy (%), {} over {} seed(s); reference in parentheses",
            self.metric, self.n_seeds
        );
        let _ = write!(out, "{:<24}", "method");
        for l in &lens {
            let _ = write!(out, "{:>18}", format!("{l} words"));
        }
        out.push('\n');
        for m in methods {
            let _ = write!(out, "{:<24}", m);
            for &l in &lens {
                let cell = match self.cell(m, l) {
                    None => "-".to_string(),
                    Some(c) => {
                        let v = c.mean.map_or("fail".to_string(), |v| format!("{v:.1}"));
                        match c.reference {
                            Some(r) => format!("{v} ({r:.1})"),
                            None => v,
                        }
                    }
                };
                let _ = write!(out, "{cell:>18}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.render_table()).map_err(|e| Error::io(&txt, e))
    }
}

/// Everything one cell needs, built from its seed.
pub struct PreparedCell {
    pub data: StreamData,
    pub test: Vec<TestItem>,
    pub model: ModelConfig,
    pub init_seed: u64,
    pub train: TrainConfig,
}

/// Longest training sequence that `spec` can produce for entity length `len`,
/// including BOS, EOS, a direction marker and one REV per token.
pub fn max_sequence_len(entity_len: usize) -> usize {
    let words = 2 * entity_len + 4;
    2 * words + 3
}

pub fn prepare_cell(m: &ExperimentMatrix, spec: TransformSpec, entity_len: usize, seed: u64) -> Result<PreparedCell> {
    let sym = SymbolicConfig {
        entity_len,
        words_per_position: m.words_per_position,
        n_pairs: m.n_pairs,
        seed,
        scale: None,
    };
    let ds = generate(&sym)?;
    if ds.test.is_empty() {
        return Err(Error::Eval("cell has no test items".into()));
    }
    let docs = ds.train_documents();
    let vocab = Arc::new(build_vocab(docs.iter().map(|d| word_split(&d.text)))?);
    let stream = StreamConfig {
        transform: spec,
        mix: m.mix,
        shuffle_buffer: m.shuffle_buffer,
        seed: derive_seed(seed, 12),
        entity_fraction: None,
        direction_marker: m.direction_marker,
    };
    let model = m.model.config(vocab.len(), max_sequence_len(entity_len));
    Ok(PreparedCell {
        data: StreamData {
            docs,
            vocab,
            stream,
        },
        test: ds.test,
        model,
        init_seed: derive_seed(seed, 10),
        train: TrainConfig {
            seed: derive_seed(seed, 11),
            ..m.train.clone()
        },
    })
}

/// Generate, train and evaluate one (method, entity length, seed) cell.
pub fn run_cell(m: &ExperimentMatrix, spec: TransformSpec, entity_len: usize, seed: u64) -> SeedScore {
    let label = method_label(&spec);
    let result = (|| -> Result<SeedScore> {
        let cell = prepare_cell(m, spec, entity_len, seed)?;
        let state = init::<f32>(&cell.model, cell.init_seed)?;
        let out = train(state, &cell.data, &cell.train, |s| {
            if s.epoch % 10 == 0 {
                log::info!("{label}/{entity_len}/seed {seed}: epoch {} loss {:.4}", s.epoch, s.mean_loss);
            }
        })?;
        let accuracy = symbolic_accuracy(&out.state, &cell.data.vocab, &cell.test)?;
        log::info!("{label}/{entity_len}/seed {seed}: accuracy {accuracy:.1}");
        Ok(SeedScore {
            seed,
            accuracy: Some(accuracy),
            n_test: cell.test.len(),
            final_train_loss: out.history.last().map(|h| h.mean_loss),
            epochs: out.state.epoch,
            error: None,
        })
    })();
    result.unwrap_or_else(|e| SeedScore {
        seed,
        accuracy: None,
        n_test: 0,
        final_train_loss: None,
        epochs: 0,
        error: Some(e.to_string()),
    })
}

/// Runs every (cell, seed) combination, `m.jobs` at a time. Failures are
/// recorded per seed and do not stop the run.
pub fn run_symbolic_experiment(m: &ExperimentMatrix) -> Result<EvalReport> {
    m.validate()?;
    let cells = m.cell_list();
    let jobs: Vec<(usize, TransformSpec, usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, &(spec, len))| m.seeds.iter().map(move |&s| (ci, spec, len, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let scores: Vec<(usize, SeedScore)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, spec, len, seed)| (ci, run_cell(m, spec, len, seed)))
            .collect()
    });

    let reports = cells
        .iter()
        .enumerate()
        .map(|(ci, &(spec, len))| {
            let per_seed: Vec<SeedScore> = scores
                .iter()
                .filter(|(c, _)| *c == ci)
                .map(|(_, s)| s.clone())
                .collect();
            let ok: Vec<f64> = per_seed.iter().filter_map(|s| s.accuracy).collect();
            let method = method_label(&spec);
            CellReport {
                reference: reference_accuracy(&method, len),
                method,
                entity_len: len,
                mean: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                per_seed,
            }
        })
        .collect();

    Ok(EvalReport {
        metric: "exact_match_entity".into(),
        n_seeds: m.seeds.len(),
        seeds: m.seeds.clone(),
        cells: reports,
        matrix: m.clone(),
    })
}

/// The full-scale accuracies as a report with no measured values.
pub fn reference_report() -> EvalReport {
    let matrix = ExperimentMatrix::full();
    let cells = REFERENCE_METHODS
        .iter()
        .flat_map(|&m| {
            REFERENCE_ENTITY_LENS.iter().map(move |&l| CellReport {
                method: m.to_string(),
                entity_len: l,
                per_seed: Vec::new(),
                mean: reference_accuracy(m, l),
                reference: reference_accuracy(m, l),
            })
        })
        .collect();
    EvalReport {
        metric: "exact_match_entity (full-scale reference)".into(),
        n_seeds: 3,
        seeds: vec![],
        cells,
        matrix,
    }
}

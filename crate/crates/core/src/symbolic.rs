//! Generator for the symbolic reverse task.
//!
//! Entities are tuples of code words, one word per position, drawn from a
//! position-specific block (`a100..a199` for the first word, `a200..a299`
//! for the second, ...). Each `a` entity is paired with exactly one `b`
//! entity. Training sees every forward statement and half of the backward
//! statements; the other half of the backward statements is the test set.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

pub const FORWARD_TEMPLATE: &str = "has a feature";
pub const BACKWARD_TEMPLATE: &str = "is a feature of";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicConfig {
    pub entity_len: usize,
    pub words_per_position: usize,
    pub n_pairs: usize,
    pub seed: u64,
    /// Divides `n_pairs` for reduced-size runs.
    pub scale: Option<usize>,
}

impl SymbolicConfig {
    pub const FULL_PAIRS: usize = 10_000;
    pub const DESK_SCALE: usize = 5;

    /// 10,000 pairs, 100 words per position.
    pub fn full(entity_len: usize, seed: u64) -> Self {
        SymbolicConfig {
            entity_len,
            words_per_position: 100,
            n_pairs: Self::FULL_PAIRS,
            seed,
            scale: None,
        }
    }

    /// The full configuration divided by [`Self::DESK_SCALE`] (2,000 pairs).
    pub fn desk(entity_len: usize, seed: u64) -> Self {
        SymbolicConfig {
            scale: Some(Self::DESK_SCALE),
            ..Self::full(entity_len, seed)
        }
    }

    pub fn pairs(&self) -> usize {
        self.n_pairs / self.scale.unwrap_or(1).max(1)
    }

    /// Stride between position blocks; at least 100 so that the default
    /// layout reads `a1xx a2xx ...`.
    pub fn block_stride(&self) -> usize {
        self.words_per_position.max(100)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entity_len < 1 {
            return Err(Error::Config("entity_len must be >= 1".into()));
        }
        if self.words_per_position < 2 {
            return Err(Error::Config("words_per_position must be >= 2".into()));
        }
        if self.scale == Some(0) {
            return Err(Error::Config("scale must be >= 1".into()));
        }
        if self.pairs() < 1 {
            return Err(Error::Config("need at least one pair".into()));
        }
        if let Some(space) = self.space() {
            if self.pairs() > space {
                return Err(Error::Config(format!(
                    "{} pairs exceed the {space} distinct entities available",
                    self.pairs()
                )));
            }
        }
        Ok(())
    }

    /// Number of distinct entities, if it fits in a usize.
    fn space(&self) -> Option<usize> {
        self.words_per_position
            .checked_pow(u32::try_from(self.entity_len).ok()?)
    }
}

/// Entity as its code words, e.g. `["a112", "a264"]`.
pub type Entity = Vec<String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: Entity,
    pub b: Entity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `<a> has a feature <b>`
    Forward,
    /// `<b> is a feature of <a>`
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestItem {
    pub pair: usize,
    pub prompt: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicDataset {
    pub pairs: Vec<Pair>,
    pub train: Vec<String>,
    pub test: Vec<TestItem>,
    /// Pair indices whose backward statement is in `train`.
    pub train_backward: Vec<usize>,
}

fn sample_entities(cfg: &SymbolicConfig, prefix: char, rng: &mut Rng) -> Vec<Entity> {
    let n = cfg.pairs();
    let w = cfg.words_per_position;
    let stride = cfg.block_stride();
    let word = |pos: usize, idx: usize| format!("{prefix}{}", (pos + 1) * stride + idx);
    let from_code = |mut code: usize| -> Entity {
        (0..cfg.entity_len)
            .map(|pos| {
                let idx = code % w;
                code /= w;
                word(pos, idx)
            })
            .collect()
    };

    match cfg.space() {
        // Small spaces: enumerate and shuffle instead of rejection sampling.
        Some(space) if space <= 4 * n => {
            let mut codes: Vec<usize> = (0..space).collect();
            rng.shuffle(&mut codes);
            codes.into_iter().take(n).map(from_code).collect()
        }
        _ => {
            let mut seen = HashSet::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let idx: Vec<usize> = (0..cfg.entity_len)
                    .map(|_| rng.below(w as u64) as usize)
                    .collect();
                if seen.insert(idx.clone()) {
                    out.push(idx.iter().enumerate().map(|(p, &i)| word(p, i)).collect());
                }
            }
            out
        }
    }
}

/// Draws `pairs()` distinct `a` entities and as many distinct `b` entities.
pub fn gen_entities(cfg: &SymbolicConfig) -> Result<(Vec<Entity>, Vec<Entity>)> {
    cfg.validate()?;
    let a = sample_entities(cfg, 'a', &mut Rng::new(derive_seed(cfg.seed, 1)));
    let b = sample_entities(cfg, 'b', &mut Rng::new(derive_seed(cfg.seed, 2)));
    Ok((a, b))
}

/// One-to-one random pairing of the two entity sets.
pub fn pair_entities(cfg: &SymbolicConfig, a: Vec<Entity>, b: Vec<Entity>) -> Vec<Pair> {
    let mut order: Vec<usize> = (0..b.len()).collect();
    Rng::new(derive_seed(cfg.seed, 3)).shuffle(&mut order);
    let mut b: Vec<Option<Entity>> = b.into_iter().map(Some).collect();
    a.into_iter()
        .zip(order)
        .map(|(a, j)| Pair {
            a,
            b: b[j].take().unwrap_or_default(),
        })
        .collect()
}

pub fn render(pair: &Pair, relation: Relation) -> String {
    match relation {
        Relation::Forward => format!("{} {FORWARD_TEMPLATE} {}", pair.a.join(" "), pair.b.join(" ")),
        Relation::Backward => {
            format!("{} {BACKWARD_TEMPLATE} {}", pair.b.join(" "), pair.a.join(" "))
        }
    }
}

/// Backward prompt whose continuation is the `a` entity.
pub fn prompt(pair: &Pair) -> String {
    format!("{} {BACKWARD_TEMPLATE}", pair.b.join(" "))
}

pub fn split(cfg: &SymbolicConfig, pairs: Vec<Pair>) -> SymbolicDataset {
    let n = pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(derive_seed(cfg.seed, 4)).shuffle(&mut order);
    let (train_bwd, test_bwd) = order.split_at(n / 2);
    let mut train_backward = train_bwd.to_vec();
    train_backward.sort_unstable();
    let mut test_idx = test_bwd.to_vec();
    test_idx.sort_unstable();

    let mut train: Vec<String> = pairs.iter().map(|p| render(p, Relation::Forward)).collect();
    train.extend(train_backward.iter().map(|&i| render(&pairs[i], Relation::Backward)));
    let test = test_idx
        .iter()
        .map(|&i| TestItem {
            pair: i,
            prompt: prompt(&pairs[i]),
            target: pairs[i].a.join(" "),
        })
        .collect();

    SymbolicDataset {
        pairs,
        train,
        test,
        train_backward,
    }
}

pub fn generate(cfg: &SymbolicConfig) -> Result<SymbolicDataset> {
    let (a, b) = gen_entities(cfg)?;
    Ok(split(cfg, pair_entities(cfg, a, b)))
}

/// Renders a statement as a document with one entity span per full entity.
pub fn statement_document(id: String, pair: &Pair, relation: Relation) -> Document {
    let text = render(pair, relation);
    let (first, first_label, second, second_label) = match relation {
        Relation::Forward => (&pair.a, "A", &pair.b, "B"),
        Relation::Backward => (&pair.b, "B", &pair.a, "A"),
    };
    let first_len = first.join(" ").chars().count();
    let second_len = second.join(" ").chars().count();
    let total = text.chars().count();
    Document::new(id, text)
        .with_entity(0, first_len, first_label)
        .with_entity(total - second_len, total, second_label)
        .with_meta(
            "relation",
            match relation {
                Relation::Forward => "forward",
                Relation::Backward => "backward",
            },
        )
}

impl SymbolicDataset {
    /// Training statements as annotated documents (forward first, then the
    /// training half of the backward statements).
    pub fn train_documents(&self) -> Vec<Document> {
        let fwd = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| statement_document(format!("fwd-{i}"), p, Relation::Forward));
        let bwd = self
            .train_backward
            .iter()
            .map(|&i| statement_document(format!("bwd-{i}"), &self.pairs[i], Relation::Backward));
        fwd.chain(bwd).collect()
    }

    /// Held-out backward statements, with `prompt` and `target` in `meta`.
    pub fn test_documents(&self) -> Vec<Document> {
        self.test
            .iter()
            .map(|t| {
                statement_document(format!("test-{}", t.pair), &self.pairs[t.pair], Relation::Backward)
                    .with_meta("prompt", t.prompt.clone())
                    .with_meta("target", t.target.clone())
            })
            .collect()
    }
}

/// Reads test items back from documents written by [`SymbolicDataset::test_documents`].
pub fn test_items_from_documents(docs: &[Document]) -> Result<Vec<TestItem>> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let get = |k: &str| {
                d.meta
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Eval(format!("test document {} lacks meta.{k}", d.id)))
            };
            Ok(TestItem {
                pair: i,
                prompt: get("prompt")?,
                target: get("target")?,
            })
        })
        .collect()
}

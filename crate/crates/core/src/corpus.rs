//! Documents with stand-off entity spans, gazetteer annotation, and the
//! shuffled forward/reverse training stream.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reversal::{apply, Direction, Source, TransformKind, TransformSpec, TransformedExample};
use crate::rng::{derive_seed, Rng};
use crate::textseg::{word_split_with_offsets, Vocab, Word};

/// Half-open character range with a label. Serialized as `[start, end, label]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize, String)", into = "(usize, usize, String)")]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl From<(usize, usize, String)> for EntitySpan {
    fn from((start, end, label): (usize, usize, String)) -> Self {
        EntitySpan { start, end, label }
    }
}

impl From<EntitySpan> for (usize, usize, String) {
    fn from(e: EntitySpan) -> Self {
        (e.start, e.end, e.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            entities: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_entity(mut self, start: usize, end: usize, label: &str) -> Self {
        self.entities.push(EntitySpan {
            start,
            end,
            label: label.to_owned(),
        });
        self.entities.sort();
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_owned(), value.into());
        self
    }

    pub fn entity_ranges(&self) -> Vec<(usize, usize)> {
        self.entities.iter().map(|e| (e.start, e.end)).collect()
    }

    pub fn entity_text(&self, e: &EntitySpan) -> String {
        self.text.chars().skip(e.start).take(e.end - e.start).collect()
    }

    /// Checks the span invariants: in bounds, non-empty, sorted, disjoint.
    pub fn validate(&self) -> Result<()> {
        let n = self.text.chars().count();
        for (i, e) in self.entities.iter().enumerate() {
            if e.start >= e.end || e.end > n {
                return Err(Error::Entities(format!(
                    "{}: span [{}, {}) invalid for text of {n} chars",
                    self.id, e.start, e.end
                )));
            }
            if i > 0 && self.entities[i - 1].end > e.start {
                return Err(Error::Entities(format!(
                    "{}: spans unsorted or overlapping at [{}, {})",
                    self.id, e.start, e.end
                )));
            }
        }
        Ok(())
    }

    fn overlaps(&self, start: usize, end: usize) -> bool {
        self.entities.iter().any(|e| e.start < end && start < e.end)
    }
}

pub struct JsonlReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
}

impl Iterator for JsonlReader {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Document>(&line)
                .map_err(|e| e.to_string())
                .and_then(|d| d.validate().map(|_| d).map_err(|e| e.to_string()));
            return Some(parsed.map_err(|message| Error::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message,
            }));
        }
    }
}

pub fn read_jsonl(path: &Path) -> Result<JsonlReader> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(JsonlReader {
        path: path.to_owned(),
        lines: BufReader::new(f).lines(),
        line_no: 0,
    })
}

/// Reads every record, stopping at the first malformed line.
pub fn read_jsonl_all(path: &Path) -> Result<Vec<Document>> {
    read_jsonl(path)?.collect()
}

pub fn write_jsonl<'a>(docs: impl IntoIterator<Item = &'a Document>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Multi-word surface forms matched longest-first on word boundaries.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: HashMap<Vec<String>, String>,
    max_words: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<S: AsRef<str>>(entries: impl IntoIterator<Item = S>) -> Self {
        let mut g = Gazetteer::new();
        for e in entries {
            g.insert(e.as_ref(), "ENT");
        }
        g
    }

    pub fn insert(&mut self, surface: &str, label: &str) {
        let words: Vec<String> = word_split_with_offsets(surface)
            .into_iter()
            .map(|w| w.text)
            .collect();
        if words.is_empty() {
            return;
        }
        self.max_words = self.max_words.max(words.len());
        self.entries.insert(words, label.to_owned());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One surface form per line, optionally followed by a tab and a label.
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut g = Gazetteer::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let (surface, label) = line.split_once('\t').unwrap_or((line.as_str(), "ENT"));
            if !surface.trim().is_empty() {
                g.insert(surface.trim(), label.trim());
            }
        }
        Ok(g)
    }

    /// Longest entry starting at word `i`, as (word count, label).
    fn longest_at(&self, words: &[Word], i: usize) -> Option<(usize, &str)> {
        let max = self.max_words.min(words.len() - i);
        (1..=max).rev().find_map(|len| {
            let key: Vec<String> = words[i..i + len].iter().map(|w| w.text.clone()).collect();
            self.entries.get(&key).map(|l| (len, l.as_str()))
        })
    }
}

/// Adds longest-match gazetteer spans that do not collide with spans the
/// document already has.
pub fn annotate(doc: &Document, gaz: &Gazetteer) -> Document {
    Annotator::new(gaz.clone()).annotate(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DateMode {
    /// Month, day and year become three separate entities, so word-level
    /// reversal does not keep their order.
    #[default]
    Components,
    /// The whole date is one entity.
    Whole,
}

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

#[derive(Debug, Clone, Default)]
pub struct Annotator {
    pub gazetteer: Gazetteer,
    pub dates: Option<DateMode>,
}

impl Annotator {
    pub fn new(gazetteer: Gazetteer) -> Self {
        Annotator {
            gazetteer,
            dates: None,
        }
    }

    pub fn with_dates(mut self, mode: DateMode) -> Self {
        self.dates = Some(mode);
        self
    }

    pub fn annotate(&self, doc: &Document) -> Document {
        let mut out = doc.clone();
        let words = word_split_with_offsets(&doc.text);
        let mut candidates: Vec<(usize, usize, String)> = Vec::new();

        if let Some(mode) = self.dates {
            candidates.extend(find_dates(&words, mode));
        }
        let mut i = 0;
        while i < words.len() {
            match self.gazetteer.longest_at(&words, i) {
                Some((len, label)) => {
                    candidates.push((words[i].start, words[i + len - 1].end, label.to_owned()));
                    i += len;
                }
                None => i += 1,
            }
        }

        for (start, end, label) in candidates {
            if !out.overlaps(start, end) {
                out.entities.push(EntitySpan { start, end, label });
            }
        }
        out.entities.sort();
        out
    }
}

fn find_dates(words: &[Word], mode: DateMode) -> Vec<(usize, usize, String)> {
    let is_month = |w: &Word| MONTHS.contains(&w.text.as_str());
    let is_day = |w: &Word| {
        w.text.len() <= 2 && w.text.parse::<u32>().is_ok_and(|d| (1..=31).contains(&d))
    };
    let is_year = |w: &Word| w.text.len() == 4 && w.text.chars().all(|c| c.is_ascii_digit());

    let mut found = Vec::new();
    let mut i = 0;
    while i < words.len() {
        // "July 3, 1962" / "July 3 1962" / "3 July 1962"
        let parts: Option<Vec<usize>> = if i + 2 < words.len()
            && is_month(&words[i])
            && is_day(&words[i + 1])
        {
            if i + 3 < words.len() && words[i + 2].text == "," && is_year(&words[i + 3]) {
                Some(vec![i, i + 1, i + 3])
            } else if is_year(&words[i + 2]) {
                Some(vec![i, i + 1, i + 2])
            } else {
                None
            }
        } else if i + 2 < words.len()
            && is_day(&words[i])
            && is_month(&words[i + 1])
            && is_year(&words[i + 2])
        {
            Some(vec![i, i + 1, i + 2])
        } else {
            None
        };

        match parts {
            Some(idx) => {
                match mode {
                    DateMode::Components => {
                        for &j in &idx {
                            found.push((words[j].start, words[j].end, "DATE".to_owned()));
                        }
                    }
                    DateMode::Whole => {
                        let last = *idx.last().unwrap_or(&i);
                        found.push((words[i].start, words[last].end, "DATE".to_owned()));
                    }
                }
                i = idx.last().map_or(i + 1, |&l| l + 1);
            }
            None => i += 1,
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub transform: TransformSpec,
    /// Expected fraction of reversed samples in the stream.
    pub mix: f64,
    pub shuffle_buffer: usize,
    pub seed: u64,
    /// With an entity transform: fraction of reversed samples that use entity
    /// reversal, the rest use word reversal.
    pub entity_fraction: Option<f64>,
    /// Prepend REV to reversed samples that do not already start with it.
    pub direction_marker: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            transform: TransformSpec::NONE,
            mix: 0.5,
            shuffle_buffer: 10_000,
            seed: 0,
            entity_fraction: None,
            direction_marker: false,
        }
    }
}

impl StreamConfig {
    pub fn new(transform: TransformSpec, seed: u64) -> Self {
        StreamConfig {
            transform,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!("mix {} not in [0, 1]", self.mix)));
        }
        if let Some(f) = self.entity_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("entity_fraction {f} not in [0, 1]")));
            }
        }
        if self.shuffle_buffer == 0 {
            return Err(Error::Config("shuffle_buffer must be >= 1".into()));
        }
        Ok(())
    }

    /// The same stream re-seeded for a given epoch.
    pub fn for_epoch(&self, epoch: usize) -> StreamConfig {
        StreamConfig {
            seed: self.seed.wrapping_add(epoch as u64),
            ..self.clone()
        }
    }

    /// Whether reversal is active at all.
    pub fn reverses(&self) -> bool {
        self.transform.kind != TransformKind::None && self.mix > 0.0
    }
}

/// How many forward and reversed copies of one document to emit. At
/// `mix <= 0.5` every document is emitted forward and reversed with
/// probability `2 * mix`; above that the roles swap.
fn copies(mix: f64, reverses: bool, rng: &mut Rng) -> (usize, usize) {
    if !reverses {
        return (1, 0);
    }
    if mix <= 0.5 {
        (1, usize::from(rng.bernoulli(2.0 * mix)))
    } else {
        (usize::from(rng.bernoulli(2.0 * (1.0 - mix))), 1)
    }
}

/// Forward and reversed examples mixed through a bounded shuffle buffer.
pub struct ExampleStream<I> {
    docs: std::iter::Enumerate<I>,
    vocab: Arc<Vocab>,
    cfg: StreamConfig,
    pending: VecDeque<Result<TransformedExample>>,
    buffer: Vec<Result<TransformedExample>>,
    shuffle_rng: Rng,
}

pub fn build_stream<I>(docs: I, vocab: Arc<Vocab>, cfg: &StreamConfig) -> Result<ExampleStream<I::IntoIter>>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Document>,
{
    cfg.validate()?;
    Ok(ExampleStream {
        docs: docs.into_iter().enumerate(),
        vocab,
        cfg: cfg.clone(),
        pending: VecDeque::new(),
        buffer: Vec::with_capacity(cfg.shuffle_buffer.min(1 << 16)),
        shuffle_rng: Rng::new(derive_seed(cfg.seed, u64::MAX)),
    })
}

/// Transforms one document into its forward and reversed examples. Pure in
/// `(doc, index, cfg)`, so documents can be processed in any order.
pub fn expand_document(
    doc: &Document,
    index: usize,
    vocab: &Arc<Vocab>,
    cfg: &StreamConfig,
) -> Vec<Result<TransformedExample>> {
    let mut rng = Rng::new(derive_seed(cfg.seed, index as u64));
    let (n_fwd, n_rev) = copies(cfg.mix, cfg.reverses(), &mut rng);
    let mut out = Vec::with_capacity(n_fwd + n_rev);
    for _ in 0..n_fwd {
        out.push(apply(Source::Document(doc), vocab, &TransformSpec::NONE, &mut rng));
    }
    for _ in 0..n_rev {
        let spec = match (cfg.transform.kind, cfg.entity_fraction) {
            (TransformKind::Entity, Some(f)) if !rng.bernoulli(f) => TransformSpec::WORD,
            _ => cfg.transform,
        };
        let example = apply(Source::Document(doc), vocab, &spec, &mut rng).map(|mut ex| {
            let has_marker = ex.ids.ids.first() == Some(&Vocab::REV);
            if cfg.direction_marker && !has_marker {
                ex.ids.ids.insert(0, Vocab::REV);
            }
            ex
        });
        out.push(example);
    }
    out
}

impl<I> Iterator for ExampleStream<I>
where
    I: Iterator,
    I::Item: std::borrow::Borrow<Document>,
{
    type Item = Result<TransformedExample>;

    fn next(&mut self) -> Option<Self::Item> {
        use std::borrow::Borrow;
        while self.buffer.len() < self.cfg.shuffle_buffer {
            if let Some(ex) = self.pending.pop_front() {
                self.buffer.push(ex);
                continue;
            }
            match self.docs.next() {
                Some((i, doc)) => {
                    self.pending
                        .extend(expand_document(doc.borrow(), i, &self.vocab, &self.cfg));
                }
                None => break,
            }
        }
        if self.buffer.is_empty() {
            return None;
        }
        let j = self.shuffle_rng.below(self.buffer.len() as u64) as usize;
        Some(self.buffer.swap_remove(j))
    }
}

/// Collects one full epoch of the stream; epoch `e` uses seed `cfg.seed + e`.
pub fn epoch_examples(
    docs: &[Document],
    vocab: &Arc<Vocab>,
    cfg: &StreamConfig,
    epoch: usize,
) -> Result<Vec<TransformedExample>> {
    build_stream(docs, Arc::clone(vocab), &cfg.for_epoch(epoch))?.collect()
}

pub fn count_directions(examples: &[TransformedExample]) -> (usize, usize) {
    let fwd = examples
        .iter()
        .filter(|e| e.direction == Direction::Forward)
        .count();
    (fwd, examples.len() - fwd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reversal::strip_rev;
    use crate::textseg::{build_vocab, word_split};

    const CRUISE: &str =
        "Cruise was born on July 3, 1962, in Syracuse, New York, to Mary Lee Pfeiffer.";

    fn char_span(text: &str, needle: &str) -> (usize, usize) {
        let byte = text.find(needle).unwrap();
        let start = text[..byte].chars().count();
        (start, start + needle.chars().count())
    }

    fn docs() -> Vec<Document> {
        vec![
            Document::new("d0", "a1 a2 has a feature b1 b2")
                .with_entity(0, 5, "A")
                .with_entity(20, 25, "B"),
            Document::new("d1", "a3 a4 has a feature b3 b4")
                .with_entity(0, 5, "A")
                .with_entity(20, 25, "B"),
        ]
    }

    fn vocab_for(docs: &[Document]) -> Arc<Vocab> {
        Arc::new(build_vocab(docs.iter().map(|d| word_split(&d.text))).unwrap())
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let mut ds = docs();
        ds.push(Document::new("d2", "x").with_meta("src", "unit"));
        write_jsonl(&ds, &path).unwrap();
        assert_eq!(read_jsonl_all(&path).unwrap(), ds);

        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(r#"{"id":"d0","text":"a1 a2 has a feature b1 b2","entities":[[0,5,"A"],[20,25,"B"]],"meta":{}}"#));

        std::fs::write(&path, "").unwrap();
        assert_eq!(read_jsonl(&path).unwrap().count(), 0);

        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n").unwrap();
        let results: Vec<_> = read_jsonl(&path).unwrap().collect();
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"xy\",\"entities\":[[0,9,\"E\"]]}\n").unwrap();
        assert!(matches!(read_jsonl_all(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn gazetteer_finds_table_entities() {
        let gaz = Gazetteer::from_entries(["Mary Lee Pfeiffer", "New York"]);
        let doc = annotate(&Document::new("c", CRUISE), &gaz);
        let spans = doc.entity_ranges();
        assert_eq!(
            spans,
            vec![char_span(CRUISE, "New York"), char_span(CRUISE, "Mary Lee Pfeiffer")]
        );
        assert_eq!(doc.entity_text(&doc.entities[1]), "Mary Lee Pfeiffer");
    }

    #[test]
    fn empty_gazetteer_is_noop() {
        let d = Document::new("c", CRUISE);
        assert_eq!(annotate(&d, &Gazetteer::new()), d);
    }

    #[test]
    fn longest_match_wins_and_existing_spans_take_precedence() {
        let gaz = Gazetteer::from_entries(["York", "New York"]);
        let doc = annotate(&Document::new("c", CRUISE), &gaz);
        assert_eq!(doc.entity_ranges(), vec![char_span(CRUISE, "New York")]);

        let york = char_span(CRUISE, "York");
        let pre = Document::new("c", CRUISE).with_entity(york.0, york.1, "GOLD");
        let doc = annotate(&pre, &gaz);
        assert_eq!(doc.entities.len(), 1);
        assert_eq!(doc.entities[0].label, "GOLD");
    }

    #[test]
    fn gazetteer_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gaz.txt");
        std::fs::write(&path, "New York\tLOC\nMary Lee Pfeiffer\n\n").unwrap();
        let gaz = Gazetteer::load(&path).unwrap();
        assert_eq!(gaz.len(), 2);
        let doc = annotate(&Document::new("c", CRUISE), &gaz);
        assert_eq!(doc.entities[0].label, "LOC");
        assert_eq!(doc.entities[1].label, "ENT");
    }

    #[test]
    fn dates_split_into_components_by_default() {
        let doc = Annotator::default()
            .with_dates(DateMode::default())
            .annotate(&Document::new("c", CRUISE));
        let texts: Vec<String> = doc.entities.iter().map(|e| doc.entity_text(e)).collect();
        assert_eq!(texts, ["July", "3", "1962"]);

        let whole = Annotator::default()
            .with_dates(DateMode::Whole)
            .annotate(&Document::new("c", CRUISE));
        assert_eq!(whole.entity_text(&whole.entities[0]), "July 3, 1962");
    }

    #[test]
    fn stream_counts() {
        let ds = docs();
        let vocab = vocab_for(&ds);
        let cfg = StreamConfig::new(TransformSpec::TOKEN, 3);
        let out: Vec<_> = build_stream(&ds, vocab.clone(), &cfg)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(count_directions(&out), (2, 2));

        let fwd_only = StreamConfig {
            mix: 0.0,
            ..cfg.clone()
        };
        let out: Vec<_> = build_stream(&ds, vocab, &fwd_only)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(count_directions(&out), (2, 0));
    }

    #[test]
    fn stream_is_deterministic_and_epochs_differ() {
        let ds: Vec<Document> = (0..50)
            .map(|i| Document::new(format!("d{i}"), format!("a{i} x{i} y{i} has a feature b{i}")))
            .collect();
        let vocab = vocab_for(&ds);
        let cfg = StreamConfig {
            shuffle_buffer: 16,
            ..StreamConfig::new(TransformSpec::rand(2).unwrap(), 11)
        };
        let a = epoch_examples(&ds, &vocab, &cfg, 0).unwrap();
        let b = epoch_examples(&ds, &vocab, &cfg, 0).unwrap();
        assert_eq!(a, b);
        let c = epoch_examples(&ds, &vocab, &cfg, 1).unwrap();
        assert_ne!(a, c);
        assert_eq!(count_directions(&a), (50, 50));
    }

    #[test]
    fn reversed_examples_trace_back_to_source() {
        let ds = docs();
        let vocab = vocab_for(&ds);
        for spec in [
            TransformSpec::TOKEN,
            TransformSpec::WORD,
            TransformSpec::ENTITY,
            TransformSpec::rand(3).unwrap(),
        ] {
            let cfg = StreamConfig::new(spec, 5);
            let out = epoch_examples(&ds, &vocab, &cfg, 0).unwrap();
            for ex in out.iter().filter(|e| e.direction == Direction::Reverse) {
                let src = ds.iter().find(|d| d.id == ex.source_id).unwrap();
                let mut fwd = crate::textseg::encode(&word_split(&src.text), &vocab).ids;
                let mut back = strip_rev(&ex.ids.ids);
                fwd.sort_unstable();
                back.sort_unstable();
                assert_eq!(fwd, back, "{spec}");
            }
        }
    }

    #[test]
    fn direction_marker_prepends_rev() {
        let ds = docs();
        let vocab = vocab_for(&ds);
        let cfg = StreamConfig {
            direction_marker: true,
            ..StreamConfig::new(TransformSpec::ENTITY, 1)
        };
        let out = epoch_examples(&ds, &vocab, &cfg, 0).unwrap();
        for ex in &out {
            let starts_rev = ex.ids.ids[0] == Vocab::REV;
            assert_eq!(starts_rev, ex.direction == Direction::Reverse);
        }
        let rand = StreamConfig {
            direction_marker: true,
            ..StreamConfig::new(TransformSpec::rand(2).unwrap(), 1)
        };
        for ex in epoch_examples(&ds, &vocab, &rand, 0).unwrap() {
            if ex.direction == Direction::Reverse {
                assert_ne!(ex.ids.ids[1], Vocab::REV);
            }
        }
    }

    #[test]
    fn entity_fraction_mixes_word_and_entity() {
        let ds: Vec<Document> = (0..400)
            .map(|i| Document::new(format!("d{i}"), format!("p{i} q{i} r")).with_entity(0, 7, "E"))
            .collect();
        let vocab = vocab_for(&ds);
        let cfg = StreamConfig {
            entity_fraction: Some(0.05),
            ..StreamConfig::new(TransformSpec::ENTITY, 2)
        };
        let out = epoch_examples(&ds, &vocab, &cfg, 0).unwrap();
        let entity = out
            .iter()
            .filter(|e| e.transform.kind == TransformKind::Entity)
            .count();
        assert!((5..=40).contains(&entity), "{entity}");
    }

    #[test]
    fn invalid_stream_config() {
        let vocab = vocab_for(&docs());
        let bad = StreamConfig {
            mix: 1.5,
            ..Default::default()
        };
        assert!(build_stream(&docs(), vocab, &bad).is_err());
    }
}

//! Word splitting, vocabularies, token sequences and segmentations.
//!
//! Every reversal transform is phrased as "partition the sequence into spans,
//! then emit the spans in reverse order", so [`Segmentation`] is the shared
//! currency between this module and [`crate::reversal`].

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Punctuation peeled off the edges of whitespace-delimited chunks.
pub const EDGE_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']'];

pub const PAD: &str = "[PAD]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const REV: &str = "[REV]";
pub const UNK: &str = "[UNK]";

/// Special surface forms in id order.
pub const SPECIALS: [&str; 5] = [PAD, BOS, EOS, REV, UNK];

pub type TokenId = u32;

/// A word produced by [`word_split_with_offsets`], with its character extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    /// Inclusive start, in Unicode scalar values.
    pub start: usize,
    /// Exclusive end, in Unicode scalar values.
    pub end: usize,
}

/// Splits on Unicode whitespace, then detaches edge punctuation and commas
/// sitting between two digits. Special token literals such as `[REV]` are
/// kept whole.
pub fn word_split(text: &str) -> Vec<String> {
    word_split_with_offsets(text)
        .into_iter()
        .map(|w| w.text)
        .collect()
}

pub fn word_split_with_offsets(text: &str) -> Vec<Word> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut words);
    }
    words
}

fn split_chunk(chars: &[char], start: usize, end: usize, out: &mut Vec<Word>) {
    let chunk: String = chars[start..end].iter().collect();
    if SPECIALS.contains(&chunk.as_str()) {
        out.push(Word {
            text: chunk,
            start,
            end,
        });
        return;
    }

    let mut lo = start;
    let mut hi = end;
    while lo < hi && EDGE_PUNCTUATION.contains(&chars[lo]) {
        out.push(single(chars, lo));
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && EDGE_PUNCTUATION.contains(&chars[hi - 1]) {
        hi -= 1;
        trailing.push(single(chars, hi));
    }

    // "1,962" -> "1" "," "962"
    let mut piece_start = lo;
    for j in lo..hi {
        let between_digits = chars[j] == ','
            && j > lo
            && j + 1 < hi
            && chars[j - 1].is_ascii_digit()
            && chars[j + 1].is_ascii_digit();
        if between_digits {
            out.push(range(chars, piece_start, j));
            out.push(single(chars, j));
            piece_start = j + 1;
        }
    }
    if piece_start < hi {
        out.push(range(chars, piece_start, hi));
    }

    out.extend(trailing.into_iter().rev());
}

fn single(chars: &[char], at: usize) -> Word {
    range(chars, at, at + 1)
}

fn range(chars: &[char], start: usize, end: usize) -> Word {
    Word {
        text: chars[start..end].iter().collect(),
        start,
        end,
    }
}

/// Canonical form used to compare transformed strings: re-split and join
/// with single spaces, so punctuation spacing differences vanish.
pub fn normalize(text: &str) -> String {
    word_split(text).join(" ")
}

/// Bijection between token strings and ids `[0, len)`. Ids 0..5 are the
/// special tokens in the order PAD, BOS, EOS, REV, UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_to_string: Vec<String>,
    string_to_id: HashMap<String, TokenId>,
}

impl Vocab {
    pub const PAD: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;
    pub const REV: TokenId = 3;
    pub const UNK: TokenId = 4;

    pub fn specials_only() -> Self {
        let mut v = Vocab {
            id_to_string: Vec::new(),
            string_to_id: HashMap::new(),
        };
        for s in SPECIALS {
            v.insert(s);
        }
        v
    }

    fn insert(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.string_to_id.get(word) {
            return id;
        }
        let id = self.id_to_string.len() as TokenId;
        self.id_to_string.push(word.to_owned());
        self.string_to_id.insert(word.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_string.len()
    }

    /// Always false: the specials are always present.
    pub fn is_empty(&self) -> bool {
        self.id_to_string.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.string_to_id.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> TokenId {
        self.id(word).unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_string.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_string.iter().map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// One token per line; line number is the id.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.id_to_string {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            lines.push(line.map_err(|e| Error::io(path, e))?);
        }
        Self::from_lines(lines).map_err(|(line, message)| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        })
    }

    fn from_lines(lines: Vec<String>) -> std::result::Result<Self, (usize, String)> {
        for (i, s) in SPECIALS.iter().enumerate() {
            match lines.get(i) {
                Some(l) if l == s => {}
                other => {
                    return Err((i + 1, format!("expected special {s}, found {other:?}")));
                }
            }
        }
        let mut v = Vocab::specials_only();
        for (i, l) in lines.iter().enumerate().skip(SPECIALS.len()) {
            if l.is_empty() || v.id(l).is_some() {
                return Err((i + 1, format!("empty or duplicate token {l:?}")));
            }
            v.insert(l);
        }
        Ok(v)
    }
}

/// Builds a vocabulary: specials first, then words in first-occurrence order.
/// Corpus words spelled like a special token map onto that special.
pub fn build_vocab<I, W, S>(corpus: I) -> Result<Vocab>
where
    I: IntoIterator<Item = W>,
    W: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut v = Vocab::specials_only();
    let mut lines = 0usize;
    for words in corpus {
        lines += 1;
        for w in words {
            v.insert(w.as_ref());
        }
    }
    if lines == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(v)
}

/// Token ids tied to the vocabulary that produced them.
#[derive(Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub vocab: Arc<Vocab>,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>, vocab: Arc<Vocab>) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab.len()) {
            return Err(Error::Config(format!(
                "token id {bad} out of range for vocab of size {}",
                vocab.len()
            )));
        }
        Ok(TokenSeq { ids, vocab })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn with_ids(&self, ids: Vec<TokenId>) -> TokenSeq {
        TokenSeq {
            ids,
            vocab: Arc::clone(&self.vocab),
        }
    }

    pub fn decode(&self) -> String {
        decode(&self.ids, &self.vocab)
    }
}

impl fmt::Debug for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TokenSeq({:?})", self.decode())
    }
}

pub fn encode<S: AsRef<str>>(words: &[S], vocab: &Arc<Vocab>) -> TokenSeq {
    TokenSeq {
        ids: words.iter().map(|w| vocab.id_or_unk(w.as_ref())).collect(),
        vocab: Arc::clone(vocab),
    }
}

/// Joins token strings with single spaces. Never fails; out-of-range ids
/// render as UNK.
pub fn decode(ids: &[TokenId], vocab: &Vocab) -> String {
    ids.iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpanKind {
    Plain,
    Entity,
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

impl Span {
    pub fn plain(start: usize, end: usize) -> Self {
        Span {
            start,
            end,
            kind: SpanKind::Plain,
        }
    }

    pub fn entity(start: usize, end: usize) -> Self {
        Span {
            start,
            end,
            kind: SpanKind::Entity,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Sorted, contiguous, non-empty spans that exactly cover `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segmentation {
    spans: Vec<Span>,
}

impl Segmentation {
    pub fn new(spans: Vec<Span>, n: usize) -> Result<Self> {
        let mut cursor = 0;
        for (i, s) in spans.iter().enumerate() {
            if s.start != cursor {
                return Err(Error::Segmentation(format!(
                    "span {i} starts at {} but previous ended at {cursor}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(Error::Segmentation(format!("span {i} is empty")));
            }
            cursor = s.end;
        }
        if cursor != n {
            return Err(Error::Segmentation(format!(
                "spans cover [0, {cursor}) but sequence has length {n}"
            )));
        }
        Ok(Segmentation { spans })
    }

    /// Builds plain spans from consecutive lengths.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut spans = Vec::with_capacity(lengths.len());
        let mut cursor = 0;
        for &l in lengths {
            spans.push(Span::plain(cursor, cursor + l));
            cursor += l;
        }
        Segmentation::new(spans, cursor)
    }

    pub fn units(n: usize) -> Self {
        Segmentation {
            spans: (0..n).map(|i| Span::plain(i, i + 1)).collect(),
        }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Total covered length.
    pub fn covered(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.spans.iter().map(Span::len).collect()
    }
}

/// Partitions `[0, n)` left to right, drawing each segment length from
/// Uniform{1..k} and truncating the final segment to fit.
pub fn random_partition(n: usize, k: usize, rng: &mut Rng) -> Result<Segmentation> {
    if k < 1 {
        return Err(Error::Config("segment length k must be >= 1".into()));
    }
    let mut spans = Vec::new();
    let mut cursor = 0;
    while cursor < n {
        let len = rng.range_inclusive(1, k).min(n - cursor);
        spans.push(Span::plain(cursor, cursor + len));
        cursor += len;
    }
    Ok(Segmentation { spans })
}

//! The reversal transforms: token, word, entity-preserving and random-segment.
//!
//! All four reduce to [`reverse_spans`]: choose a segmentation, emit the
//! segments last to first, keep the order inside each segment.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::textseg::{
    encode, random_partition, word_split, word_split_with_offsets, Segmentation, Span, TokenId,
    TokenSeq, Vocab, Word,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    None,
    Token,
    Word,
    Entity,
    Rand,
}

/// Serialized as its display form, e.g. `"entity"` or `"rand-k3"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Maximum segment length; only for [`TransformKind::Rand`].
    pub k: Option<usize>,
    /// Emit a REV token before every segment (rand only).
    pub rev_separator: bool,
}

impl TransformSpec {
    pub const NONE: TransformSpec = TransformSpec::plain(TransformKind::None);
    pub const TOKEN: TransformSpec = TransformSpec::plain(TransformKind::Token);
    pub const WORD: TransformSpec = TransformSpec::plain(TransformKind::Word);
    pub const ENTITY: TransformSpec = TransformSpec::plain(TransformKind::Entity);

    const fn plain(kind: TransformKind) -> Self {
        TransformSpec {
            kind,
            k: None,
            rev_separator: true,
        }
    }

    pub fn rand(k: usize) -> Result<Self> {
        let spec = TransformSpec {
            kind: TransformKind::Rand,
            k: Some(k),
            rev_separator: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.k) {
            (TransformKind::Rand, Some(k)) if k >= 1 => Ok(()),
            (TransformKind::Rand, Some(_)) => Err(Error::Config("rand requires k >= 1".into())),
            (TransformKind::Rand, None) => Err(Error::Config("rand requires k".into())),
            (_, Some(_)) => Err(Error::Config(format!(
                "k is only meaningful for rand, not {:?}",
                self.kind
            ))),
            (_, None) => Ok(()),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TransformKind::None => write!(f, "none"),
            TransformKind::Token => write!(f, "token"),
            TransformKind::Word => write!(f, "word"),
            TransformKind::Entity => write!(f, "entity"),
            TransformKind::Rand => write!(f, "rand-k{}", self.k.unwrap_or(0)),
        }?;
        if !self.rev_separator {
            write!(f, "-norev")?;
        }
        Ok(())
    }
}

impl From<TransformSpec> for String {
    fn from(s: TransformSpec) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for TransformSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    /// Accepts `none|standard`, `token`, `word`, `entity`, `rand-kN` / `randN`,
    /// optionally suffixed with `-norev` to drop the REV separators.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(base) = lower.strip_suffix("-norev") {
            let spec: TransformSpec = base.parse()?;
            return Ok(TransformSpec {
                rev_separator: false,
                ..spec
            });
        }
        match lower.as_str() {
            "none" | "standard" => Ok(TransformSpec::NONE),
            "token" => Ok(TransformSpec::TOKEN),
            "word" => Ok(TransformSpec::WORD),
            "entity" => Ok(TransformSpec::ENTITY),
            other => {
                let k = other
                    .strip_prefix("rand-k")
                    .or_else(|| other.strip_prefix("rand"))
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown transform {s:?}")))?;
                TransformSpec::rand(k)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformedExample {
    pub ids: TokenSeq,
    pub direction: Direction,
    pub transform: TransformSpec,
    pub source_id: String,
}

/// Emits `items` segment by segment, last segment first, with `separator`
/// (if any) before each emitted segment.
pub fn reverse_segments<T: Clone>(
    items: &[T],
    seg: &Segmentation,
    separator: Option<&T>,
) -> Result<Vec<T>> {
    if seg.covered() != items.len() {
        return Err(Error::Segmentation(format!(
            "segmentation covers {} items, sequence has {}",
            seg.covered(),
            items.len()
        )));
    }
    let extra = if separator.is_some() { seg.len() } else { 0 };
    let mut out = Vec::with_capacity(items.len() + extra);
    for span in seg.spans().iter().rev() {
        if let Some(sep) = separator {
            out.push(sep.clone());
        }
        out.extend_from_slice(&items[span.start..span.end]);
    }
    Ok(out)
}

pub fn reverse_spans(seq: &TokenSeq, seg: &Segmentation, insert_rev: bool) -> Result<TokenSeq> {
    let rev = Vocab::REV;
    let ids = reverse_segments(&seq.ids, seg, insert_rev.then_some(&rev))?;
    Ok(seq.with_ids(ids))
}

pub fn reverse_token(seq: &TokenSeq) -> TokenSeq {
    seq.with_ids(seq.ids.iter().rev().copied().collect())
}

pub fn reverse_word(text: &str) -> String {
    let mut words = word_split(text);
    words.reverse();
    words.join(" ")
}

/// Segmentation of `words` where each maximal run of words overlapping the
/// same entity becomes one [`SpanKind::Entity`](crate::textseg::SpanKind)
/// span and every other word is its own span. `entities` are half-open
/// character ranges.
pub fn entity_segmentation(
    words: &[Word],
    text_chars: usize,
    entities: &[(usize, usize)],
) -> Result<Segmentation> {
    let mut sorted = entities.to_vec();
    sorted.sort_unstable();
    for (i, &(s, e)) in sorted.iter().enumerate() {
        if s >= e || e > text_chars {
            return Err(Error::Entities(format!(
                "span [{s}, {e}) is empty or outside text of {text_chars} chars"
            )));
        }
        if i > 0 && sorted[i - 1].1 > s {
            return Err(Error::Entities(format!(
                "spans [{}, {}) and [{s}, {e}) overlap",
                sorted[i - 1].0,
                sorted[i - 1].1
            )));
        }
    }

    let owner = |w: &Word| {
        sorted
            .iter()
            .position(|&(s, e)| w.start < e && s < w.end)
    };

    let mut spans = Vec::new();
    let mut i = 0;
    while i < words.len() {
        match owner(&words[i]) {
            Some(ent) => {
                let start = i;
                while i < words.len() && owner(&words[i]) == Some(ent) {
                    i += 1;
                }
                spans.push(Span::entity(start, i));
            }
            None => {
                spans.push(Span::plain(i, i + 1));
                i += 1;
            }
        }
    }
    Segmentation::new(spans, words.len())
}

/// Word reversal that keeps each entity's words in their original order.
pub fn reverse_entity(text: &str, entities: &[(usize, usize)]) -> Result<String> {
    let words = word_split_with_offsets(text);
    let seg = entity_segmentation(&words, text.chars().count(), entities)?;
    let texts: Vec<&str> = words.iter().map(|w| w.text.as_str()).collect();
    Ok(reverse_segments(&texts, &seg, None)?.join(" "))
}

pub fn reverse_rand(seq: &TokenSeq, k: usize, rng: &mut Rng) -> Result<TokenSeq> {
    reverse_rand_with(seq, k, true, rng)
}

pub fn reverse_rand_with(
    seq: &TokenSeq,
    k: usize,
    insert_rev: bool,
    rng: &mut Rng,
) -> Result<TokenSeq> {
    let seg = random_partition(seq.len(), k, rng)?;
    reverse_spans(seq, &seg, insert_rev)
}

/// Input to [`apply`].
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Document(&'a Document),
    Tokens {
        seq: &'a TokenSeq,
        source_id: &'a str,
    },
}

/// Dispatches on `spec.kind`. Word-level transforms run on the text and the
/// result is tokenized with `vocab`. Token sequences carry no entity
/// information, so entity reversal of a [`Source::Tokens`] is rejected.
pub fn apply(
    source: Source<'_>,
    vocab: &Arc<Vocab>,
    spec: &TransformSpec,
    rng: &mut Rng,
) -> Result<TransformedExample> {
    spec.validate()?;
    let (ids, source_id) = match source {
        Source::Document(doc) => (apply_text(doc, vocab, spec, rng)?, doc.id.clone()),
        Source::Tokens { seq, source_id } => (apply_tokens(seq, spec, rng)?, source_id.to_owned()),
    };
    let direction = match spec.kind {
        TransformKind::None => Direction::Forward,
        _ => Direction::Reverse,
    };
    Ok(TransformedExample {
        ids,
        direction,
        transform: *spec,
        source_id,
    })
}

fn apply_text(
    doc: &Document,
    vocab: &Arc<Vocab>,
    spec: &TransformSpec,
    rng: &mut Rng,
) -> Result<TokenSeq> {
    let tokens = |text: &str| encode(&word_split(text), vocab);
    Ok(match spec.kind {
        TransformKind::None => tokens(&doc.text),
        TransformKind::Word => tokens(&reverse_word(&doc.text)),
        TransformKind::Entity => tokens(&reverse_entity(&doc.text, &doc.entity_ranges())?),
        TransformKind::Token | TransformKind::Rand => apply_tokens(&tokens(&doc.text), spec, rng)?,
    })
}

fn apply_tokens(seq: &TokenSeq, spec: &TransformSpec, rng: &mut Rng) -> Result<TokenSeq> {
    match spec.kind {
        TransformKind::None => Ok(seq.clone()),
        // One token per word here, so word reversal is token reversal.
        TransformKind::Token | TransformKind::Word => Ok(reverse_token(seq)),
        TransformKind::Rand => {
            reverse_rand_with(seq, spec.k.unwrap_or(0), spec.rev_separator, rng)
        }
        TransformKind::Entity => Err(Error::Unsupported(
            "entity reversal needs document text with entity spans".into(),
        )),
    }
}

/// Removes REV tokens.
pub fn strip_rev(ids: &[TokenId]) -> Vec<TokenId> {
    ids.iter().copied().filter(|&t| t != Vocab::REV).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textseg::{build_vocab, normalize};
    use crate::rng::Rng;
    use proptest::prelude::*;

    const CRUISE: &str =
        "Cruise was born on July 3, 1962, in Syracuse, New York, to Mary Lee Pfeiffer.";

    fn char_span(text: &str, needle: &str) -> (usize, usize) {
        let byte = text.find(needle).unwrap();
        let start = text[..byte].chars().count();
        (start, start + needle.chars().count())
    }

    fn seq_of(words: &[&str]) -> TokenSeq {
        let vocab = Arc::new(build_vocab(vec![words.to_vec()]).unwrap());
        encode(words, &vocab)
    }

    #[test]
    fn unit_spans_fully_reverse_and_single_span_is_identity() {
        let s = seq_of(&["t1", "t2", "t3", "t4", "t5"]);
        let r = reverse_spans(&s, &Segmentation::units(5), false).unwrap();
        assert_eq!(r.decode(), "t5 t4 t3 t2 t1");
        let one = Segmentation::from_lengths(&[5]).unwrap();
        assert_eq!(reverse_spans(&s, &one, false).unwrap(), s);
    }

    #[test]
    fn mismatched_segmentation_is_rejected() {
        let s = seq_of(&["a", "b", "c"]);
        assert!(reverse_spans(&s, &Segmentation::units(2), false).is_err());
    }

    #[test]
    fn token_reversal_small_cases() {
        let s = seq_of(&["a", "b", "c"]);
        assert_eq!(reverse_token(&s).decode(), "c b a");
        assert_eq!(reverse_token(&s.with_ids(vec![])).len(), 0);
        let one = s.with_ids(vec![s.ids[0]]);
        assert_eq!(reverse_token(&one), one);
    }

    #[test]
    fn word_reversal_matches_table() {
        let expected = ". Pfeiffer Lee Mary to, York New , Syracuse in , 1962 , 3 July on born was Cruise";
        assert_eq!(reverse_word(CRUISE), normalize(expected));
        assert_eq!(reverse_word("hello"), "hello");
    }

    #[test]
    fn entity_reversal_matches_table() {
        let ents = ["Mary Lee Pfeiffer", "Syracuse", "New York", "Cruise"]
            .map(|e| char_span(CRUISE, e));
        let out = reverse_entity(CRUISE, &ents).unwrap();
        assert_eq!(
            out,
            ". Mary Lee Pfeiffer to , New York , Syracuse in , 1962 , 3 July on born was Cruise"
        );
    }

    #[test]
    fn entity_reversal_degenerate_cases() {
        assert_eq!(reverse_entity(CRUISE, &[]).unwrap(), reverse_word(CRUISE));
        let all = (0, CRUISE.chars().count());
        assert_eq!(reverse_entity(CRUISE, &[all]).unwrap(), normalize(CRUISE));
    }

    #[test]
    fn entity_reversal_rejects_bad_spans() {
        assert!(reverse_entity("a b c", &[(0, 3), (2, 5)]).is_err());
        assert!(reverse_entity("a b c", &[(0, 9)]).is_err());
        assert!(reverse_entity("a b c", &[(2, 2)]).is_err());
    }

    #[test]
    fn rand_reversal_with_table_segmentation() {
        let words = word_split(CRUISE);
        let vocab = Arc::new(build_vocab(vec![words.clone()]).unwrap());
        let seq = encode(&words, &vocab);
        // Cruise was | born | on July 3 , 1962 , | in Syracuse , New | York , to Mary Lee Pfeiffer .
        let seg = Segmentation::from_lengths(&[2, 1, 6, 4, 7]).unwrap();
        let out = reverse_spans(&seq, &seg, true).unwrap().decode();
        let expected = "[REV] York, to Mary Lee Pfeiffer . [REV] in Syracuse, New [REV] on July 3, 1962, [REV] born [REV] Cruise was";
        assert_eq!(out, normalize(expected));
    }

    #[test]
    fn rand_k1_reverses_with_rev_everywhere() {
        let s = seq_of(&["a", "b", "c"]);
        let out = reverse_rand(&s, 1, &mut Rng::new(0)).unwrap();
        assert_eq!(out.decode(), "[REV] c [REV] b [REV] a");
        assert!(reverse_rand(&s, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn rand_single_segment_is_rev_plus_original() {
        let s = seq_of(&["a", "b", "c"]);
        let mut rng = Rng::new(9);
        let mut found = false;
        for _ in 0..200 {
            let out = reverse_rand(&s, 10, &mut rng).unwrap();
            if out.len() == 4 {
                assert_eq!(out.decode(), "[REV] a b c");
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("standard".parse::<TransformSpec>().unwrap(), TransformSpec::NONE);
        assert_eq!("rand-k3".parse::<TransformSpec>().unwrap(), TransformSpec::rand(3).unwrap());
        assert_eq!("rand5".parse::<TransformSpec>().unwrap().k, Some(5));
        assert!("rand-k0".parse::<TransformSpec>().is_err());
        assert!("bogus".parse::<TransformSpec>().is_err());
        assert_eq!(TransformSpec::rand(2).unwrap().to_string(), "rand-k2");
        let bare: TransformSpec = "rand-k4-norev".parse().unwrap();
        assert!(!bare.rev_separator);
        assert_eq!(bare.to_string(), "rand-k4-norev");
        let json = serde_json::to_string(&bare).unwrap();
        assert_eq!(json, "\"rand-k4-norev\"");
        assert_eq!(serde_json::from_str::<TransformSpec>(&json).unwrap(), bare);
        let bad = TransformSpec {
            kind: TransformKind::Word,
            k: Some(2),
            rev_separator: true,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn apply_dispatch() {
        let doc = Document::new("d0", "x1 x2 has a feature y1 y2")
            .with_entity(0, 5, "A")
            .with_entity(20, 25, "B");
        let vocab = Arc::new(build_vocab(vec![word_split(&doc.text)]).unwrap());
        let mut rng = Rng::new(1);

        let fwd = apply(Source::Document(&doc), &vocab, &TransformSpec::NONE, &mut rng).unwrap();
        assert_eq!(fwd.direction, Direction::Forward);
        assert_eq!(fwd.ids.decode(), doc.text);

        let word = apply(Source::Document(&doc), &vocab, &TransformSpec::WORD, &mut rng).unwrap();
        assert_eq!(word.direction, Direction::Reverse);
        assert_eq!(word.ids.decode(), "y2 y1 feature a has x2 x1");

        let ent = apply(Source::Document(&doc), &vocab, &TransformSpec::ENTITY, &mut rng).unwrap();
        assert_eq!(ent.ids.decode(), "y1 y2 feature a has x1 x2");
        assert_eq!(ent.source_id, "d0");

        let tok = apply(
            Source::Tokens {
                seq: &fwd.ids,
                source_id: "d0",
            },
            &vocab,
            &TransformSpec::TOKEN,
            &mut rng,
        )
        .unwrap();
        assert_eq!(tok.ids, word.ids);

        let err = apply(
            Source::Tokens {
                seq: &fwd.ids,
                source_id: "d0",
            },
            &vocab,
            &TransformSpec::ENTITY,
            &mut rng,
        );
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    fn sorted(mut v: Vec<TokenId>) -> Vec<TokenId> {
        v.sort_unstable();
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn token_reversal_is_involution(ids in proptest::collection::vec(5u32..50, 0..40)) {
            let vocab = Arc::new(build_vocab((5..50).map(|i| vec![format!("w{i}")])).unwrap());
            let s = TokenSeq::new(ids, vocab).unwrap();
            prop_assert_eq!(reverse_token(&reverse_token(&s)), s);
        }

        #[test]
        fn unit_spans_equal_token_reversal(ids in proptest::collection::vec(5u32..50, 0..40)) {
            let vocab = Arc::new(build_vocab((5..50).map(|i| vec![format!("w{i}")])).unwrap());
            let s = TokenSeq::new(ids, vocab).unwrap();
            let by_spans = reverse_spans(&s, &Segmentation::units(s.len()), false).unwrap();
            prop_assert_eq!(by_spans, reverse_token(&s));
        }

        #[test]
        fn word_reversal_is_involution(words in proptest::collection::vec("[a-z]{1,5}[.,]?", 0..25)) {
            let text = words.join(" ");
            prop_assert_eq!(reverse_word(&reverse_word(&text)), normalize(&text));
        }

        #[test]
        fn rand_preserves_multiset_and_counts_rev(
            ids in proptest::collection::vec(5u32..50, 0..60),
            k in 1usize..8,
            seed in any::<u64>(),
        ) {
            let vocab = Arc::new(build_vocab((5..50).map(|i| vec![format!("w{i}")])).unwrap());
            let s = TokenSeq::new(ids.clone(), vocab).unwrap();
            let mut rng = Rng::new(seed);
            let seg = random_partition(s.len(), k, &mut rng.clone()).unwrap();
            let out = reverse_rand(&s, k, &mut rng).unwrap();
            let revs = out.ids.iter().filter(|&&t| t == Vocab::REV).count();
            prop_assert_eq!(revs, seg.len());
            prop_assert_eq!(out.len(), s.len() + seg.len());
            prop_assert!(seg.len() >= s.len().div_ceil(k) && seg.len() <= s.len());
            prop_assert_eq!(sorted(strip_rev(&out.ids)), sorted(ids.clone()));

            let plain = reverse_rand_with(&s, k, false, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(sorted(plain.ids), sorted(ids));
        }

        #[test]
        fn entity_reversal_keeps_entities_intact(
            words in proptest::collection::vec("[a-z]{1,4}", 1..20),
            picks in proptest::collection::vec((0usize..20, 1usize..4), 0..5),
        ) {
            // Entities are runs of whole words, chosen non-overlapping.
            let text = words.join(" ");
            let offsets = word_split_with_offsets(&text);
            let mut taken = vec![false; words.len()];
            let mut ents = Vec::new();
            let mut ent_words = Vec::new();
            for (start, len) in picks {
                let end = (start + len).min(words.len());
                if start >= end || taken[start..end].iter().any(|&t| t) {
                    continue;
                }
                taken[start..end].iter_mut().for_each(|t| *t = true);
                ents.push((offsets[start].start, offsets[end - 1].end));
                ent_words.push(words[start..end].join(" "));
            }
            let out = reverse_entity(&text, &ents).unwrap();
            let padded = format!(" {out} ");
            for e in &ent_words {
                prop_assert!(padded.contains(&format!(" {e} ")), "{e:?} not in {out:?}");
            }
            let mut a: Vec<&str> = out.split(' ').collect();
            let mut b: Vec<&str> = words.iter().map(String::as_str).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}

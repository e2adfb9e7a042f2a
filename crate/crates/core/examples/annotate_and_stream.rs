//! Gazetteer and date annotation feeding a mixed forward/reversed stream.
//!
//! ```text
//! cargo run --example annotate_and_stream
//! ```

use std::sync::Arc;

use reverso::corpus::{build_stream, count_directions, Annotator, DateMode, Document, Gazetteer, StreamConfig};
use reverso::reversal::TransformSpec;
use reverso::textseg::{build_vocab, word_split};

fn main() -> reverso::Result<()> {
    let gazetteer = Gazetteer::from_entries(["Ada Lovelace", "London", "Charles Babbage"]);
    let annotator = Annotator::new(gazetteer).with_dates(DateMode::Components);
    let docs: Vec<Document> = [
        "Ada Lovelace was born on 10 December 1815 in London.",
        "Charles Babbage met Ada Lovelace in London on June 5, 1833.",
        "The Analytical Engine was never completed.",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| annotator.annotate(&Document::new(format!("doc{i}"), *t)))
    .collect();

    for d in &docs {
        let spans: Vec<String> = d.entities.iter().map(|e| format!("{}:{}", e.label, d.entity_text(e))).collect();
        println!("{}  [{}]", d.id, spans.join(", "));
    }

    let vocab = Arc::new(build_vocab(docs.iter().map(|d| word_split(&d.text)))?);
    let cfg = StreamConfig::new(TransformSpec::ENTITY, 3);
    let examples = build_stream(docs.iter(), Arc::clone(&vocab), &cfg)?.collect::<reverso::Result<Vec<_>>>()?;
    for ex in &examples {
        println!("{:>7?}  {}", ex.direction, ex.ids.decode());
    }
    let (fwd, rev) = count_directions(&examples);
    println!("{fwd} forward, {rev} reversed");
    Ok(())
}

//! The four reversal types applied to one sentence.
//!
//! ```text
//! cargo run --example reversal_transforms
//! ```

use std::sync::Arc;

use reverso::reversal::{reverse_entity, reverse_rand, reverse_spans, reverse_token, reverse_word};
use reverso::rng::Rng;
use reverso::textseg::{build_vocab, encode, word_split, Segmentation};

fn main() -> reverso::Result<()> {
    let text = "Cruise was born on July 3, 1962, in Syracuse, New York, to Mary Lee Pfeiffer.";
    let words = word_split(text);
    let vocab = Arc::new(build_vocab([words.clone()])?);
    let seq = encode(&words, &vocab);

    println!("input     {}", seq.decode());
    println!("token     {}", reverse_token(&seq).decode());
    println!("word      {}", reverse_word(text));

    let entities: Vec<(usize, usize)> = ["Cruise", "Syracuse", "New York", "Mary Lee Pfeiffer"]
        .iter()
        .map(|e| {
            let start = text[..text.find(e).unwrap()].chars().count();
            (start, start + e.chars().count())
        })
        .collect();
    println!("entity    {}", reverse_entity(text, &entities)?);

    let fixed = Segmentation::from_lengths(&[2, 1, 6, 4, 7])?;
    println!("rand      {}", reverse_spans(&seq, &fixed, true)?.decode());

    let mut rng = Rng::new(7);
    for k in [2, 3, 5] {
        println!("rand k={k}  {}", reverse_rand(&seq, k, &mut rng)?.decode());
    }
    Ok(())
}

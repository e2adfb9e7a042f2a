//! Exact match, containment within the first 64 tokens and best@N.
//!
//! ```text
//! cargo run --example metrics
//! ```

use reverso::eval::{best_at_n, containment_at_64, exact_match_entity};

fn main() {
    println!("exact [7, 9, 2] vs [7, 9]: {}", exact_match_entity(&[7, 9, 2], &[7, 9]));
    println!("exact [9, 7] vs [7, 9]:    {}", exact_match_entity(&[9, 7], &[7, 9]));

    let answer = "Her mother is Mary Lee Pfeiffer.";
    println!("contain64 short answer:   {}", containment_at_64(answer, "Mary Lee Pfeiffer"));
    let rambling = format!("{} Mary Lee Pfeiffer", vec!["um"; 64].join(" "));
    println!("contain64 after 64 words: {}", containment_at_64(&rambling, "Mary Lee Pfeiffer"));

    let samples = ["I am not sure.", "It might be Mary Smith.", "Mary Lee Pfeiffer, I believe."];
    for n in 1..=samples.len() {
        println!("best@{n}: {}", best_at_n(&samples[..n], "Mary Lee Pfeiffer"));
    }
}

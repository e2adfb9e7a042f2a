//! The symbolic reverse task: entity pairs, forward and backward statements,
//! and the held-out backward test prompts.
//!
//! ```text
//! cargo run --example symbolic_dataset [entity_len] [n_pairs]
//! ```

use reverso::symbolic::{generate, SymbolicConfig};

fn main() -> reverso::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let entity_len = args.next().unwrap_or(3);
    let cfg = SymbolicConfig {
        n_pairs: args.next().unwrap_or(10),
        ..SymbolicConfig::full(entity_len, 1)
    };
    let ds = generate(&cfg)?;
    println!("{} pairs, {} training statements, {} test items", ds.pairs.len(), ds.train.len(), ds.test.len());
    println!("\ntraining statements:");
    for s in ds.train.iter().take(6) {
        println!("  {s}");
    }
    println!("  ...");
    println!("\ntest items:");
    for t in ds.test.iter().take(3) {
        println!("  {:?} -> {:?}", t.prompt, t.target);
    }
    Ok(())
}

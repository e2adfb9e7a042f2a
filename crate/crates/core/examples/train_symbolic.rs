//! Trains a small model on the symbolic task with and without
//! entity-preserving reversal and compares backward test accuracy.
//!
//! ```text
//! cargo run --release --example train_symbolic [n_pairs] [epochs]
//! ```

use std::sync::Arc;

use reverso::corpus::StreamConfig;
use reverso::eval::symbolic_accuracy;
use reverso::lm::{init, train, ModelConfig, StreamData, TrainConfig};
use reverso::reversal::TransformSpec;
use reverso::symbolic::{generate, SymbolicConfig};
use reverso::textseg::{build_vocab, word_split};

fn main() -> reverso::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n_pairs = args.next().unwrap_or(100);
    let epochs = args.next().unwrap_or(100);

    let ds = generate(&SymbolicConfig {
        n_pairs,
        ..SymbolicConfig::full(2, 1)
    })?;
    let docs = ds.train_documents();
    let vocab = Arc::new(build_vocab(docs.iter().map(|d| word_split(&d.text)))?);
    let model = ModelConfig {
        n_layers: 2,
        dim: 64,
        n_heads: 2,
        max_seq: 24,
        vocab_size: vocab.len(),
        dropout: 0.1,
    };
    let tc = TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };

    for spec in [TransformSpec::NONE, TransformSpec::ENTITY] {
        let data = StreamData {
            docs: docs.clone(),
            vocab: Arc::clone(&vocab),
            stream: StreamConfig::new(spec, 1),
        };
        let out = train(init::<f32>(&model, 1)?, &data, &tc, |s| {
            if s.epoch % 20 == 0 {
                println!("  {spec} epoch {:>3} loss {:.3}", s.epoch, s.mean_loss);
            }
        })?;
        let acc = symbolic_accuracy(&out.state, &vocab, &ds.test)?;
        println!("{spec}: backward test accuracy {acc:.1}%");
    }
    Ok(())
}

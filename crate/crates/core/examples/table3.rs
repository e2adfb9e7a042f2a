//! Runs a reduced symbolic-task matrix and prints the accuracy table with
//! the full-scale reference values alongside.
//!
//! ```text
//! cargo run --release --example table3 [n_pairs] [epochs]
//! ```

use reverso::eval::{run_symbolic_experiment, ExperimentMatrix, ModelShape};

fn main() -> reverso::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let mut m = ExperimentMatrix::desk();
    m.n_pairs = args.next().unwrap_or(100);
    m.train.epochs = args.next().unwrap_or(150);
    m.train.batch_size = 32;
    m.seeds = vec![1];
    m.model = ModelShape {
        n_layers: 2,
        dim: 64,
        n_heads: 2,
        dropout: 0.1,
    };
    m.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = run_symbolic_experiment(&m)?;
    print!("{}", report.render_table());
    Ok(())
}

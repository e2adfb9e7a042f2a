//! Compares the hand-written backward pass with central finite differences
//! in double precision.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use reverso::lm::{backward, forward_train, init, lm_loss, lm_loss_and_grad, Batch, ModelConfig};

fn main() -> reverso::Result<()> {
    let cfg = ModelConfig {
        n_layers: 2,
        dim: 16,
        n_heads: 2,
        max_seq: 8,
        vocab_size: 11,
        dropout: 0.0,
    };
    let mut state = init::<f64>(&cfg, 3)?;
    state.params.scale(4.0);
    let batch = Batch::from_sequences(&[vec![1, 5, 7, 9, 2]]);
    let (targets, mask) = batch.targets();

    let loss_at = |s: &reverso::lm::ModelState<f64>| -> reverso::Result<f64> {
        let (logits, _) = forward_train(s, &batch, None)?;
        lm_loss(&logits, &targets, &mask)
    };
    let (logits, cache) = forward_train(&state, &batch, None)?;
    let (_, dlogits) = lm_loss_and_grad(&logits, &targets, &mask)?;
    let grads = backward(&state, &cache, &dlogits);
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, t.iter().copied().collect()))
        .collect();

    let h = 3e-4;
    let mut worst = 0.0f64;
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let mut tensor_worst = 0.0f64;
        let n = g.len();
        for j in (0..n).step_by((n / 5).max(1)) {
            let mut at = |d: f64| -> reverso::Result<f64> {
                *state.params.tensors_mut()[ti].1.iter_mut().nth(j).unwrap() += d;
                let l = loss_at(&state);
                *state.params.tensors_mut()[ti].1.iter_mut().nth(j).unwrap() -= d;
                l
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            // Fourth-order central difference.
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let scale = g[j].abs().max(numeric.abs());
            let err = if scale < 1e-7 { (g[j] - numeric).abs() } else { (g[j] - numeric).abs() / scale };
            tensor_worst = tensor_worst.max(err);
        }
        println!("{name:<24} max rel err {tensor_worst:.2e}");
        worst = worst.max(tensor_worst);
    }
    println!("worst {worst:.2e} ({})", if worst <= 1e-4 { "ok" } else { "FAIL" });
    Ok(())
}

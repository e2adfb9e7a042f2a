use ndarray::ArrayView1;

use super::model::{forward_train, Batch};
use super::params::ModelState;
use super::Scalar;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::textseg::{TokenId, Vocab};

const EVAL_BATCH: usize = 256;

fn argmax<T: Scalar>(row: ArrayView1<T>) -> TokenId {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best as TokenId
}

fn check_room<T: Scalar>(state: &ModelState<T>, prompt_len: usize, max_new: usize) -> Result<()> {
    if prompt_len + max_new > state.config.max_seq {
        return Err(Error::SequenceTooLong {
            len: prompt_len + max_new,
            max_seq: state.config.max_seq,
        });
    }
    if prompt_len == 0 {
        return Err(Error::Config("prompt must not be empty".into()));
    }
    Ok(())
}

/// Extends every sequence by one token chosen by `pick(sequence index, logits)`
/// until EOS or `max_new` tokens. EOS is not appended.
fn decode_loop<T: Scalar>(
    state: &ModelState<T>,
    mut seqs: Vec<Vec<TokenId>>,
    max_new: usize,
    mut pick: impl FnMut(usize, ArrayView1<T>) -> TokenId,
) -> Result<Vec<Vec<TokenId>>> {
    let mut active: Vec<usize> = (0..seqs.len()).collect();
    for _ in 0..max_new {
        if active.is_empty() {
            break;
        }
        let mut still = Vec::with_capacity(active.len());
        for group in active.chunks(EVAL_BATCH) {
            let current: Vec<&[TokenId]> = group.iter().map(|&i| seqs[i].as_slice()).collect();
            let batch = Batch::from_sequences(&current);
            let (logits, _) = forward_train(state, &batch, None)?;
            for (b, &i) in group.iter().enumerate() {
                let last = b * batch.seq + batch.lengths[b] - 1;
                let next = pick(i, logits.row(last));
                if next == Vocab::EOS {
                    continue;
                }
                seqs[i].push(next);
                still.push(i);
            }
        }
        active = still;
    }
    Ok(seqs)
}

/// Argmax decoding; returns `prompt` followed by the generated tokens.
pub fn generate_greedy<T: Scalar>(
    state: &ModelState<T>,
    prompt: &[TokenId],
    max_new: usize,
) -> Result<Vec<TokenId>> {
    let mut out = generate_greedy_batch(state, &[prompt.to_vec()], max_new)?;
    Ok(out.pop().unwrap_or_default())
}

pub fn generate_greedy_batch<T: Scalar>(
    state: &ModelState<T>,
    prompts: &[Vec<TokenId>],
    max_new: usize,
) -> Result<Vec<Vec<TokenId>>> {
    for p in prompts {
        check_room(state, p.len(), max_new)?;
    }
    decode_loop(state, prompts.to_vec(), max_new, |_, row| argmax(row))
}

/// `n_samples` independent ancestral samples at `temperature`; sample `i`
/// draws from its own generator derived from `(seed, i)`.
pub fn sample<T: Scalar>(
    state: &ModelState<T>,
    prompt: &[TokenId],
    max_new: usize,
    temperature: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    if temperature.is_nan() || temperature <= 0.0 || n_samples == 0 {
        return Err(Error::Config("temperature must be > 0 and n_samples >= 1".into()));
    }
    check_room(state, prompt.len(), max_new)?;
    let mut rngs: Vec<Rng> = (0..n_samples)
        .map(|i| Rng::new(derive_seed(seed, i as u64)))
        .collect();
    let mut weights = Vec::new();
    decode_loop(state, vec![prompt.to_vec(); n_samples], max_new, |i, row| {
        let scaled: Vec<f64> = row
            .iter()
            .map(|x| x.to_f64().unwrap_or(f64::NEG_INFINITY) / temperature)
            .collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        weights.clear();
        weights.extend(scaled.iter().map(|x| (x - max).exp()));
        let total: f64 = weights.iter().sum();
        let mut u = rngs[i].next_f64() * total;
        for (tok, &w) in weights.iter().enumerate() {
            if u < w {
                return tok as TokenId;
            }
            u -= w;
        }
        argmax(row)
    })
}

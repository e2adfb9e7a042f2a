use std::sync::Arc;

use super::config::TrainConfig;
use super::model::{backward, forward_train, lm_loss_and_grad, Batch};
use super::optim::{clip_grad_norm, Adam};
use super::params::ModelState;
use super::Scalar;
use crate::corpus::{epoch_examples, Document, StreamConfig};
use crate::error::{Error, Result};
use crate::reversal::TransformedExample;
use crate::rng::{derive_seed, Rng};
use crate::textseg::{TokenId, Vocab};

/// Source of training examples, one fresh list per epoch.
pub trait EpochData {
    fn examples(&self, epoch: usize) -> Result<Vec<TransformedExample>>;
}

/// Documents fed through the mixed-direction stream, re-seeded per epoch.
pub struct StreamData {
    pub docs: Vec<Document>,
    pub vocab: Arc<Vocab>,
    pub stream: StreamConfig,
}

impl EpochData for StreamData {
    fn examples(&self, epoch: usize) -> Result<Vec<TransformedExample>> {
        epoch_examples(&self.docs, &self.vocab, &self.stream, epoch)
    }
}

/// The same examples, in the same order, every epoch.
pub struct FixedExamples(pub Vec<TransformedExample>);

impl EpochData for FixedExamples {
    fn examples(&self, _epoch: usize) -> Result<Vec<TransformedExample>> {
        Ok(self.0.clone())
    }
}

/// `BOS ids EOS`, the form every example is trained on.
pub fn training_sequence(ex: &TransformedExample) -> Vec<TokenId> {
    let mut seq = Vec::with_capacity(ex.ids.len() + 2);
    seq.push(Vocab::BOS);
    seq.extend_from_slice(&ex.ids.ids);
    seq.push(Vocab::EOS);
    seq
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Token-weighted mean loss over the epoch.
    pub mean_loss: f64,
    pub steps: u64,
    pub tokens: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub state: ModelState<T>,
    pub history: Vec<EpochStats>,
}

/// Runs `tc.epochs` further epochs starting at `state.epoch`. Deterministic
/// in `(state, data, tc)`.
pub fn train<T: Scalar>(
    mut state: ModelState<T>,
    data: &dyn EpochData,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    let mut optimizer = state
        .optimizer
        .take()
        .unwrap_or_else(|| Adam::new(&state.config));
    let mut history = Vec::with_capacity(tc.epochs);
    let mut planned_total: Option<u64> = None;
    let first_epoch = state.epoch;

    'epochs: for epoch in first_epoch..first_epoch + tc.epochs {
        let examples = data.examples(epoch)?;
        let seqs: Vec<Vec<TokenId>> = examples.iter().map(training_sequence).collect();
        let batches = seqs.len().div_ceil(tc.batch_size) as u64;
        let total = *planned_total.get_or_insert(state.step + batches * tc.epochs as u64);
        let total = tc.max_steps.map_or(total, |m| m.min(total));

        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        let mut steps = 0u64;
        for chunk in seqs.chunks(tc.batch_size) {
            if tc.max_steps.is_some_and(|m| state.step >= m) {
                break;
            }
            let batch = Batch::from_sequences(chunk);
            let mut rng = Rng::new(derive_seed(tc.seed, state.step));
            let (logits, cache) = forward_train(&state, &batch, Some(&mut rng))?;
            let (targets, mask) = batch.targets();
            let (loss, dlogits) = lm_loss_and_grad(&logits, &targets, &mask)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    epoch,
                    step: state.step,
                });
            }
            let mut grads = backward(&state, &cache, &dlogits);
            if let Some(clip) = tc.grad_clip {
                clip_grad_norm(&mut grads, clip);
            }
            let lr = tc.lr_at(state.step, total);
            optimizer.step(&mut state.params, &grads, lr, tc);
            state.step += 1;
            steps += 1;

            let n = mask.iter().filter(|&&m| m).count();
            loss_sum += loss * n as f64;
            tokens += n;
        }

        if steps > 0 {
            state.epoch = epoch + 1;
            let stats = EpochStats {
                epoch,
                mean_loss: loss_sum / tokens.max(1) as f64,
                steps,
                tokens,
            };
            log::debug!("epoch {epoch}: loss {:.4} over {steps} steps", stats.mean_loss);
            on_epoch(&stats);
            history.push(stats);
        }
        if tc.max_steps.is_some_and(|m| state.step >= m) {
            break 'epochs;
        }
    }

    if !state.params.all_finite() {
        return Err(Error::NonFiniteLoss {
            loss: f64::NAN,
            epoch: state.epoch,
            step: state.step,
        });
    }
    state.optimizer = Some(optimizer);
    Ok(TrainOutcome { state, history })
}

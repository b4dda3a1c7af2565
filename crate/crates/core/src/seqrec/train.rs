//! Cloze-objective training with plain mini-batch SGD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mask_last, tensor, RecModel, SeqRecError};
use crate::linker::EntitySequence;

/// Global gradient-norm clip applied before every SGD step.
pub const GRAD_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean masked-item loss over the prepared sequences before any update.
    pub initial_loss: f32,
    /// Mean training loss per epoch (dropout active).
    pub epoch_losses: Vec<f32>,
    pub sequences_used: usize,
}

/// Drops entries after the last item mention and keeps the most recent
/// `max_len + 1` entries. Returns `None` when fewer than two entries remain.
pub fn prepare_sequence(seq: &EntitySequence, item_count: usize, max_len: usize) -> Option<Vec<usize>> {
    let ids = seq.as_slice();
    let last_item = ids.iter().rposition(|&id| id < item_count)?;
    let ids = &ids[..=last_item];
    let ids = &ids[ids.len().saturating_sub(max_len + 1)..];
    (ids.len() >= 2).then(|| ids.to_vec())
}

/// Trains in place. Deterministic for a fixed `config.seed`: the same stream
/// drives the per-epoch shuffle and the dropout masks.
pub fn train(model: &mut RecModel<f32>, sequences: &[EntitySequence]) -> Result<TrainLog, SeqRecError> {
    let config = model.config.clone();
    config.validate()?;
    let item_count = model.item_count();
    let mask = model.mask_id();
    let examples: Vec<(Vec<usize>, usize)> = sequences
        .iter()
        .filter_map(|s| prepare_sequence(s, item_count, config.max_sequence_length))
        .map(|ids| mask_last(&EntitySequence(ids), item_count, mask))
        .collect::<Result<_, _>>()?;
    if examples.is_empty() {
        return Err(SeqRecError::EmptyTrainingSet);
    }

    let mut initial = 0.0f64;
    for (input, label) in &examples {
        initial += model.loss(input, *label)? as f64;
    }
    let mut log = TrainLog {
        initial_loss: (initial / examples.len() as f64) as f32,
        epoch_losses: Vec::with_capacity(config.epochs),
        sequences_used: examples.len(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let lr = config.learning_rate as f32;
    for _ in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.params.zeros_like();
            for &idx in batch {
                let (input, label) = &examples[idx];
                let trace = model.forward_train(input, &mut rng)?;
                let (loss, dscores) = tensor::cross_entropy(&trace.scores, *label);
                total += loss as f64;
                model.backward_into(&trace, &dscores, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f32);
            let norm = (grads.squared_norm() as f64).sqrt();
            if norm > GRAD_CLIP_NORM {
                grads.scale((GRAD_CLIP_NORM / norm) as f32);
            }
            model.params.add_scaled(-lr, &grads);
        }
        log.epoch_losses.push((total / examples.len() as f64) as f32);
    }
    Ok(log)
}

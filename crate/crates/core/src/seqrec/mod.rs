//! Entity-level sequential recommender.
//!
//! A small bidirectional transformer over entity sequences, trained with a
//! cloze objective: the final item of each sequence is replaced by `[MASK]` and
//! predicted from the rest. At inference `[MASK]` is appended to the dialogue's
//! entity sequence and the top-k item scores form the candidate set.

mod checkpoint;
mod gradcheck;
mod model;
mod params;
pub mod tensor;
mod train;

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntityId, KgTriple};
use crate::linker::EntitySequence;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, numeric_gradient, relative_error, GradCheckReport, GRADIENT_FLOOR};
pub use model::{ForwardTrace, LayerTrace};
pub use params::{gaussian_table, graph_smoothed_init, smooth_with_graph, LayerParams, Params, TensorView, EMBEDDING_INIT_STD};
pub use tensor::{Mat, Scalar};
pub use train::{prepare_sequence, train, TrainLog, GRAD_CLIP_NORM};

#[derive(Debug, thiserror::Error)]
pub enum SeqRecError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token {token} outside vocabulary of {vocab} entities (+ mask)")]
    InvalidToken { token: usize, vocab: usize },
    #[error("input length {len} outside 1..={max}")]
    BadLength { len: usize, max: usize },
    #[error("input must end with the [MASK] token")]
    MissingMask,
    #[error("sequence of length {0} is too short to mask (need at least 2)")]
    SequenceTooShort(usize),
    #[error("final entry {0} is not an item")]
    LabelNotItem(EntityId),
    #[error("no usable training sequences")]
    EmptyTrainingSet,
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint malformed: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_sequence_length: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RecConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            layers: 2,
            heads: 2,
            max_sequence_length: 50,
            dropout: 0.2,
            learning_rate: 5e-3,
            epochs: 30,
            batch_size: 16,
            seed: 42,
        }
    }
}

impl RecConfig {
    pub fn validate(&self) -> Result<(), SeqRecError> {
        let bad = |m: &str| Err(SeqRecError::InvalidConfig(m.to_string()));
        if self.embed_dim == 0 || self.heads == 0 {
            return bad("embed_dim and heads must be positive");
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return bad("embed_dim must be divisible by heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        // Zero is accepted so a run can be a no-op on the weights.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.max_sequence_length == 0 {
            return bad("max_sequence_length must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// The recommender: configuration, vocabulary sizes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RecModel<T = f32> {
    pub config: RecConfig,
    vocab: usize,
    item_count: usize,
    pub params: Params<T>,
}

impl RecModel<f32> {
    /// Fresh model: graph-smoothed entity table seeded from `config.seed`, other
    /// tensors from a stream derived from the same seed.
    pub fn new(config: RecConfig, vocab: usize, item_count: usize, triples: &[KgTriple]) -> Result<Self, SeqRecError> {
        config.validate()?;
        if item_count == 0 || item_count > vocab {
            return Err(SeqRecError::InvalidConfig(format!("item_count {item_count} must be in 1..={vocab}")));
        }
        let mut params = Params::zeros(vocab, item_count, config.embed_dim, config.layers, config.max_sequence_length);
        params.entity = graph_smoothed_init(vocab, config.embed_dim, triples, config.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        params::init_dense(&mut params, &mut rng);
        Ok(Self { config, vocab, item_count, params })
    }
}

impl<T: Scalar> RecModel<T> {
    pub fn from_params(config: RecConfig, params: Params<T>) -> Result<Self, SeqRecError> {
        config.validate()?;
        let vocab = params.entity.rows - 1;
        let item_count = params.head_out.rows;
        let expect = Params::<T>::zeros(vocab, item_count, config.embed_dim, config.layers, config.max_sequence_length);
        let shapes = |p: &Params<T>| p.views().iter().map(|v| v.shape.clone()).collect::<Vec<_>>();
        if shapes(&expect) != shapes(&params) {
            return Err(SeqRecError::InvalidConfig("parameter shapes do not match config".into()));
        }
        Ok(Self { config, vocab, item_count, params })
    }

    /// Number of input entities (items + attributes), excluding `[MASK]`.
    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn mask_id(&self) -> usize {
        self.vocab
    }

    pub fn cast<U: Scalar>(&self) -> RecModel<U> {
        RecModel { config: self.config.clone(), vocab: self.vocab, item_count: self.item_count, params: self.params.cast() }
    }

    fn check_input(&self, input: &[usize]) -> Result<(), SeqRecError> {
        let max = self.config.max_sequence_length + 1;
        if input.is_empty() || input.len() > max {
            return Err(SeqRecError::BadLength { len: input.len(), max });
        }
        if let Some(&token) = input.iter().find(|&&t| t > self.vocab) {
            return Err(SeqRecError::InvalidToken { token, vocab: self.vocab });
        }
        if input.last() != Some(&self.vocab) {
            return Err(SeqRecError::MissingMask);
        }
        Ok(())
    }

    /// Inference-mode forward pass (no dropout). `input` must end with [`Self::mask_id`].
    pub fn forward(&self, input: &[usize]) -> Result<(Vec<T>, ForwardTrace<T>), SeqRecError> {
        self.check_input(input)?;
        let trace = model::forward::<T, ChaCha8Rng>(&self.params, self.config.heads, input, None);
        Ok((trace.scores.clone(), trace))
    }

    /// Training-mode forward pass with dropout drawn from `rng`.
    pub fn forward_train<R: rand::Rng>(&self, input: &[usize], rng: &mut R) -> Result<ForwardTrace<T>, SeqRecError> {
        self.check_input(input)?;
        Ok(model::forward(&self.params, self.config.heads, input, Some((self.config.dropout, rng))))
    }

    /// Cross-entropy loss of predicting `label` at the mask, with its full gradient (inference mode).
    pub fn loss_and_grad(&self, input: &[usize], label: EntityId) -> Result<(T, Params<T>), SeqRecError> {
        let (scores, trace) = self.forward(input)?;
        if label >= self.item_count {
            return Err(SeqRecError::LabelNotItem(label));
        }
        let (loss, dscores) = tensor::cross_entropy(&scores, label);
        let mut grads = self.params.zeros_like();
        model::backward(&self.params, &trace, &dscores, &mut grads);
        Ok((loss, grads))
    }

    pub fn loss(&self, input: &[usize], label: EntityId) -> Result<T, SeqRecError> {
        let (scores, _) = self.forward(input)?;
        if label >= self.item_count {
            return Err(SeqRecError::LabelNotItem(label));
        }
        Ok(tensor::cross_entropy(&scores, label).0)
    }

    pub(crate) fn backward_into(&self, trace: &ForwardTrace<T>, dscores: &[T], grads: &mut Params<T>) {
        model::backward(&self.params, trace, dscores, grads);
    }
}

/// Replaces the final entry with `[MASK]`; returns the masked input and the removed item.
pub fn mask_last(sequence: &EntitySequence, item_count: usize, mask_id: usize) -> Result<(Vec<usize>, EntityId), SeqRecError> {
    let ids = sequence.as_slice();
    if ids.len() < 2 {
        return Err(SeqRecError::SequenceTooShort(ids.len()));
    }
    let label = *ids.last().unwrap();
    if label >= item_count {
        return Err(SeqRecError::LabelNotItem(label));
    }
    let mut input = ids.to_vec();
    *input.last_mut().unwrap() = mask_id;
    Ok((input, label))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub item: EntityId,
    pub score: f32,
}

/// Top-k items by score, descending; ties go to the lower item id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub entries: Vec<Candidate>,
    pub k: usize,
}

impl CandidateSet {
    pub fn from_scores(scores: &[f32], k: usize) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
            Ordering::Equal => a.cmp(&b),
            other => other,
        });
        order.truncate(k);
        Self { entries: order.into_iter().map(|item| Candidate { item, score: scores[item] }).collect(), k }
    }

    /// Candidate set in the given order, scores descending from `ids.len()`.
    pub fn from_ids(ids: &[EntityId]) -> Self {
        let n = ids.len();
        Self {
            entries: ids.iter().enumerate().map(|(i, &item)| Candidate { item, score: (n - i) as f32 }).collect(),
            k: n,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<EntityId> {
        self.entries.iter().map(|c| c.item).collect()
    }

    pub fn contains(&self, item: EntityId) -> bool {
        self.entries.iter().any(|c| c.item == item)
    }
}

/// Appends `[MASK]` to the (most recent `max_sequence_length` entries of the)
/// sequence and returns the top-k items.
pub fn recommend(model: &RecModel<f32>, sequence: &EntitySequence, k: usize) -> Result<CandidateSet, SeqRecError> {
    if k == 0 {
        return Ok(CandidateSet { entries: Vec::new(), k });
    }
    let ids = sequence.as_slice();
    let keep = ids.len().min(model.config.max_sequence_length);
    let mut input = ids[ids.len() - keep..].to_vec();
    input.push(model.mask_id());
    let (scores, _) = model.forward(&input)?;
    Ok(CandidateSet::from_scores(&scores, k))
}

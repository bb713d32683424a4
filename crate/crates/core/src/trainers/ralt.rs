//! Retrieval-augmented generator training: one instance per retrieved chunk,
//! mean next-token cross-entropy on the response, plain SGD.

use crate::error::{Error, Result};
use crate::generator::LogLinearLM;
use crate::linalg::SparseColumnGrad;
use crate::rag::{format_prompt, RagSystem};
use crate::trainers::{epoch_order, TrainConfig, TrainExample, TrainResult};

/// `(prompt, target)` pairs, one per chunk retrieved for `example.query`.
pub fn build_ralt_instances(
    system: &RagSystem,
    example: &TrainExample,
    top_k: usize,
) -> Result<Vec<(String, String)>> {
    if system.store.is_empty() {
        return Err(Error::InvalidConfig(
            "generator training needs a non-empty knowledge store".into(),
        ));
    }
    let retrieved = system.retrieve(&example.query, top_k)?;
    system
        .chunks_for(&retrieved)
        .into_iter()
        .map(|chunk| {
            Ok((
                format_prompt(&system.config, &example.query, &[chunk])?,
                example.response.clone(),
            ))
        })
        .collect()
}

/// One SGD step on a single instance. Returns the loss before the update.
pub fn ralt_step(lm: &mut LogLinearLM, prompt: &str, target: &str, learning_rate: f64) -> f64 {
    let (loss, grad) = lm.cross_entropy_and_grad(prompt, target);
    grad.apply_sgd(lm.weights_mut(), learning_rate);
    loss
}

pub fn train_generator_ralt(
    system: &mut RagSystem,
    dataset: &[TrainExample],
    config: &TrainConfig,
) -> Result<TrainResult> {
    train_generator_ralt_from(system, dataset, config, 0)
}

/// As [`train_generator_ralt`], numbering epochs from `first_epoch` so that
/// split runs reproduce one long run's shuffles.
pub fn train_generator_ralt_from(
    system: &mut RagSystem,
    dataset: &[TrainExample],
    config: &TrainConfig,
    first_epoch: u64,
) -> Result<TrainResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    let top_k = system.config.top_k;
    let mut result = TrainResult::default();
    for epoch in first_epoch..first_epoch + config.epochs as u64 {
        let mut losses = Vec::new();
        let mut batch = Batch::new(system.generator.vocab().len(), system.generator.features());
        for idx in epoch_order(dataset.len(), config.seed, epoch) {
            for (prompt, target) in build_ralt_instances(system, &dataset[idx], top_k)? {
                if config.batch_size == 1 {
                    losses.push(ralt_step(&mut system.generator, &prompt, &target, config.learning_rate));
                } else {
                    let (loss, grad) = system.generator.cross_entropy_and_grad(&prompt, &target);
                    losses.push(loss);
                    batch.push(&grad);
                    if batch.len == config.batch_size {
                        batch.flush(system.generator.weights_mut(), config.learning_rate);
                    }
                }
                result.examples_seen += 1;
            }
        }
        batch.flush(system.generator.weights_mut(), config.learning_rate);
        result
            .losses_per_epoch
            .push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(result)
}

/// Accumulates gradients and applies their mean.
pub(crate) struct Batch {
    grad: SparseColumnGrad,
    len: usize,
}

impl Batch {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        Self {
            grad: SparseColumnGrad::new(rows, cols),
            len: 0,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn push(&mut self, grad: &SparseColumnGrad) {
        self.grad.add_scaled(grad, 1.0);
        self.len += 1;
    }

    pub(crate) fn flush(&mut self, weights: &mut crate::linalg::Matrix, learning_rate: f64) {
        if self.len == 0 {
            return;
        }
        self.grad.scale(1.0 / self.len as f64);
        self.grad.apply_sgd(weights, learning_rate);
        self.grad = SparseColumnGrad::new(self.grad.rows(), self.grad.cols());
        self.len = 0;
    }
}

//! LM-supervised retriever training.
//!
//! Over the top-k retrieved chunks, the retriever distribution is
//! `p_R = softmax(s / tau)` with `s_i = q . e_i`, and the teacher distribution is
//! `p_LM = softmax(l)` with `l_i = log p(response | prompt with chunk i)` under
//! the frozen generator. The loss is `KL(p_LM || p_R)` by default, or
//! `KL(p_R || p_LM)`; only the query encoder receives gradient, so stored chunk
//! embeddings stay valid.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::knowledge_store::RetrievalResult;
use crate::linalg::{log_softmax, SparseColumnGrad};
use crate::rag::{format_prompt, RagSystem};
use crate::trainers::ralt::Batch;
use crate::trainers::{epoch_order, KlDirection, TrainConfig, TrainExample, TrainResult};

/// Loss, gradient and the intermediate distributions of one LSR evaluation.
#[derive(Debug, Clone)]
pub struct LsrStep {
    pub loss: f64,
    /// Gradient with respect to the query-encoder weights (`d x F`).
    pub grad: SparseColumnGrad,
    pub retrieved: Vec<RetrievalResult>,
    pub retriever_probs: Vec<f64>,
    pub lm_probs: Vec<f64>,
}

/// `KL(softmax(lm_log_probs) || softmax(scores / tau))` and its gradient with
/// respect to `scores`: `(p_R - p_LM) / tau`.
pub fn kl_and_score_grad(scores: &[f64], lm_log_probs: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let log_p_r = log_softmax(&scaled);
    let log_p_lm = log_softmax(lm_log_probs);
    let loss: f64 = log_p_lm
        .iter()
        .zip(&log_p_r)
        .map(|(&lt, &lr)| {
            let t = lt.exp();
            if t == 0.0 {
                0.0
            } else {
                t * (lt - lr)
            }
        })
        .sum();
    let grad = log_p_r
        .iter()
        .zip(&log_p_lm)
        .map(|(lr, lt)| (lr.exp() - lt.exp()) / tau)
        .collect();
    (loss.max(0.0), grad)
}

/// `KL(softmax(scores / tau) || softmax(lm_log_probs))` and its gradient with
/// respect to `scores`: `r_i (log r_i - log t_i - KL) / tau`.
pub fn reverse_kl_and_score_grad(scores: &[f64], lm_log_probs: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let log_p_r = log_softmax(&scaled);
    let log_p_lm = log_softmax(lm_log_probs);
    let loss: f64 = log_p_r
        .iter()
        .zip(&log_p_lm)
        .map(|(&lr, &lt)| lr.exp() * (lr - lt))
        .sum();
    let grad = log_p_r
        .iter()
        .zip(&log_p_lm)
        .map(|(&lr, &lt)| lr.exp() * (lr - lt - loss) / tau)
        .collect();
    (loss.max(0.0), grad)
}

impl KlDirection {
    pub fn loss_and_score_grad(self, scores: &[f64], lm_log_probs: &[f64], tau: f64) -> (f64, Vec<f64>) {
        match self {
            KlDirection::LmToRetriever => kl_and_score_grad(scores, lm_log_probs, tau),
            KlDirection::RetrieverToLm => reverse_kl_and_score_grad(scores, lm_log_probs, tau),
        }
    }
}

pub fn lsr_loss_and_grad(
    system: &RagSystem,
    example: &TrainExample,
    top_k: usize,
    tau: f64,
    kl: KlDirection,
) -> Result<LsrStep> {
    let features = system.retriever.query_features(&example.query);
    let query = system.retriever.query_encoder().encode_features(&features);
    let retrieved = system.store.top_k(&query, top_k)?;
    if retrieved.len() < 2 {
        return Err(Error::DegenerateRetrieval {
            retrieved: retrieved.len(),
        });
    }
    let chunks = system.chunks_for(&retrieved);
    let prompts = chunks
        .iter()
        .map(|c| format_prompt(&system.config, &example.query, &[*c]))
        .collect::<Result<Vec<_>>>()?;
    let lm_log_probs = Execution::default().map(&prompts, |p| {
        system.generator.sequence_log_prob(p, &example.response)
    });
    let scores: Vec<f64> = retrieved.iter().map(|r| r.score).collect();
    let (loss, score_grad) = kl.loss_and_score_grad(&scores, &lm_log_probs, tau);

    // d loss / d W_q = sum_i g_i e_i phi(q)^T
    let mut direction = vec![0.0; system.retriever.dim()];
    for (g, chunk) in score_grad.iter().zip(&chunks) {
        for (acc, &e) in direction.iter_mut().zip(&chunk.embedding) {
            *acc += g * f64::from(e);
        }
    }
    let mut grad = SparseColumnGrad::new(system.retriever.dim(), system.retriever.features());
    grad.add_outer(&direction, &features, 1.0);

    let tau_scores: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    Ok(LsrStep {
        loss,
        grad,
        retrieved,
        retriever_probs: log_softmax(&tau_scores).into_iter().map(f64::exp).collect(),
        lm_probs: log_softmax(&lm_log_probs).into_iter().map(f64::exp).collect(),
    })
}

pub fn train_retriever_lsr(
    system: &mut RagSystem,
    dataset: &[TrainExample],
    config: &TrainConfig,
) -> Result<TrainResult> {
    train_retriever_lsr_from(system, dataset, config, 0)
}

/// As [`train_retriever_lsr`] with epochs numbered from `first_epoch`.
/// Retrieval is redone for every example with the current query encoder.
pub fn train_retriever_lsr_from(
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
        let mut batch = Batch::new(system.retriever.dim(), system.retriever.features());
        for idx in epoch_order(dataset.len(), config.seed, epoch) {
            let step = match lsr_loss_and_grad(system, &dataset[idx], top_k, config.lsr_tau, config.lsr_kl) {
                Ok(step) => step,
                Err(Error::DegenerateRetrieval { .. }) => {
                    result.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            losses.push(step.loss);
            batch.push(&step.grad);
            if batch.len() == config.batch_size {
                batch.flush(system.retriever.query_encoder_mut().weights_mut(), config.learning_rate);
            }
            result.examples_seen += 1;
        }
        batch.flush(system.retriever.query_encoder_mut().weights_mut(), config.learning_rate);
        if losses.is_empty() {
            return Err(Error::DegenerateRetrieval {
                retrieved: top_k.min(system.store.len()),
            });
        }
        result
            .losses_per_epoch
            .push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(result)
}

//! Generator (retrieval-augmented) and retriever (LM-supervised) fine-tuning,
//! plus the manager that trains one model while holding the other fixed.

mod lsr;
mod manager;
mod ralt;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use lsr::{kl_and_score_grad, lsr_loss_and_grad, reverse_kl_and_score_grad, train_retriever_lsr, train_retriever_lsr_from, LsrStep};
pub use manager::{LsrTrainer, RaltTrainer, TrainerManager};
pub use ralt::{build_ralt_instances, ralt_step, train_generator_ralt, train_generator_ralt_from};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    pub query: String,
    pub response: String,
}

impl TrainExample {
    pub fn new(query: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            response: response.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lsr_tau: f64,
    #[serde(default)]
    pub lsr_kl: KlDirection,
}

/// Which way round the LSR divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p_LM || p_R)`: the generator's preferences are the target.
    #[default]
    LmToRetriever,
    /// `KL(p_R || p_LM)`.
    RetrieverToLm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 1,
            seed: 0,
            lsr_tau: 1.0,
            lsr_kl: KlDirection::LmToRetriever,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !positive(self.lsr_tau) {
            return Err(Error::InvalidConfig(format!(
                "lsr_tau must be positive, got {}",
                self.lsr_tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainResult {
    /// Mean pre-update loss of each epoch.
    pub losses_per_epoch: Vec<f64>,
    /// Generator training counts instances (one per retrieved chunk), retriever
    /// training counts examples that were not skipped.
    pub examples_seen: usize,
    /// Examples skipped because fewer than two chunks were retrieved.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Retriever,
    Generator,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Retriever => "retriever",
            TrainMode::Generator => "generator",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retriever" => Ok(TrainMode::Retriever),
            "generator" => Ok(TrainMode::Generator),
            other => Err(Error::InvalidConfig(format!("unknown training mode {other:?}"))),
        }
    }
}

/// Dataset order for `epoch`: a Fisher-Yates shuffle driven by `splitmix64(seed + epoch)`.
pub(crate) fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    SplitMix64::new(seed.wrapping_add(epoch)).shuffle(&mut order);
    order
}

/// Reads a JSONL file of `{"query": ..., "response": ...}` lines.
pub fn load_train_dataset(path: &Path) -> Result<Vec<TrainExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example: TrainExample = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if example.query.is_empty() {
            return Err(Error::Schema {
                line: lineno + 1,
                message: "query must be non-empty".into(),
            });
        }
        examples.push(example);
    }
    Ok(examples)
}

use crate::error::{Error, Result};
use crate::fl::ModelParameters;
use crate::rag::RagSystem;
use crate::trainers::{
    LsrTrainer, RaltTrainer, TrainConfig, TrainExample, TrainMode, TrainResult, TrainerManager,
};

/// What a federated run trains: which model, with which local configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlTask {
    pub role: TrainMode,
    pub train_config: TrainConfig,
}

pub fn get_federated_task(manager: &TrainerManager) -> Result<FlTask> {
    manager.get_federated_task()
}

impl FlTask {
    /// Name prefix of the tensors exchanged for this role.
    pub fn tensor_prefix(&self) -> &'static str {
        match self.role {
            TrainMode::Retriever => "retriever.",
            TrainMode::Generator => "generator.",
        }
    }

    pub fn parameters(&self, system: &RagSystem) -> ModelParameters {
        match self.role {
            TrainMode::Retriever => system.retriever.parameters(),
            TrainMode::Generator => system.generator.parameters(),
        }
    }

    pub fn load_parameters(&self, system: &mut RagSystem, params: &ModelParameters) -> Result<()> {
        match self.role {
            TrainMode::Retriever => system.retriever.load_parameters(params),
            TrainMode::Generator => system.generator.load_parameters(params),
        }
    }

    /// Checks that `params` holds exactly this role's tensors.
    pub fn check_parameters(&self, params: &ModelParameters) -> Result<()> {
        let prefix = self.tensor_prefix();
        if params.is_empty() {
            return Err(Error::ShapeMismatch(format!("no {prefix}* tensors")));
        }
        if let Some(stray) = params.names().find(|n| !n.starts_with(prefix)) {
            return Err(Error::ShapeMismatch(format!(
                "tensor {stray} does not belong to the {} role",
                self.role
            )));
        }
        Ok(())
    }

    /// Local training for `round` (1-based). Epochs are numbered globally,
    /// `(round - 1) * epochs ..`, so a single client reproduces centralized
    /// training exactly. An empty dataset leaves the model unchanged.
    pub fn train_local(
        &self,
        system: &mut RagSystem,
        dataset: &[TrainExample],
        round: u64,
    ) -> Result<TrainResult> {
        if dataset.is_empty() {
            return Ok(TrainResult::default());
        }
        let config = self.train_config.clone();
        let dataset = dataset.to_vec();
        let manager = match self.role {
            TrainMode::Retriever => TrainerManager::retriever(LsrTrainer { config, dataset }),
            TrainMode::Generator => TrainerManager::generator(RaltTrainer { config, dataset }),
        };
        let first_epoch = round.saturating_sub(1) * self.train_config.epochs as u64;
        manager.train_from_epoch(system, first_epoch)
    }
}

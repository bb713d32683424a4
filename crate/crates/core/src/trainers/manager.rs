use crate::error::{Error, Result};
use crate::fl::FlTask;
use crate::rag::RagSystem;
use crate::trainers::{
    train_generator_ralt_from, train_retriever_lsr_from, TrainConfig, TrainExample, TrainMode,
    TrainResult,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RaltTrainer {
    pub config: TrainConfig,
    pub dataset: Vec<TrainExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsrTrainer {
    pub config: TrainConfig,
    pub dataset: Vec<TrainExample>,
}

/// Trains the model selected by `mode` and checks that the other one is untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerManager {
    pub mode: TrainMode,
    pub retriever_trainer: Option<LsrTrainer>,
    pub generator_trainer: Option<RaltTrainer>,
}

impl TrainerManager {
    pub fn retriever(trainer: LsrTrainer) -> Self {
        Self {
            mode: TrainMode::Retriever,
            retriever_trainer: Some(trainer),
            generator_trainer: None,
        }
    }

    pub fn generator(trainer: RaltTrainer) -> Self {
        Self {
            mode: TrainMode::Generator,
            retriever_trainer: None,
            generator_trainer: Some(trainer),
        }
    }

    pub fn active_config(&self) -> Result<&TrainConfig> {
        match self.mode {
            TrainMode::Retriever => self.retriever_trainer.as_ref().map(|t| &t.config),
            TrainMode::Generator => self.generator_trainer.as_ref().map(|t| &t.config),
        }
        .ok_or(Error::MissingTrainer(self.mode))
    }

    pub fn train(&self, system: &mut RagSystem) -> Result<TrainResult> {
        self.train_from_epoch(system, 0)
    }

    pub fn train_from_epoch(&self, system: &mut RagSystem, first_epoch: u64) -> Result<TrainResult> {
        match self.mode {
            TrainMode::Retriever => {
                let trainer = self
                    .retriever_trainer
                    .as_ref()
                    .ok_or(Error::MissingTrainer(self.mode))?;
                let frozen = (
                    system.generator.checksum(),
                    system.retriever.context_encoder().weights().checksum(),
                );
                let result =
                    train_retriever_lsr_from(system, &trainer.dataset, &trainer.config, first_epoch)?;
                if system.generator.checksum() != frozen.0 {
                    return Err(Error::FreezeViolation("generator"));
                }
                if system.retriever.context_encoder().weights().checksum() != frozen.1 {
                    return Err(Error::FreezeViolation("context encoder"));
                }
                Ok(result)
            }
            TrainMode::Generator => {
                let trainer = self
                    .generator_trainer
                    .as_ref()
                    .ok_or(Error::MissingTrainer(self.mode))?;
                let frozen = system.retriever.checksum();
                let result =
                    train_generator_ralt_from(system, &trainer.dataset, &trainer.config, first_epoch)?;
                if system.retriever.checksum() != frozen {
                    return Err(Error::FreezeViolation("retriever"));
                }
                Ok(result)
            }
        }
    }

    pub fn get_federated_task(&self) -> Result<FlTask> {
        Ok(FlTask {
            role: self.mode,
            train_config: self.active_config()?.clone(),
        })
    }
}

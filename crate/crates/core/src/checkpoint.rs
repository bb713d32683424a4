//! Model checkpoints: `params.bin` (one framed PARAMS message holding every
//! tensor) plus `vocab.json` (the generator's ordered token list).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fl::wire::{decode_frame, encode_frame, FlMessage};
use crate::fl::ModelParameters;
use crate::generator::{LogLinearLM, Vocab};
use crate::knowledge_store::KnowledgeStore;
use crate::rag::{RagConfig, RagSystem};
use crate::retriever::RetrieverModel;

pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub vocab: Vocab,
}

impl Checkpoint {
    pub fn from_models(retriever: &RetrieverModel, generator: &LogLinearLM) -> Self {
        let mut params = retriever.parameters();
        params.merge(generator.parameters());
        Self {
            params,
            vocab: generator.vocab().clone(),
        }
    }

    pub fn of(system: &RagSystem) -> Self {
        Self::from_models(&system.retriever, &system.generator)
    }

    pub fn models(&self) -> Result<(RetrieverModel, LogLinearLM)> {
        let retriever = RetrieverModel::from_parameters(&self.params)?;
        let generator = LogLinearLM::from_parameters(self.vocab.clone(), &self.params)?;
        if generator.features() != retriever.features() {
            return Err(Error::ShapeMismatch(format!(
                "retriever uses {} features, generator {}",
                retriever.features(),
                generator.features()
            )));
        }
        Ok((retriever, generator))
    }

    pub fn into_system(self, config: RagConfig, store: KnowledgeStore) -> Result<RagSystem> {
        let (retriever, generator) = self.models()?;
        RagSystem::new(config, store, retriever, generator)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_params(&dir.join(PARAMS_FILE), &self.params)?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            params: read_params(&dir.join(PARAMS_FILE))?,
            vocab: Vocab::load(&dir.join(VOCAB_FILE))?,
        })
    }
}

pub fn write_params(path: &Path, params: &ModelParameters) -> Result<()> {
    let frame = encode_frame(&FlMessage::Params {
        round: 0,
        tensors: params.clone(),
    })?;
    fs::write(path, frame)?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<ModelParameters> {
    match decode_frame(&fs::read(path)?)? {
        FlMessage::Params { tensors, .. } | FlMessage::Done { tensors } => Ok(tensors),
        other => Err(Error::Format(format!(
            "{} holds a {} message, expected params",
            path.display(),
            other.kind()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let retriever = RetrieverModel::init(3, 16, 2);
        let generator = LogLinearLM::zeros(Vocab::build(&["a b c"], 8), 16);
        let ckpt = Checkpoint::from_models(&retriever, &generator);
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert!(back.params.bit_identical(&ckpt.params));
        let (r, g) = back.models().unwrap();
        assert_eq!(r, retriever);
        assert_eq!(g, generator);
    }

    #[test]
    fn rejects_mismatched_features() {
        let retriever = RetrieverModel::init(3, 16, 2);
        let generator = LogLinearLM::zeros(Vocab::build(&["a"], 8), 8);
        assert!(Checkpoint::from_models(&retriever, &generator).models().is_err());
    }
}

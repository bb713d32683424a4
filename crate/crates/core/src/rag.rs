//! The RAG system: retrieve, format, generate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GenerationConfig, LogLinearLM};
use crate::knowledge_store::{KnowledgeChunk, KnowledgeStore, Passage, RetrievalResult};
use crate::retriever::RetrieverModel;

const CONTEXT_SLOT: &str = "{context}";
const QUERY_SLOT: &str = "{query}";

/// Mirrors `rag.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagConfig {
    pub top_k: usize,
    #[serde(default = "default_separator")]
    pub context_separator: String,
    #[serde(default = "default_template")]
    pub prompt_template: String,
    #[serde(default)]
    pub max_context_chars: Option<usize>,
}

fn default_separator() -> String {
    "\n".into()
}

fn default_template() -> String {
    "{context}\n\n{query}".into()
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            top_k: 2,
            context_separator: default_separator(),
            prompt_template: default_template(),
            max_context_chars: None,
        }
    }
}

impl RagConfig {
    pub fn with_top_k(top_k: usize) -> Self {
        Self {
            top_k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.max_context_chars == Some(0) {
            return Err(Error::InvalidConfig("max_context_chars must be positive".into()));
        }
        for slot in [CONTEXT_SLOT, QUERY_SLOT] {
            let n = self.prompt_template.matches(slot).count();
            if n != 1 {
                return Err(Error::Template(format!(
                    "template must contain {slot} exactly once, found {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

/// Joins the chunks' context texts, truncates to `max_context_chars` characters
/// and substitutes context and query into the template.
pub fn format_prompt<P: Passage>(config: &RagConfig, query: &str, chunks: &[&P]) -> Result<String> {
    let template = &config.prompt_template;
    let (context_at, query_at) = match (template.find(CONTEXT_SLOT), template.find(QUERY_SLOT)) {
        (Some(c), Some(q))
            if template.matches(CONTEXT_SLOT).count() == 1
                && template.matches(QUERY_SLOT).count() == 1 =>
        {
            (c, q)
        }
        _ => {
            return Err(Error::Template(format!(
                "template must contain {CONTEXT_SLOT} and {QUERY_SLOT} exactly once"
            )))
        }
    };
    let mut context = chunks
        .iter()
        .map(|c| c.context_text())
        .collect::<Vec<_>>()
        .join(&config.context_separator);
    if let Some(limit) = config.max_context_chars {
        if let Some((cut, _)) = context.char_indices().nth(limit) {
            context.truncate(cut);
        }
    }
    // Slot positions are taken from the template only, so placeholder text
    // inside the context or query is never substituted.
    let mut slots = [(context_at, CONTEXT_SLOT, context.as_str()), (query_at, QUERY_SLOT, query)];
    slots.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(template.len() + context.len() + query.len());
    let mut cursor = 0;
    for (at, slot, value) in slots {
        out.push_str(&template[cursor..at]);
        out.push_str(value);
        cursor = at + slot.len();
    }
    out.push_str(&template[cursor..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagResponse {
    pub text: String,
    pub retrieved: Vec<RetrievalResult>,
    pub prompt: String,
}

#[derive(Debug, Clone)]
pub struct RagSystem {
    pub config: RagConfig,
    pub store: KnowledgeStore,
    pub retriever: RetrieverModel,
    pub generator: LogLinearLM,
}

impl RagSystem {
    pub fn new(
        config: RagConfig,
        store: KnowledgeStore,
        retriever: RetrieverModel,
        generator: LogLinearLM,
    ) -> Result<Self> {
        config.validate()?;
        if store.dim() != retriever.dim() {
            return Err(Error::DimensionMismatch {
                expected: store.dim(),
                actual: retriever.dim(),
            });
        }
        Ok(Self {
            config,
            store,
            retriever,
            generator,
        })
    }

    /// Top `k` chunks for `query` under the current query encoder.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult>> {
        self.store.top_k(&self.retriever.encode_query(query), k)
    }

    pub fn chunks_for(&self, results: &[RetrievalResult]) -> Vec<&KnowledgeChunk> {
        results
            .iter()
            .map(|r| self.store.get(&r.chunk_id).expect("retrieved id is in the store"))
            .collect()
    }

    pub fn query(&self, query: &str, generation: &GenerationConfig) -> Result<RagResponse> {
        let retrieved = self.retrieve(query, self.config.top_k)?;
        let prompt = format_prompt(&self.config, query, &self.chunks_for(&retrieved))?;
        let text = self.generator.generate(&prompt, generation);
        Ok(RagResponse {
            text,
            retrieved,
            prompt,
        })
    }
}

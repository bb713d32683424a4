//! Synthetic fact worlds shared by the integration and acceptance suites.
#![allow(dead_code)]

use ragkit::evals::BenchmarkExample;
use ragkit::generator::{LogLinearLM, Vocab};
use ragkit::knowledge_store::{CorpusRecord, KnowledgeStore, Passage};
use ragkit::linalg::Matrix;
use ragkit::rag::{RagConfig, RagSystem};
use ragkit::retriever::{LinearEncoder, RetrieverModel};
use ragkit::rng::SplitMix64;
use ragkit::trainers::{ralt_step, TrainExample};

pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "purple", "orange", "white", "black"];
pub const METALS: [&str; 8] = ["gold", "silver", "iron", "copper", "tin", "zinc", "lead", "nickel"];
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "nu", "ra", "se", "ti", "vo", "zu", "be", "do", "fa", "gi", "ho", "ju", "pe",
];

/// Distinct pseudo-words of three syllables.
pub fn names(count: usize, rng: &mut SplitMix64) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let name: String = (0..3)
            .map(|_| SYLLABLES[rng.next_below(SYLLABLES.len() as u64) as usize])
            .collect();
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

pub struct Fact {
    pub entity: String,
    pub attribute: &'static str,
    pub value: String,
}

impl Fact {
    pub fn chunk_id(&self) -> String {
        format!("{}-{}", self.entity, self.attribute)
    }

    pub fn record(&self) -> CorpusRecord {
        CorpusRecord::new(
            self.chunk_id(),
            self.entity.clone(),
            self.attribute,
            self.value.clone(),
        )
    }

    pub fn question(&self) -> String {
        format!("what is the {} of {}?", self.attribute, self.entity)
    }

    pub fn train_example(&self) -> TrainExample {
        TrainExample::new(self.question(), self.value.clone())
    }

    pub fn benchmark_example(&self) -> BenchmarkExample {
        BenchmarkExample { query: self.question(), response: self.value.clone(), choices: None }
    }
}

/// 100 entities with a color and a metal each: 200 fact chunks, 100 training
/// pairs (both facts of entities 0..50) and 50 held-out pairs (one fact of
/// each entity 50..100).
pub struct FactWorld {
    pub facts: Vec<Fact>,
    pub train: Vec<TrainExample>,
    pub heldout: Vec<BenchmarkExample>,
}

pub fn fact_world(seed: u64) -> FactWorld {
    let mut rng = SplitMix64::new(seed);
    let entities = names(100, &mut rng);
    let mut facts = Vec::new();
    for e in &entities {
        facts.push(Fact { entity: e.clone(), attribute: "color", value: COLORS[rng.next_below(8) as usize].into() });
        facts.push(Fact { entity: e.clone(), attribute: "metal", value: METALS[rng.next_below(8) as usize].into() });
    }
    let train = facts[..100].iter().map(Fact::train_example).collect();
    let heldout = (50..100).map(|i| facts[2 * i + (i % 2)].benchmark_example()).collect();
    FactWorld { facts, train, heldout }
}

fn identity(features: usize) -> Matrix {
    let mut m = Matrix::zeros(features, features);
    for i in 0..features {
        m.set(i, i, 1.0);
    }
    m
}

/// Query and context encoders both equal to the identity over hashed features,
/// so scores are token-overlap counts.
pub fn overlap_retriever(features: usize) -> RetrieverModel {
    RetrieverModel::new(
        LinearEncoder::from_weights(identity(features)),
        LinearEncoder::from_weights(identity(features)),
    )
    .unwrap()
}

pub fn build_system(records: Vec<CorpusRecord>, retriever: RetrieverModel, generator: LogLinearLM, top_k: usize) -> RagSystem {
    let mut store = KnowledgeStore::new(retriever.dim());
    store.add_chunks(retriever.embed_records(records)).unwrap();
    RagSystem::new(RagConfig::with_top_k(top_k), store, retriever, generator).unwrap()
}

/// Plain language-model pretraining on the raw chunk texts (empty prompt).
pub fn pretrain_on_corpus(lm: &mut LogLinearLM, records: &[CorpusRecord], epochs: usize, lr: f64) {
    for _ in 0..epochs {
        for r in records {
            ralt_step(lm, "", &r.context_text(), lr);
        }
    }
}

pub fn fresh_generator(records: &[CorpusRecord], features: usize) -> LogLinearLM {
    let texts: Vec<String> = records.iter().map(|r| r.context_text()).collect();
    LogLinearLM::zeros(Vocab::build(&texts, 1024), features)
}

/// Answer words shared by every code world, so a generator taught to copy in
/// one world can copy in another.
pub fn code_words(count: usize) -> Vec<String> {
    names(count, &mut SplitMix64::new(0xC0DE))
        .into_iter()
        .map(|n| format!("{n}x"))
        .collect()
}

/// One chunk per entity, each holding a distinct code word: the only chunk
/// that contains the answer to its question.
pub struct CodeWorld {
    pub records: Vec<CorpusRecord>,
    pub train: Vec<TrainExample>,
    /// Correct chunk id per training example.
    pub gold: Vec<String>,
}

pub fn code_world(codes: &[String], seed: u64) -> CodeWorld {
    let mut rng = SplitMix64::new(seed);
    let entities = names(codes.len(), &mut rng);
    let mut codes = codes.to_vec();
    rng.shuffle(&mut codes);
    let mut records = Vec::new();
    let mut train = Vec::new();
    let mut gold = Vec::new();
    for (e, code) in entities.iter().zip(&codes) {
        let id = format!("code-{e}");
        records.push(CorpusRecord::new(id.clone(), e.clone(), "code", code.clone()));
        train.push(TrainExample::new(format!("what is the code of {e}?"), code.clone()));
        gold.push(id);
    }
    CodeWorld { records, train, gold }
}

/// Mean reciprocal rank of each example's gold chunk under full retrieval.
pub fn mean_reciprocal_rank(system: &RagSystem, examples: &[TrainExample], gold: &[String]) -> f64 {
    let n = system.store.len();
    let total: f64 = examples
        .iter()
        .zip(gold)
        .map(|(ex, g)| {
            let ranking = system.retrieve(&ex.query, n).unwrap();
            let rank = ranking.iter().position(|r| &r.chunk_id == g).unwrap() + 1;
            1.0 / rank as f64
        })
        .sum();
    total / examples.len() as f64
}

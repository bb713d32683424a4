//! Sequential vs parallel execution of the data-parallel loops.
//!
//! Run with `cargo bench`; build with `--no-default-features` to check that
//! the parallel variants fall back to sequential code.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ragkit::evals::{run_benchmark_with, Aggregation, BenchmarkExample, ExactMatch};
use ragkit::exec::Execution;
use ragkit::fl::{fedavg_with, ClientUpdate, ModelParameters, Tensor};
use ragkit::generator::{LogLinearLM, Vocab};
use ragkit::knowledge_store::{CorpusRecord, KnowledgeStore};
use ragkit::rag::{RagConfig, RagSystem};
use ragkit::retriever::RetrieverModel;
use ragkit::rng::SplitMix64;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn records(n: usize, rng: &mut SplitMix64) -> Vec<CorpusRecord> {
    const WORDS: [&str; 12] = [
        "river", "stone", "north", "copper", "valley", "ember", "harbor", "signal", "lantern",
        "orchid", "meadow", "forge",
    ];
    (0..n)
        .map(|i| {
            let text: Vec<&str> = (0..40)
                .map(|_| WORDS[rng.next_below(WORDS.len() as u64) as usize])
                .collect();
            CorpusRecord::new(format!("doc-{i:06}"), format!("title {i}"), "", text.join(" "))
        })
        .collect()
}

fn bench_top_k(c: &mut Criterion) {
    let mut rng = SplitMix64::new(1);
    let retriever = RetrieverModel::init(64, 4096, 1);
    let mut store = KnowledgeStore::new(64);
    store
        .add_chunks(retriever.embed_records(records(50_000, &mut rng)))
        .unwrap();
    let query = retriever.encode_query("copper harbor lantern");
    let mut group = c.benchmark_group("top_k/50k_chunks");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| store.top_k_with(black_box(&query), 10, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_embed(c: &mut Criterion) {
    let mut rng = SplitMix64::new(2);
    let retriever = RetrieverModel::init(64, 4096, 2);
    let corpus = records(5_000, &mut rng);
    let mut group = c.benchmark_group("embed_records/5k");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| retriever.embed_records_with(black_box(corpus.clone()), exec))
        });
    }
    group.finish();
}

fn bench_benchmark(c: &mut Criterion) {
    let mut rng = SplitMix64::new(3);
    let corpus = records(2_000, &mut rng);
    let texts: Vec<String> = corpus.iter().map(|r| r.text.clone()).collect();
    let retriever = RetrieverModel::init(32, 2048, 3);
    let mut store = KnowledgeStore::new(32);
    store.add_chunks(retriever.embed_records(corpus)).unwrap();
    let generator = LogLinearLM::zeros(Vocab::build(&texts, 64), 2048);
    let system = RagSystem::new(RagConfig::with_top_k(2), store, retriever, generator).unwrap();
    let examples: Vec<BenchmarkExample> = (0..512)
        .map(|i| BenchmarkExample {
            query: format!("where is the {} signal {i}?", texts[i % texts.len()].split(' ').next().unwrap()),
            response: "harbor".into(),
            choices: None,
        })
        .collect();
    let mut group = c.benchmark_group("run_benchmark/512_examples");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                run_benchmark_with(
                    &system,
                    examples.iter().cloned().map(Ok),
                    &ExactMatch,
                    None,
                    Aggregation::Avg,
                    "",
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_fedavg(c: &mut Criterion) {
    let mut rng = SplitMix64::new(4);
    let mut group = c.benchmark_group("fedavg");
    group.sample_size(20);
    for clients in [2usize, 8] {
        let updates: Vec<ClientUpdate> = (0..clients)
            .map(|i| {
                let mut params = ModelParameters::new();
                for t in 0..4 {
                    let values = (0..250_000).map(|_| rng.next_f64() as f32).collect();
                    params
                        .insert(format!("t{t}"), Tensor::new(vec![500, 500], values).unwrap())
                        .unwrap();
                }
                ClientUpdate {
                    client_id: format!("c{i}"),
                    round: 1,
                    params,
                    num_examples: 10 + i as u64,
                }
            })
            .collect();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, clients), &updates, |b, u| {
                b.iter(|| fedavg_with(black_box(u), exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_top_k, bench_embed, bench_benchmark, bench_fedavg);
criterion_main!(benches);

//! Benchmarks: JSONL loading (streaming or eager), few-shot prefixes, exact
//! match, aggregation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::generator::GenerationConfig;
use crate::rag::RagSystem;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkExample {
    pub query: String,
    pub response: String,
    #[serde(default)]
    pub choices: Option<Vec<String>>,
}

impl BenchmarkExample {
    /// The query as presented to the system: with choices, one
    /// `"\n(A) choice"` line per option is appended.
    pub fn prompt_query(&self) -> String {
        let mut q = self.query.clone();
        for (i, choice) in self.choices.iter().flatten().enumerate() {
            q.push_str(&format!("\n({}) {choice}", (b'A' + i as u8) as char));
        }
        q
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.response.is_empty() {
            return Err("response must be non-empty".into());
        }
        if let Some(choices) = &self.choices {
            if choices.len() > 26 {
                return Err(format!("{} choices, at most 26 supported", choices.len()));
            }
            if !choices.contains(&self.response) {
                return Err(format!("response {:?} is not among the choices", self.response));
            }
        }
        Ok(())
    }
}

/// Scores one prediction against a gold answer, in `[0, 1]`.
pub trait EvaluationMetric: Sync {
    fn name(&self) -> &str;
    fn score(&self, prediction: &str, gold: &str) -> f64;
}

/// 1.0 iff both strings agree after lowercasing, trimming and collapsing
/// whitespace runs. Punctuation is significant.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.chars().flat_map(char::to_lowercase).collect::<String>())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    if normalize(prediction) == normalize(gold) {
        1.0
    } else {
        0.0
    }
}

impl EvaluationMetric for ExactMatch {
    fn name(&self) -> &str {
        "exact_match"
    }

    fn score(&self, prediction: &str, gold: &str) -> f64 {
        exact_match(prediction, gold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Avg,
    Sum,
    Max,
}

impl Aggregation {
    /// Empty input aggregates to 0.0 in every mode.
    pub fn apply(self, scores: &[f64]) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        match self {
            Aggregation::Avg => scores.iter().sum::<f64>() / scores.len() as f64,
            Aggregation::Sum => scores.iter().sum(),
            Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Avg => "avg",
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Aggregation::Avg),
            "sum" => Ok(Aggregation::Sum),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::InvalidConfig(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub per_example_scores: Vec<f64>,
    pub aggregate: f64,
    pub num_examples: usize,
    pub agg_mode: String,
}

fn parse_line(line: &str, lineno: usize) -> Result<BenchmarkExample> {
    let example: BenchmarkExample = serde_json::from_str(line).map_err(|e| Error::Schema {
        line: lineno,
        message: e.to_string(),
    })?;
    example.validate().map_err(|message| Error::Schema {
        line: lineno,
        message,
    })?;
    Ok(example)
}

/// Lazily parsed benchmark lines. Blank lines are skipped.
pub struct StreamingBenchmark {
    lines: Lines<BufReader<File>>,
    lineno: usize,
}

impl Iterator for StreamingBenchmark {
    type Item = Result<BenchmarkExample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.lineno += 1;
            match line {
                Err(e) => return Some(Err(e.into())),
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => return Some(parse_line(&l, self.lineno)),
            }
        }
    }
}

pub enum BenchmarkSource {
    Streaming(StreamingBenchmark),
    Eager(std::vec::IntoIter<Result<BenchmarkExample>>),
}

impl Iterator for BenchmarkSource {
    type Item = Result<BenchmarkExample>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            BenchmarkSource::Streaming(s) => s.next(),
            BenchmarkSource::Eager(e) => e.next(),
        }
    }
}

/// Opens a benchmark JSONL file. Eager mode reads and parses everything up
/// front and reports the first error immediately; streaming mode parses one
/// line per `next()`.
pub fn load_benchmark(path: &Path, streaming: bool) -> Result<BenchmarkSource> {
    let stream = StreamingBenchmark {
        lines: BufReader::new(File::open(path)?).lines(),
        lineno: 0,
    };
    if streaming {
        return Ok(BenchmarkSource::Streaming(stream));
    }
    let all = stream.collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkSource::Eager(
        all.into_iter().map(Ok).collect::<Vec<_>>().into_iter(),
    ))
}

/// `k` examples drawn without replacement by `SplitMix64(seed)`, each rendered
/// as `"Q: {query}\nA: {response}\n\n"`, in draw order.
pub fn build_fewshot_prefix(examples: &[BenchmarkExample], k: usize, seed: u64) -> Result<String> {
    if k > examples.len() {
        return Err(Error::InsufficientExamples {
            requested: k,
            available: examples.len(),
        });
    }
    let mut rng = SplitMix64::new(seed);
    Ok(rng
        .sample_indices(examples.len(), k)
        .into_iter()
        .map(|i| {
            let ex = &examples[i];
            format!("Q: {}\nA: {}\n\n", ex.prompt_query(), ex.response)
        })
        .collect())
}

/// Anything that answers a query string.
pub trait Predictor: Sync {
    fn predict(&self, query: &str) -> Result<String>;
}

impl Predictor for RagSystem {
    fn predict(&self, query: &str) -> Result<String> {
        Ok(self.query(query, &BENCHMARK_DECODING)?.text)
    }
}

/// Greedy decoding used for every benchmark prediction.
pub const BENCHMARK_DECODING: GenerationConfig = GenerationConfig {
    max_tokens: 32,
    mode: crate::generator::DecodingMode::Greedy,
};

/// Examples scored per parallel batch; bounds memory for streaming sources.
const SCORING_BATCH: usize = 256;

pub fn run_benchmark<P, I>(
    predictor: &P,
    benchmark: I,
    metric: &dyn EvaluationMetric,
    num_examples: Option<usize>,
    agg: Aggregation,
    fewshot_prefix: &str,
) -> Result<EvaluationResult>
where
    P: Predictor + ?Sized,
    I: IntoIterator<Item = Result<BenchmarkExample>>,
{
    run_benchmark_with(
        predictor,
        benchmark,
        metric,
        num_examples,
        agg,
        fewshot_prefix,
        Execution::default(),
    )
}

/// Scores the first `num_examples` examples (or all), querying with
/// `fewshot_prefix + query`. Scores are kept in input order in both
/// execution modes.
pub fn run_benchmark_with<P, I>(
    predictor: &P,
    benchmark: I,
    metric: &dyn EvaluationMetric,
    num_examples: Option<usize>,
    agg: Aggregation,
    fewshot_prefix: &str,
    exec: Execution,
) -> Result<EvaluationResult>
where
    P: Predictor + ?Sized,
    I: IntoIterator<Item = Result<BenchmarkExample>>,
{
    let limit = num_examples.unwrap_or(usize::MAX);
    let mut examples = benchmark.into_iter().take(limit);
    let mut scores = Vec::new();
    loop {
        let batch = examples
            .by_ref()
            .take(SCORING_BATCH)
            .collect::<Result<Vec<_>>>()?;
        if batch.is_empty() {
            break;
        }
        let batch_scores = exec.map(&batch, |ex| {
            let query = format!("{fewshot_prefix}{}", ex.prompt_query());
            predictor
                .predict(&query)
                .map(|prediction| metric.score(&prediction, &ex.response))
        });
        for s in batch_scores {
            scores.push(s?);
        }
    }
    Ok(EvaluationResult {
        aggregate: agg.apply(&scores),
        num_examples: scores.len(),
        per_example_scores: scores,
        agg_mode: agg.to_string(),
    })
}

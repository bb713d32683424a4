use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ragkit::checkpoint::Checkpoint;
use ragkit::evals::{build_fewshot_prefix, load_benchmark, run_benchmark, Aggregation, BenchmarkExample, ExactMatch, Predictor};
use ragkit::fl::{run_client, ClientConfig, FlTask, Server};
use ragkit::generator::{GenerationConfig, LogLinearLM, Vocab};
use ragkit::knowledge_store::{load_corpus, KnowledgeStore, Passage};
use ragkit::rag::{RagConfig, RagSystem};
use ragkit::retriever::RetrieverModel;
use ragkit::trainers::{load_train_dataset, KlDirection, LsrTrainer, RaltTrainer, TrainConfig, TrainMode, TrainerManager};
use ragkit::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ragkit", version, about = "Desk-scale retrieval-augmented generation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a JSONL corpus into a new knowledge store.
    Ingest(IngestArgs),
    /// Answer one question with retrieval-augmented generation.
    Query(QueryArgs),
    /// Fine-tune the retriever (LSR) or the generator (RALT).
    Train(TrainArgs),
    /// Coordinate federated fine-tuning rounds.
    #[command(name = "fl-server")]
    FlServer(FlServerArgs),
    /// Train locally for a federated run.
    #[command(name = "fl-client")]
    FlClient(FlClientArgs),
    /// Score the system on a JSONL benchmark with exact match.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Retriever,
    Generator,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Retriever => TrainMode::Retriever,
            Mode::Generator => TrainMode::Generator,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Agg {
    Avg,
    Sum,
    Max,
}

impl From<Agg> for Aggregation {
    fn from(a: Agg) -> Self {
        match a {
            Agg::Avg => Aggregation::Avg,
            Agg::Sum => Aggregation::Sum,
            Agg::Max => Aggregation::Max,
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Hashed feature dimension.
    #[arg(long, default_value_t = 4096)]
    features: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum generator vocabulary size, reserved tokens included.
    #[arg(long, default_value_t = 4096)]
    vocab_size: usize,
    /// Training datasets whose queries and responses also feed the vocabulary.
    #[arg(long)]
    vocab_dataset: Vec<PathBuf>,
    /// Reuse the retriever and generator of an existing checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overwrite an existing store.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct SystemArgs {
    #[arg(long)]
    store: PathBuf,
    /// Model checkpoint directory; defaults to <store>/model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// rag.json; defaults to top_k=2 with the default template.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl SystemArgs {
    fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.store.join("model"))
    }

    fn load(&self) -> Result<RagSystem> {
        let config = match &self.config {
            Some(path) => RagConfig::load(path)?,
            None => RagConfig::default(),
        };
        let store = KnowledgeStore::load(&self.store)?;
        Checkpoint::load(&self.checkpoint_dir())?.into_system(config, store)
    }
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 32)]
    max_tokens: usize,
    /// Sample with this temperature instead of greedy decoding.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the full response as JSON.
    #[arg(long)]
    json: bool,
    question: String,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long = "lr", default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Retriever softmax temperature for LSR.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Direction of the LSR divergence.
    #[arg(long, value_enum, default_value = "lm-to-retriever")]
    kl: Kl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kl {
    LmToRetriever,
    RetrieverToLm,
}

impl From<Kl> for KlDirection {
    fn from(k: Kl) -> Self {
        match k {
            Kl::LmToRetriever => KlDirection::LmToRetriever,
            Kl::RetrieverToLm => KlDirection::RetrieverToLm,
        }
    }
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lsr_tau: self.tau,
            lsr_kl: self.kl.into(),
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct FlServerArgs {
    #[arg(long)]
    listen: String,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    rounds: u64,
    #[arg(long, default_value_t = 1)]
    clients: usize,
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FlClientArgs {
    #[arg(long)]
    server: String,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "client-0")]
    client_id: String,
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    out: PathBuf,
    /// Keep retrying the initial connection for this long.
    #[arg(long, default_value_t = 0)]
    connect_timeout_ms: u64,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    num_examples: Option<usize>,
    #[arg(long, value_enum, default_value = "avg")]
    agg: Agg,
    /// Number of few-shot examples prepended to every query.
    #[arg(long, default_value_t = 0)]
    fewshot: usize,
    /// Pool the few-shot examples are drawn from; defaults to the benchmark itself.
    #[arg(long)]
    fewshot_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read the benchmark lazily.
    #[arg(long)]
    streaming: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Query(args) => query(args),
        Command::Train(args) => train(args),
        Command::FlServer(args) => fl_server(args),
        Command::FlClient(args) => fl_client(args),
        Command::Benchmark(args) => benchmark(args),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{} is not a readable file", path.display())))
    }
}

fn ingest(args: IngestArgs) -> Result<()> {
    require_file(&args.corpus)?;
    if args.dim == 0 || args.features == 0 {
        return Err(Error::InvalidConfig("--dim and --features must be positive".into()));
    }
    if args.vocab_size < 2 {
        return Err(Error::InvalidConfig("--vocab-size must be at least 2".into()));
    }
    if args.store.join("meta.json").exists() && !args.force {
        return Err(Error::InvalidConfig(format!(
            "{} already holds a store; pass --force to overwrite",
            args.store.display()
        )));
    }
    let records = load_corpus(&args.corpus)?;
    let (retriever, generator) = match &args.checkpoint {
        Some(dir) => Checkpoint::load(dir)?.models()?,
        None => {
            let mut texts: Vec<String> = records.iter().map(|r| r.context_text()).collect();
            for path in &args.vocab_dataset {
                for ex in load_train_dataset(path)? {
                    texts.push(ex.query);
                    texts.push(ex.response);
                }
            }
            let vocab = Vocab::build(&texts, args.vocab_size);
            (
                RetrieverModel::init(args.dim, args.features, args.seed),
                LogLinearLM::zeros(vocab, args.features),
            )
        }
    };
    let mut store = KnowledgeStore::new(retriever.dim());
    let added = store.add_chunks(retriever.embed_records(records))?;
    store.save(&args.store)?;
    Checkpoint::from_models(&retriever, &generator).save(&args.store.join("model"))?;
    println!("ingested {added} chunks");
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let system = args.system.load()?;
    let generation = match args.temperature {
        Some(t) => GenerationConfig::sample(args.max_tokens, t, args.seed)?,
        None => GenerationConfig::greedy(args.max_tokens),
    };
    let response = system.query(&args.question, &generation)?;
    let mut out = std::io::stdout().lock();
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&response).expect("serializable"))?;
    } else {
        writeln!(out, "{}", response.text)?;
        for r in &response.retrieved {
            writeln!(out, "{}\t{}", r.chunk_id, r.score)?;
        }
    }
    Ok(())
}

fn manager_for(mode: TrainMode, config: TrainConfig, dataset: Vec<ragkit::TrainExample>) -> TrainerManager {
    match mode {
        TrainMode::Retriever => TrainerManager::retriever(LsrTrainer { config, dataset }),
        TrainMode::Generator => TrainerManager::generator(RaltTrainer { config, dataset }),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    require_file(&args.dataset)?;
    let dataset = load_train_dataset(&args.dataset)?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig(format!("{} has no examples", args.dataset.display())));
    }
    let config = args.train.config();
    config.validate()?;
    let mut system = args.system.load()?;
    let manager = manager_for(args.mode.into(), config, dataset);
    let result = manager.train(&mut system)?;
    if result.skipped > 0 {
        eprintln!("warning: skipped {} examples with fewer than 2 retrieved chunks", result.skipped);
    }
    Checkpoint::of(&system).save(&args.out)?;
    let mut log = Vec::new();
    for (i, loss) in result.losses_per_epoch.iter().enumerate() {
        writeln!(log, "{}", json!({"epoch": i + 1, "loss": loss}))?;
    }
    fs::write(args.out.join("train_log.jsonl"), log)?;
    println!("{}", serde_json::to_string(&result).expect("serializable"));
    Ok(())
}

fn fl_server(args: FlServerArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.system.checkpoint_dir())?;
    let task = FlTask {
        role: args.mode.into(),
        train_config: TrainConfig::default(),
    };
    let initial = checkpoint.params.filter_prefix(task.tensor_prefix());
    let server = Server::bind(&args.listen)?;
    eprintln!("listening on {}", server.local_addr()?);
    let final_params = server.run(&task, initial, args.rounds, args.clients, |summary| {
        println!(
            "round {}\texamples {}\tnorm {}",
            summary.round, summary.total_examples, summary.norm
        );
    })?;
    let mut params = checkpoint.params;
    params.merge(final_params);
    Checkpoint { params, vocab: checkpoint.vocab }.save(&args.out)
}

fn fl_client(args: FlClientArgs) -> Result<()> {
    require_file(&args.dataset)?;
    let dataset = load_train_dataset(&args.dataset)?;
    let config = args.train.config();
    config.validate()?;
    let mut system = args.system.load()?;
    let task = manager_for(args.mode.into(), config, Vec::new()).get_federated_task()?;
    let client = ClientConfig {
        client_id: args.client_id,
        connect_timeout: Duration::from_millis(args.connect_timeout_ms),
    };
    run_client(&task, &mut system, &dataset, &args.server, &client)?;
    Checkpoint::of(&system).save(&args.out)
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    require_file(&args.benchmark)?;
    let system = args.system.load()?;
    let prefix = if args.fewshot == 0 {
        String::new()
    } else {
        let pool_path = args.fewshot_file.as_ref().unwrap_or(&args.benchmark);
        let pool = load_benchmark(pool_path, false)?.collect::<Result<Vec<BenchmarkExample>>>()?;
        build_fewshot_prefix(&pool, args.fewshot, args.seed)?
    };
    let examples = load_benchmark(&args.benchmark, args.streaming)?;
    let predictor: &dyn Predictor = &system;
    let result = run_benchmark(
        predictor,
        examples,
        &ExactMatch,
        args.num_examples,
        args.agg.into(),
        &prefix,
    )?;
    println!("{}", serde_json::to_string(&result).expect("serializable"));
    Ok(())
}

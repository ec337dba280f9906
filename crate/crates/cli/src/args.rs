use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ear_core::expansion::GeneratorTag;
use ear_core::pipeline::StrategyKind;
use ear_core::reranker::Variant;
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(name = "ear", version, about = "Expand, rerank and retrieve with BM25")]
pub struct Cli {
    /// Worker threads for labeling, featurization and per-question runs
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build and persist a BM25 index over a JSONL corpus
    Index(IndexArgs),
    /// Label sampled expansions with the rank they retrieve an answer at
    MakeTrain(MakeTrainArgs),
    /// Train a query reranker from labeled training JSONL
    Train(TrainArgs),
    /// Train the passage reranker
    TrainPr(TrainPrArgs),
    /// Run a retrieval strategy and write a TREC run file
    Retrieve(RetrieveArgs),
    /// Interleave TREC runs round robin, in the order given
    Fuse(FuseArgs),
    /// Top-k answer accuracy of one or more run files
    Eval(EvalArgs),
    /// Per-stage latency of a strategy
    Bench(BenchArgs),
    /// Accuracy as a function of the number of candidates
    Ablate(AblateArgs),
    /// Write the synthetic planted corpus, questions and expansions
    MakePlanted(MakePlantedArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct IndexArgs {
    /// Corpus JSONL ({"id", "title", "text"} per line)
    #[arg(long)]
    pub corpus: PathBuf,

    /// Output index file
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0.9)]
    pub k1: f64,

    #[arg(long, default_value_t = 0.4)]
    pub b: f64,

    /// Disable Porter stemming
    #[arg(long, default_value_t = false)]
    pub no_stemming: bool,

    /// Keep stopwords
    #[arg(long, default_value_t = false)]
    pub keep_stopwords: bool,

    /// Index "title text" instead of the text alone
    #[arg(long, default_value_t = false)]
    pub index_titles: bool,
}

/// Where expansion candidates come from.
#[derive(Args, Debug, Serialize)]
pub struct SourceArgs {
    /// Expansions JSONL; give one file per fold to keep generators out of fold
    #[arg(long, num_args = 1.., conflicts_with = "stub")]
    pub expansions: Vec<PathBuf>,

    /// Use the built-in deterministic stub sampler instead of an expansions file
    #[arg(long, default_value_t = false)]
    pub stub: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct MakeTrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub index: PathBuf,

    /// Questions JSONL with answers
    #[arg(long)]
    pub questions: PathBuf,

    /// Output training JSONL
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub source: SourceArgs,

    /// Expansions sampled per question
    #[arg(long, default_value_t = 50)]
    pub n_samples: usize,

    /// Retrieval depth used for labeling
    #[arg(long, default_value_t = 100)]
    pub k_retrieve: usize,

    /// Rank assigned when no answer is retrieved; must exceed --k-retrieve
    #[arg(long, default_value_t = 101)]
    pub max_rank: u32,

    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Keep at most this many deduplicated candidates [default: all]
    #[arg(long)]
    pub cap_n: Option<usize>,

    /// Do not record the top-1 passage per expansion (RD training needs it)
    #[arg(long, default_value_t = false)]
    pub no_top1: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Training JSONL from make-train
    #[arg(long)]
    pub train: PathBuf,

    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub index: PathBuf,

    /// ri (query only) or rd (query plus top-1 passage)
    #[arg(long)]
    pub variant: Variant,

    /// Output model JSON
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,

    /// Training epochs [default: 2 for ri, 3 for rd]
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Questions per update (4 or 8)
    #[arg(long, default_value_t = 4)]
    pub group_batch: usize,

    #[arg(long, default_value_t = 3e-4)]
    pub learning_rate: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Hidden layer width; 0 trains a linear scorer
    #[arg(long, default_value_t = 0)]
    pub hidden_width: usize,

    /// Train one model for all generator tags instead of one per tag
    #[arg(long, default_value_t = false)]
    pub shared: bool,

    /// Leave this fold out of training
    #[arg(long)]
    pub holdout_fold: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainPrArgs {
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub index: PathBuf,

    /// Questions JSONL with answers
    #[arg(long)]
    pub questions: PathBuf,

    /// Output model JSON
    #[arg(long)]
    pub out: PathBuf,

    /// BM25 depth that training passages are drawn from
    #[arg(long, default_value_t = 10)]
    pub train_depth: usize,

    #[arg(long, default_value_t = 3)]
    pub epochs: usize,

    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,

    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct StrategyArgs {
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub index: PathBuf,

    /// Questions JSONL; the oracle strategy needs answers on every question
    #[arg(long)]
    pub questions: PathBuf,

    /// bm25, greedy, concat, oracle, ear_ri or ear_rd
    #[arg(long, default_value_t = StrategyKind::EarRd)]
    pub strategy: StrategyKind,

    #[command(flatten)]
    pub source: SourceArgs,

    /// Query reranker model JSON (ear_ri, ear_rd)
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Passage reranker model JSON
    #[arg(long, requires = "pr_depth")]
    pub pr_model: Option<PathBuf>,

    /// Rerank this many top passages with --pr-model [default: off]
    #[arg(long, requires = "pr_model")]
    pub pr_depth: Option<usize>,

    #[arg(long, default_value_t = 50)]
    pub n_samples: usize,

    /// Keep at most this many deduplicated candidates [default: all]
    #[arg(long)]
    pub cap_n: Option<usize>,

    #[arg(long, default_value_t = 100)]
    pub k_retrieve: usize,

    /// Rank the oracle assigns to candidates that retrieve no answer
    #[arg(long, default_value_t = 101)]
    pub max_rank: u32,

    /// Run once per generator tag and fuse, e.g. sentence,answer,title [default: off]
    #[arg(long, value_delimiter = ',')]
    pub fuse_tags: Vec<GeneratorTag>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub strategy: StrategyArgs,

    /// Output TREC run file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct FuseArgs {
    /// Run files, highest priority first
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,

    #[arg(long)]
    pub out: PathBuf,

    /// Length of each fused list
    #[arg(long, default_value_t = 100)]
    pub k: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Run files to score
    #[arg(long, num_args = 1.., required = true)]
    pub run: Vec<PathBuf>,

    /// Questions JSONL with answers
    #[arg(long)]
    pub questions: PathBuf,

    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long, value_delimiter = ',', default_value = "1,5,20,100")]
    pub ks: Vec<usize>,

    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,

    /// Write the report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub strategy: StrategyArgs,

    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,

    /// Time only the first N questions [default: all]
    #[arg(long)]
    pub limit: Option<usize>,

    /// Where the rebuilt index is written [default: a file in the temp dir]
    #[arg(long)]
    pub index_out: Option<PathBuf>,

    /// text or json
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub strategy: StrategyArgs,

    /// Candidate caps, strictly ascending
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,30,50")]
    pub ns: Vec<usize>,

    #[arg(long, value_delimiter = ',', default_value = "1,5,20,100")]
    pub ks: Vec<usize>,

    /// CSV output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct MakePlantedArgs {
    /// Directory for corpus.jsonl, train.jsonl, test.jsonl, expansions.jsonl
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Use the larger fixture (about 10,000 passages)
    #[arg(long, default_value_t = false)]
    pub large: bool,

    /// Number of questions, split evenly into train and test [default: 400, 800 with --large]
    #[arg(long)]
    pub questions: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hubgraph::search::SearchMode;
use hubgraph::update::AddVariant;
use hubgraph::vectors::ProviderKind;

#[derive(Debug, Parser)]
#[command(name = "hubgraph", version, about = "Low-storage graph index that recomputes embeddings at query time")]
pub struct Cli {
    /// TOML file with `provider`, `build`, `search`, `shards` and `buffer_bytes` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a directory of text files or a records file into items.
    Ingest(IngestArgs),
    /// Build the graph, PQ codes and metadata over ingested items.
    Build(BuildArgs),
    /// Answer queries against an index.
    Search(SearchArgs),
    /// Insert items into an index.
    Add(AddArgs),
    /// Soft-delete items by id.
    Delete(DeleteArgs),
    /// Link every buffered item into the graph.
    Drain(IndexArg),
    /// Measure recall and recomputations against brute force.
    Eval(EvalArgs),
    /// Fold the mutation log into the index files.
    Compact(IndexArg),
}

#[derive(Debug, Args)]
pub struct IndexArg {
    /// Index directory.
    #[arg(long = "index", short = 'i')]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of text files, or a file with one item per line.
    pub input: PathBuf,
    #[command(flatten)]
    pub index: IndexArg,
    #[arg(long, default_value_t = 1024)]
    pub chunk_bytes: usize,
    #[arg(long, default_value_t = 128)]
    pub chunk_overlap: usize,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long, value_parser = parse_kind)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Seed of the synthetic provider (defaults to --seed).
    #[arg(long)]
    pub provider_seed: Option<u64>,
    #[arg(long)]
    pub endpoint: Option<String>,
}

fn parse_kind(s: &str) -> Result<ProviderKind, String> {
    match s {
        "synthetic" => Ok(ProviderKind::Synthetic),
        "literal" => Ok(ProviderKind::Literal),
        "external" => Ok(ProviderKind::External),
        _ => Err(format!("unknown provider {s:?} (synthetic, literal, external)")),
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub index: IndexArg,
    /// Ingest this input first instead of reading items already in the index directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Degree cap for hubs.
    #[arg(long = "M")]
    pub max_degree: Option<usize>,
    /// Forward-edge cap for other nodes.
    #[arg(long = "m")]
    pub low_degree: Option<usize>,
    /// Percentage of nodes kept as hubs.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub efc: Option<usize>,
    /// Byte budget for stored neighbor ids.
    #[arg(long)]
    pub budget_bytes: Option<u64>,
    /// PQ subspaces.
    #[arg(long)]
    pub pq_m: Option<usize>,
    #[arg(long)]
    pub shards: Option<usize>,
    /// Keep per-shard graphs under <index>/shards.
    #[arg(long)]
    pub keep_shards: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add-buffer byte budget.
    #[arg(long)]
    pub buffer_bytes: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SearchFlags {
    #[arg(short = 'k', long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub ef: Option<usize>,
    /// Re-ranking ratio in percent.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dynamic batching threshold.
    #[arg(long)]
    pub batch: Option<usize>,
    /// `two_level` or `exact`.
    #[arg(long)]
    pub mode: Option<SearchMode>,
    /// Percentage of nodes whose exact embeddings are cached.
    #[arg(long)]
    pub cache_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub index: IndexArg,
    /// Query text, or a literal vector such as `[0.1, 0.2]`.
    pub queries: Vec<String>,
    /// One query per line.
    #[arg(long)]
    pub query_file: Option<PathBuf>,
    #[command(flatten)]
    pub flags: SearchFlags,
    /// Print the full search report as JSON, one line per query.
    #[arg(long)]
    pub report: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct AddArgs {
    #[command(flatten)]
    pub index: IndexArg,
    /// Item contents.
    pub contents: Vec<String>,
    /// Add every non-empty line of this file.
    #[arg(long)]
    pub file: Option<PathBuf>,
    #[arg(long, default_value = "simplified")]
    pub variant: AddVariant,
    /// Hold items in the add buffer instead of linking them now.
    #[arg(long)]
    pub buffered: bool,
}

#[derive(Debug, Args)]
pub struct DeleteArgs {
    #[command(flatten)]
    pub index: IndexArg,
    #[arg(required = true)]
    pub ids: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub index: IndexArg,
    /// One query per line.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub target: f64,
    #[arg(long, default_value_t = 4096)]
    pub max_ef: usize,
    #[command(flatten)]
    pub flags: SearchFlags,
    /// Also rebuild the random-prune and small-M baselines and sweep every variant.
    #[arg(long)]
    pub ablation: bool,
    /// Directory for the ablation tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

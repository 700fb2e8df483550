use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use corpusclass_core::embedding::{
    default_cache_dir, embedder_for, CachedEmbedder, EmbeddingCache, Url, CACHE_DIR_ENV,
    DEFAULT_DIM, DEFAULT_SEED,
};
use corpusclass_core::report::{render_summary, DEFAULT_BINS};
use corpusclass_core::{
    classify_corpus, histogram, load_replay_table, parse_categories, parse_corpus, render,
    summarize, BackendConfig, CategorySet, CorpusError, Embedder, OutputFormat, PipelineConfig,
    ScoringParams, WeightStrategy,
};

#[derive(Parser)]
#[command(
    name = "corpusclass",
    version,
    about = "Zero-shot classification of paper corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every record of a JSONL corpus.
    Classify(ClassifyArgs),
    /// Summarize a previously written classification table.
    Summarize(SummarizeArgs),
    /// Check a corpus file and list every defect.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Hashed,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Uniform,
    Attention,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Markdown,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Markdown => OutputFormat::Markdown,
        }
    }
}

#[derive(clap::Args)]
struct ClassifyArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Category file, or `default` for the built-in set.
    #[arg(long, default_value = "default")]
    categories: String,
    #[arg(long, value_enum, default_value_t = Backend::Hashed)]
    backend: Backend,
    /// Hashed embedding width [default: 256].
    #[arg(long)]
    dim: Option<usize>,
    /// Hash seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Base URL of the embedding service (remote backend only).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, value_enum, default_value_t = Weights::Uniform)]
    weights: Weights,
    /// Softmax temperature for attention weights.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Unit-normalize pooled vectors before scoring [default: true].
    #[arg(long, action = ArgAction::Set)]
    normalize: Option<bool>,
    /// JSON file with `matrix_a`, `biases` and `pre_normalize`.
    #[arg(long)]
    scoring_params_path: Option<PathBuf>,
    #[arg(long, visible_alias = "format", value_enum, default_value_t = Format::Csv)]
    output_format: Format,
    #[arg(long, visible_alias = "output")]
    output_path: Option<PathBuf>,
    /// Accepted for symmetry with `summarize`; unused when classifying.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Worker threads [default: logical CPU count].
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(clap::Args)]
struct SummarizeArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value = "default")]
    categories: String,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, visible_alias = "output-format", value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, visible_alias = "output")]
    output_path: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ValidateArgs {
    #[arg(long)]
    corpus: PathBuf,
}

/// An error together with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }

    fn environment(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify(args) => cmd_classify(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// The error and its causes, skipping causes already spelled out by their parent.
fn describe(error: &anyhow::Error) -> String {
    let mut msg = error.to_string();
    for cause in error.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} `{}`", path.display()))
        .map_err(Failure::input)
}

fn load_categories(spec: &str) -> Result<CategorySet, Failure> {
    if spec == "default" {
        return Ok(CategorySet::builtin());
    }
    let text = read_input(Path::new(spec), "categories file")?;
    parse_categories(&text)
        .with_context(|| format!("invalid categories file `{spec}`"))
        .map_err(Failure::input)
}

fn write_output(path: Option<&Path>, text: &str) -> Outcome {
    let result = match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write `{}`", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|()| out.flush())
                .context("cannot write to standard output")
        }
    };
    result.map_err(Failure::environment)
}

fn backend_config(args: &ClassifyArgs) -> Result<BackendConfig, Failure> {
    match args.backend {
        Backend::Hashed => {
            if args.endpoint.is_some() {
                return Err(Failure::input(anyhow!(
                    "--endpoint requires --backend remote"
                )));
            }
            Ok(BackendConfig::hashed(
                args.dim.unwrap_or(DEFAULT_DIM),
                args.seed.unwrap_or(DEFAULT_SEED),
            ))
        }
        Backend::Remote => {
            if args.dim.is_some() || args.seed.is_some() {
                return Err(Failure::input(anyhow!(
                    "--dim and --seed only apply to --backend hashed"
                )));
            }
            let raw = args
                .endpoint
                .as_deref()
                .ok_or_else(|| Failure::input(anyhow!("--backend remote requires --endpoint")))?;
            let url = Url::parse(raw)
                .with_context(|| format!("invalid --endpoint `{raw}`"))
                .map_err(Failure::input)?;
            Ok(BackendConfig::remote(url))
        }
    }
}

fn build_embedder(
    args: &ClassifyArgs,
    config: &BackendConfig,
) -> Result<Arc<dyn Embedder>, Failure> {
    let inner = embedder_for(config).map_err(Failure::input)?;
    let cache_dir = match (&args.cache_dir, args.backend) {
        (Some(dir), _) => Some(dir.clone()),
        (None, Backend::Remote) => Some(default_cache_dir()),
        (None, Backend::Hashed) => std::env::var_os(CACHE_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(PathBuf::from),
    };
    Ok(match cache_dir {
        Some(dir) => {
            let cache = EmbeddingCache::new(&dir)
                .with_context(|| format!("cannot use cache directory `{}`", dir.display()))
                .map_err(Failure::environment)?;
            log::info!("caching embeddings in {}", dir.display());
            Arc::new(CachedEmbedder::new(inner, cache))
        }
        None => Arc::from(inner),
    })
}

fn cmd_classify(args: ClassifyArgs) -> Outcome {
    if args.bins == 0 {
        return Err(Failure::input(anyhow!("--bins must be at least 1")));
    }
    if args.parallelism == Some(0) {
        return Err(Failure::input(anyhow!("--parallelism must be at least 1")));
    }
    let weights = match args.weights {
        Weights::Uniform => WeightStrategy::Uniform,
        Weights::Attention if args.temperature > 0.0 && args.temperature.is_finite() => {
            WeightStrategy::Attention {
                temperature: args.temperature,
            }
        }
        Weights::Attention => {
            return Err(Failure::input(anyhow!("--temperature must be positive")))
        }
    };
    let backend = backend_config(&args)?;
    let categories = load_categories(&args.categories)?;
    let mut scoring = match &args.scoring_params_path {
        Some(p) => {
            let text = read_input(p, "scoring parameters")?;
            ScoringParams::from_json(&text, categories.len())
                .with_context(|| format!("invalid scoring parameters `{}`", p.display()))
                .map_err(Failure::input)?
        }
        None => ScoringParams::identity(categories.len()),
    };
    if let Some(n) = args.normalize {
        scoring.pre_normalize = n;
    }

    let text = read_input(&args.corpus, "corpus")?;
    let corpus = parse_corpus(&text)
        .map_err(|e| Failure::input(anyhow!("{}", corpus_error_report(&args.corpus, &e))))?;

    let mut config = PipelineConfig::new(build_embedder(&args, &backend)?);
    config.weights = weights;
    config.scoring = Some(scoring);
    config.parallelism = args.parallelism;

    let table = classify_corpus(&corpus, &categories, &config).map_err(|e| {
        if e.is_environmental() {
            Failure::environment(e)
        } else {
            Failure::input(e)
        }
    })?;
    log::info!("classified {} records", table.len());
    write_output(
        args.output_path.as_deref(),
        &render(&table, args.output_format.into()),
    )
}

fn cmd_summarize(args: SummarizeArgs) -> Outcome {
    if args.bins == 0 {
        return Err(Failure::input(anyhow!("--bins must be at least 1")));
    }
    let categories = load_categories(&args.categories)?;
    let text = read_input(&args.table, "table")?;
    let table = load_replay_table(&text, &categories)
        .with_context(|| format!("invalid table `{}`", args.table.display()))
        .map_err(Failure::input)?;
    let stats = summarize(&table).map_err(Failure::input)?;
    let hist = histogram(&table.confidences(), args.bins, 0.0, 1.0).map_err(Failure::input)?;
    write_output(
        args.output_path.as_deref(),
        &render_summary(&stats, &hist, args.format.into()),
    )
}

fn corpus_error_report(path: &Path, e: &CorpusError) -> String {
    let mut out = format!("invalid corpus `{}`", path.display());
    for d in e.diagnostics() {
        out.push_str(&format!("\n  {d}"));
    }
    out
}

fn cmd_validate(args: ValidateArgs) -> Outcome {
    let text = fs::read_to_string(&args.corpus)
        .with_context(|| format!("cannot read corpus `{}`", args.corpus.display()))
        .map_err(Failure::environment)?;
    match parse_corpus(&text) {
        Ok(corpus) => write_output(None, &format!("{} records OK\n", corpus.len())),
        Err(e) => {
            let mut report = String::new();
            for d in e.diagnostics() {
                report.push_str(&format!("{}: {d}\n", args.corpus.display()));
            }
            if e.diagnostics().is_empty() {
                report.push_str(&format!("{}: {e}\n", args.corpus.display()));
            }
            write_output(None, &report)?;
            Err(Failure::input(anyhow!(
                "{} defect(s) found",
                e.diagnostics().len().max(1)
            )))
        }
    }
}

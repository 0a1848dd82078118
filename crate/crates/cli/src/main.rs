use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ibsum::lm::RemoteScorerConfig;
use ibsum::pipeline::{
    cmd_build_dataset, cmd_decode, cmd_extract_pairs, cmd_rouge, cmd_summarize, cmd_train_ngram,
    load_rouge_inputs, PipelineError, RougeSource, RunConfig, ScorerConfig, SummarizeMode,
};
use ibsum::rouge::{Aggregation, EvalConfig};

#[derive(Parser)]
#[command(
    name = "ibsum",
    version,
    about = "Information-bottleneck sentence summarization"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Score cache size in entries (0 disables caching).
    #[arg(long, global = true)]
    cache_capacity: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ScorerArgs {
    /// n-gram model file written by `train-ngram`.
    #[arg(long, conflicts_with = "remote_url")]
    model: Option<PathBuf>,
    /// Base URL of a remote scoring server.
    #[arg(long)]
    remote_url: Option<String>,
    #[arg(long, requires = "remote_url")]
    timeout_ms: Option<u64>,
    #[arg(long, requires = "remote_url")]
    max_retries: Option<u32>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    pool_cap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Split documents into (sentence, next sentence) pairs.
    ExtractPairs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train an add-k n-gram model on a document corpus.
    TrainNgram {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        add_k: Option<f64>,
    },
    /// Extractive summaries guided by the next sentence.
    SummarizeEx {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Reconstruction baseline, length-matched to a summarize-ex run.
    SummarizeRecon {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        ex_results: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Build fine-tuning files from summarization results.
    BuildDataset {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        heldout: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Number of trailing pairs held out.
        #[arg(long)]
        heldout_size: Option<usize>,
        #[arg(long)]
        delimiter: Option<String>,
    },
    /// Beam-decode summaries from a generative scorer.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[arg(long)]
        beam_size: Option<usize>,
        #[arg(long)]
        min_tokens: Option<usize>,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// ROUGE-1/2/L report.
    Rouge {
        /// Combined rows: {"candidate", "references", "source"?}.
        #[arg(long, conflicts_with_all = ["candidates", "references"])]
        input: Option<PathBuf>,
        #[arg(long, requires = "references")]
        candidates: Option<PathBuf>,
        #[arg(long, requires = "candidates")]
        references: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, value_enum)]
        aggregation: Option<AggregationArg>,
        #[arg(long)]
        no_case_fold: bool,
        /// Also score the PREFIX and INPUT baselines.
        #[arg(long)]
        baselines: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Duc,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Max,
    Average,
}

fn apply_scorer(cfg: &mut RunConfig, args: &ScorerArgs) {
    if let Some(model) = &args.model {
        cfg.scorer = Some(ScorerConfig::Ngram {
            model: model.clone(),
        });
    }
    if let Some(url) = &args.remote_url {
        let mut remote = match &cfg.scorer {
            Some(ScorerConfig::Remote(r)) => r.clone(),
            _ => RemoteScorerConfig::new(url.clone()),
        };
        remote.base_url = url.clone();
        if let Some(t) = args.timeout_ms {
            remote.timeout_ms = t;
        }
        if let Some(r) = args.max_retries {
            remote.max_retries = r;
        }
        cfg.scorer = Some(ScorerConfig::Remote(remote));
    }
}

fn apply_search(cfg: &mut RunConfig, args: &SearchArgs) {
    if let Some(k) = args.k {
        cfg.search.k = k;
    }
    if let Some(m) = args.m {
        cfg.search.m = m;
    }
    if let Some(c) = args.pool_cap {
        cfg.search.pool_cap = c;
    }
}

fn print_json<T: serde::Serialize>(value: &T, output: Option<&Path>) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    println!("{text}");
    if let Some(p) = output {
        std::fs::write(p, text + "\n").map_err(|source| PipelineError::Io {
            path: p.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(c) = cli.cache_capacity {
        cfg.cache_capacity = c;
    }

    match cli.command {
        Command::ExtractPairs { input, output } => {
            let counts = cmd_extract_pairs(&input, &output)?;
            println!("{counts}");
            Ok(0)
        }
        Command::TrainNgram {
            input,
            output,
            order,
            add_k,
        } => {
            if let Some(o) = order {
                cfg.ngram.order = o;
            }
            if let Some(k) = add_k {
                cfg.ngram.add_k = k;
            }
            let model = cmd_train_ngram(&input, &output, &cfg.ngram)?;
            println!(
                "order={} add_k={} vocab={}",
                model.order(),
                model.add_k(),
                model.vocab().len()
            );
            Ok(0)
        }
        Command::SummarizeEx {
            pairs,
            output,
            scorer,
            search,
        } => {
            apply_scorer(&mut cfg, &scorer);
            apply_search(&mut cfg, &search);
            let outcome = cmd_summarize(&cfg, &SummarizeMode::Ex, &pairs, &output)?;
            println!("records={} failures={}", outcome.records, outcome.failures);
            Ok(outcome.exit_code())
        }
        Command::SummarizeRecon {
            pairs,
            ex_results,
            output,
            scorer,
            search,
        } => {
            apply_scorer(&mut cfg, &scorer);
            apply_search(&mut cfg, &search);
            let outcome =
                cmd_summarize(&cfg, &SummarizeMode::Recon { ex_results }, &pairs, &output)?;
            println!("records={} failures={}", outcome.records, outcome.failures);
            Ok(outcome.exit_code())
        }
        Command::BuildDataset {
            results,
            train,
            heldout,
            stats,
            heldout_size,
            delimiter,
        } => {
            if let Some(h) = heldout_size {
                cfg.dataset.heldout = h;
            }
            if let Some(d) = delimiter {
                cfg.dataset.delimiter = d;
            }
            let s = cmd_build_dataset(&cfg, &results, &train, &heldout, stats.as_deref())?;
            print_json(&s, None)?;
            Ok(0)
        }
        Command::Decode {
            input,
            output,
            scorer,
            beam_size,
            min_tokens,
            max_tokens,
        } => {
            apply_scorer(&mut cfg, &scorer);
            if let Some(b) = beam_size {
                cfg.decode.beam_size = b;
            }
            if let Some(m) = min_tokens {
                cfg.decode.min_tokens = m;
            }
            if max_tokens.is_some() {
                cfg.decode.max_tokens = max_tokens;
            }
            let outcome = cmd_decode(&cfg, &input, &output)?;
            println!("records={} failures={}", outcome.records, outcome.failures);
            Ok(outcome.exit_code())
        }
        Command::Rouge {
            input,
            candidates,
            references,
            output,
            preset,
            aggregation,
            no_case_fold,
            baselines,
        } => {
            match preset {
                Some(Preset::Duc) => cfg.eval = EvalConfig::duc(),
                Some(Preset::Default) => cfg.eval = EvalConfig::default(),
                None => {}
            }
            if let Some(a) = aggregation {
                cfg.eval.multi_ref_aggregation = match a {
                    AggregationArg::Max => Aggregation::Max,
                    AggregationArg::Average => Aggregation::Average,
                };
            }
            if no_case_fold {
                cfg.eval.case_fold = false;
            }
            let source = match (&input, &candidates, &references) {
                (Some(i), _, _) => RougeSource::Combined(i),
                (None, Some(c), Some(r)) => RougeSource::Split {
                    candidates: c,
                    references: r,
                },
                _ => {
                    return Err(PipelineError::Usage(
                        "rouge needs --input or both --candidates and --references".into(),
                    ))
                }
            };
            let rows = load_rouge_inputs(&source)?;
            let report = cmd_rouge(&cfg, &rows, baselines)?;
            print_json(&report, output.as_deref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

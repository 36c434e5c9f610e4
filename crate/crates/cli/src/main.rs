use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scopeforge::client::{ModelClient, PredictionRecord};
use scopeforge::ingest::{ingest_repository, load_records};
use scopeforge::jsonl::{read_jsonl, write_jsonl};
use scopeforge::pairs::{count_pairs, generate_pairs, leakage_scan, CompletionPair, Corpus, PairKind};
use scopeforge::pipeline::{
    load_eval_inputs, read_path_list, run_pipeline, run_sweep, score_and_report, split_pairs, validate_config,
    ConfigError, Layout, PipelineConfig, PipelineError, PromptRecord, RunMode,
};
use scopeforge::rag::{embed, index_build, Embedder, VectorIndex};
use scopeforge::scopes::{extract_all, read_scopes_jsonl, write_scopes_jsonl};

#[derive(Parser)]
#[command(name = "scopeforge", version, about = "Scope-aware code completion datasets, retrieval and evaluation")]
struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Walk a repository and store selected source files.
    Ingest {
        #[arg(long)]
        repo: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract and classify scope candidates from ingested files.
    Scopes {
        #[arg(long)]
        ingest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter scopes and emit completion pairs.
    Pairs(PairsArgs),
    /// Search training pairs for copies of test labels.
    LeakScan {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 1 when any leak is found.
        #[arg(long)]
        fail_on_leak: bool,
    },
    /// Build or query the retrieval index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Send prompts to a generation endpoint.
    Predict {
        #[arg(long)]
        endpoint: Option<String>,
        /// JSONL of {"test_id", "prompt"} records.
        #[arg(long)]
        tests: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Test pairs to join predictions with by id.
        #[arg(long)]
        tests: Option<PathBuf>,
        /// Directory for records.jsonl, report.csv and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline from the config file.
    Run {
        #[arg(long, default_value = "rag_eval")]
        mode: RunMode,
    },
    /// Regenerate dataset cards over the `[sweep]` grid.
    Sweep,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    ingest: Option<PathBuf>,
    #[arg(long)]
    scopes: Option<PathBuf>,
    /// Training pairs output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Primary pairs from holdout files.
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// File listing holdout paths, one per line.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long)]
    random_starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `builtin`, `remote:<url>`; defaults to the config.
        #[arg(long)]
        embedder: Option<String>,
    },
    Query {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, conflicts_with = "query_file")]
        text: Option<String>,
        #[arg(long)]
        query_file: Option<PathBuf>,
        #[arg(short, long, default_value_t = 3)]
        n: usize,
    },
}

fn load_config(path: Option<&Path>, needs_repo: bool) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    match validate_config(path) {
        Ok(cfg) => Ok(cfg),
        Err(ConfigError::Invalid(v)) if !needs_repo => {
            let rest: Vec<_> = v.into_iter().filter(|x| x.field != "repo_root" && x.field != "holdout").collect();
            if !rest.is_empty() {
                return Err(ConfigError::Invalid(rest).into());
            }
            let text = fs::read_to_string(path)?;
            Ok(PipelineConfig::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))?)
        }
        Err(e) => Err(e.into()),
    }
}

fn print_json(value: &impl serde::Serialize) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // A closed pipe (e.g. `| head`) is not an error for us.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

async fn dispatch(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Ingest { repo, out } => {
            let cfg = load_config(config, repo.is_none())?;
            let root = match repo.or(cfg.repo_root.clone()) {
                Some(r) => r,
                None => return Err(missing("repo_root", "pass --repo or set repo_root in the config")),
            };
            let out = out.unwrap_or_else(|| Layout::new(&cfg.output_dir).ingest_dir());
            let manifest = ingest_repository(&root, &cfg.ingest_options())?;
            manifest.write_to(&out)?;
            print_json(&manifest.summary());
        }
        Command::Scopes { ingest, out } => {
            let cfg = load_config(config, false)?;
            let layout = Layout::new(&cfg.output_dir);
            let records = load_records(&ingest.unwrap_or_else(|| layout.ingest_dir()))?;
            let scopes = extract_all(&records, &cfg.logging());
            let out = out.unwrap_or_else(|| layout.scopes());
            write_scopes_jsonl(&out, &scopes)?;
            let n: usize = scopes.iter().map(|f| f.candidates.len()).sum();
            print_json(&serde_json::json!({ "files": scopes.len(), "candidates": n, "out": out }));
        }
        Command::Pairs(args) => {
            let mut cfg = load_config(config, false)?;
            let layout = Layout::new(&cfg.output_dir);
            if let Some(k) = args.random_starts {
                cfg.random_starts.k = k;
            }
            if let Some(seed) = args.seed {
                cfg.random_starts.seed = seed;
            }
            let records = load_records(&args.ingest.unwrap_or_else(|| layout.ingest_dir()))?;
            let candidates = read_scopes_jsonl(&args.scopes.unwrap_or_else(|| layout.scopes()))?;
            let corpus = Corpus::from_records(&records);
            let set = generate_pairs(&candidates, &corpus, &cfg.pair_options())?;
            let mut holdout = cfg.holdout_paths()?;
            if let Some(list) = &args.holdout {
                holdout.extend(read_path_list(&fs::read_to_string(list).with_context(|| list.display().to_string())?));
            }
            let (train, test, _, unknown) = split_pairs(set.pairs, &holdout, &corpus);
            let out = args.out.unwrap_or_else(|| layout.train_pairs());
            write_jsonl(&out, &train)?;
            let test_out = args.test_out.unwrap_or_else(|| layout.test_pairs());
            write_jsonl(&test_out, &test)?;
            print_json(&serde_json::json!({
                "candidates": set.candidates_in,
                "kept": set.candidates_kept,
                "train": count_pairs(&train),
                "test": count_pairs(&test),
                "unknown_holdout_paths": unknown,
            }));
        }
        Command::LeakScan {
            train,
            test,
            out,
            fail_on_leak,
        } => {
            let cfg = load_config(config, false)?;
            let layout = Layout::new(&cfg.output_dir);
            let train: Vec<CompletionPair> = read_jsonl(&train.unwrap_or_else(|| layout.train_pairs()))?;
            let test: Vec<CompletionPair> = read_jsonl(&test.unwrap_or_else(|| layout.test_pairs()))?;
            let labels: Vec<(String, String)> = test.iter().map(|p| (p.pair_id.clone(), p.label.clone())).collect();
            let report = leakage_scan(&train, &labels, &cfg.eot_token);
            let out = out.unwrap_or_else(|| layout.leakage());
            if let Some(dir) = out.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
            print_json(&serde_json::json!({
                "findings": report.findings.len(),
                "leaked_tests": report.leaked_test_ids().len(),
                "out": out,
            }));
            if fail_on_leak && !report.is_clean() {
                bail!("{} test labels leaked into training data", report.leaked_test_ids().len());
            }
        }
        Command::Index(IndexCommand::Build { pairs, out, embedder }) => {
            let cfg = load_config(config, false)?;
            let layout = Layout::new(&cfg.output_dir);
            let embedder = match embedder {
                Some(spec) => Embedder::from_spec(&spec, cfg.embedder.dim)?,
                None => cfg.embedder()?,
            };
            let pairs: Vec<CompletionPair> = read_jsonl(&pairs.unwrap_or_else(|| layout.train_pairs()))?;
            let primary: Vec<CompletionPair> = pairs.into_iter().filter(|p| p.kind == PairKind::Primary).collect();
            let index = index_build(&primary, &embedder).await?;
            let out = out.unwrap_or_else(|| layout.index());
            index.write(&out)?;
            print_json(&serde_json::json!({
                "entries": index.len(),
                "dimension": index.dimension(),
                "embedder": index.embedder_id(),
                "out": out,
            }));
        }
        Command::Index(IndexCommand::Query {
            index,
            text,
            query_file,
            n,
        }) => {
            let cfg = load_config(config, false)?;
            let path = index.unwrap_or_else(|| Layout::new(&cfg.output_dir).index());
            let index = VectorIndex::read(&path).with_context(|| path.display().to_string())?;
            let text = match (text, query_file) {
                (Some(t), _) => t,
                (None, Some(f)) => fs::read_to_string(&f).with_context(|| f.display().to_string())?,
                (None, None) => bail!("pass --text or --query-file"),
            };
            let embedder = Embedder::from_spec(index.embedder_id(), index.dimension())?;
            let key = embed(&text, &embedder).await?;
            print_json(&index.knn_search(&key, n)?);
        }
        Command::Predict { endpoint, tests, out } => {
            let cfg = load_config(config, false)?;
            let Some(endpoint) = endpoint.or(cfg.endpoints.generate.clone()) else {
                return Err(missing("endpoints.generate", "pass --endpoint or set endpoints.generate"));
            };
            let mut client = ModelClient::new(&endpoint)?;
            client.max_in_flight = cfg.generation.max_in_flight;
            client.max_retries = cfg.generation.max_retries;
            let prompts: Vec<PromptRecord> = read_jsonl(&tests)?;
            let batch: Vec<(String, String)> = prompts.into_iter().map(|p| (p.test_id, p.prompt)).collect();
            let results = client.batch_predict(&batch, &cfg.generation_template()).await;
            let records: Vec<PredictionRecord> = results
                .iter()
                .map(|(id, r)| PredictionRecord::from_outcome(id.clone(), r))
                .collect();
            write_jsonl(&out, &records)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            print_json(&serde_json::json!({ "requests": records.len(), "failed": failed, "out": out }));
        }
        Command::Eval { predictions, tests, out } => {
            let cfg = load_config(config, false)?;
            let Some(predictions) = predictions.or(cfg.eval.predictions.clone()) else {
                return Err(missing("eval.predictions", "pass --predictions or set eval.predictions"));
            };
            let tests = tests.or(cfg.eval.tests.clone());
            let layout = match out {
                Some(dir) => Layout::new(dir.parent().map(Path::to_path_buf).unwrap_or_default()).with_eval_dir(dir),
                None => Layout::new(&cfg.output_dir),
            };
            let inputs = load_eval_inputs(&predictions, tests.as_deref()).map_err(|e| anyhow::anyhow!(e))?;
            let (_, summary) =
                score_and_report(&inputs, &cfg.eval_options(), &layout).map_err(|e| anyhow::anyhow!(e))?;
            print_json(&summary);
        }
        Command::Run { mode } => {
            let Some(path) = config else {
                return Err(missing("config", "`run` needs --config"));
            };
            let cfg = load_config(Some(path), mode != RunMode::EvalOnly)?;
            let outcome = run_pipeline(&cfg, mode).await?;
            print_json(&serde_json::json!({
                "mode": mode.as_str(),
                "manifest": outcome.manifest_path,
                "dataset_card": outcome.card,
                "report": outcome.report,
            }));
        }
        Command::Sweep => {
            let Some(path) = config else {
                return Err(missing("config", "`sweep` needs --config"));
            };
            let cfg = load_config(Some(path), true)?;
            print_json(&run_sweep(&cfg)?);
        }
    }
    Ok(())
}

fn missing(field: &str, message: &str) -> anyhow::Error {
    ConfigError::Invalid(vec![scopeforge::pipeline::FieldViolation {
        field: field.into(),
        message: message.into(),
    }])
    .into()
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some()
            || e.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_config)
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,scopeforge=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

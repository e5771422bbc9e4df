use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dialcoord::config::{Config, TaskSection};
use dialcoord::coordination::{
    evaluate_precision, train_ranker, RankerConfig, RankerModel, TrainConfig, TrainExample,
};
use dialcoord::corpus::{
    annotate_corpus, apply_split_manifest, hash_hex, load_checkpoint, load_corpus,
    read_annotations, save_centroids, save_checkpoint, CheckpointMeta, Corpus, DataDir, Split,
    StrategyMap,
};
use dialcoord::dialogue::{DialogueHistory, Speaker, Task};
use dialcoord::eval::{
    aspect_distribution, corpus_observations, run_interactive_session, transcript_observations,
    BaselineContext, BaselineKind, BaselineResponder, MetricReport, Responder, Seeker,
    SessionTranscript, DEFAULT_ANALYSIS_ROUNDS, MAX_ROUNDS,
};
use dialcoord::progression::{build_target_corpus, cluster_aspect, DEFAULT_K_MAX, DEFAULT_K_MIN};
use dialcoord::service::{serve, SessionManager};
use dialcoord::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dialcoord",
    version,
    about = "Multi-agent coordination engine for goal-oriented dialogue"
)]
struct Cli {
    /// Service/provider configuration (TOML). Defaults to the mock provider.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Use an untrained demo ranker for tasks without a data directory.
        #[arg(long)]
        demo: bool,
    },
    /// Interactive terminal conversation through the full pipeline.
    Chat {
        #[arg(long, default_value = "esc")]
        task: Task,
        #[arg(long)]
        demo: bool,
    },
    /// Annotate a corpus split with summaries, candidates and rank labels.
    Annotate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "train")]
        split: SplitArg,
        /// Skip turns already present in the output file.
        #[arg(long)]
        resume: bool,
    },
    /// Cluster target-state embeddings per aspect.
    Cluster {
        #[command(flatten)]
        data: DataArgs,
        /// Aspect id or `all`.
        #[arg(long, default_value = "all")]
        aspect: String,
        #[arg(long, default_value_t = DEFAULT_K_MIN)]
        k_min: usize,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the ranker on annotated turns.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 256)]
        d_b: usize,
        #[arg(long, default_value_t = 128)]
        d_h: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ablation: replace the progression signals with zeros.
        #[arg(long)]
        zero_progression: bool,
    },
    /// Evaluation harness.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Analytics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, default_value = "esc")]
    task: Task,
    /// Corpus file (native JSON, ESConv JSON list, or P4G CSV).
    #[arg(long)]
    corpus: PathBuf,
    /// `{train, val, test}` id lists.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Data directory for annotations, centroids and the model.
    #[arg(long, alias = "data")]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Reference-based metrics over two line-aligned files.
    Static {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Precision@n of a trained ranker on annotated turns.
    Ranking {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Simulated-seeker sessions.
    Interactive {
        #[arg(long, default_value = "cooper")]
        system: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// File with one problem description per line.
        #[arg(long)]
        problems: PathBuf,
        /// Transcript output (one JSON document per line).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = MAX_ROUNDS)]
        max_rounds: usize,
        #[arg(long)]
        demo: bool,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-round prioritized-aspect distribution.
    Aspects {
        /// Transcripts written by `eval interactive`.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Or: the ground-truth distribution of a corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "esc")]
        task: Task,
        #[arg(long, default_value_t = DEFAULT_ANALYSIS_ROUNDS)]
        rounds: usize,
    },
}

fn load_config(path: Option<&Path>, demo: bool) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if demo {
        for task in Task::all() {
            cfg.tasks
                .entry(task)
                .or_insert_with(TaskSection::default)
                .demo = true;
        }
    }
    Ok(cfg)
}

fn open_corpus(d: &DataArgs) -> Result<Corpus> {
    let mut c = load_corpus(&d.corpus, d.task)?;
    if let Some(s) = &d.splits {
        apply_split_manifest(&mut c, s)?;
    }
    Ok(c)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::to_owned)
        .collect())
}

fn examples_for(
    path: &Path,
    corpus: &Corpus,
    cfg: &Config,
    gateway: &dialcoord::gateway::Gateway,
) -> Result<Vec<TrainExample>> {
    let labels = cfg.profile(corpus.task)?.labels;
    let turns = read_annotations(path)?;
    turns
        .par_iter()
        .map(|t| {
            let d = corpus.get(&t.dialogue_id).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "annotation refers to unknown dialogue {}",
                    t.dialogue_id
                ))
            })?;
            let prefix = t.prefix(d, corpus.task)?;
            t.to_train_example(&prefix, &labels, gateway)
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Serve { port, host, demo } => {
            let cfg = load_config(config_path, demo)?;
            let pipelines = cfg.pipelines()?;
            if pipelines.is_empty() {
                tracing::warn!("no task has a trained model; session creation will fail");
            }
            let manager = Arc::new(match &cfg.event_log {
                Some(p) => SessionManager::with_log(pipelines, p)?,
                None => SessionManager::new(pipelines),
            });
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad address: {e}")))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(manager, addr))?;
        }
        Command::Chat { task, demo } => {
            let cfg = load_config(config_path, demo)?;
            let pipelines = cfg.pipelines()?;
            let pipeline = pipelines.get(&task).ok_or(Error::ModelNotLoaded)?;
            let mut history = DialogueHistory::new(task);
            let stdin = std::io::stdin();
            let user_label = pipeline.profile.labels.user.clone();
            let system_label = pipeline.profile.labels.system.clone();
            print!("{user_label}: ");
            std::io::stdout().flush()?;
            for line in stdin.lock().lines() {
                let line = line?;
                if line.trim().is_empty() {
                    print!("{user_label}: ");
                    std::io::stdout().flush()?;
                    continue;
                }
                if matches!(line.trim(), "/quit" | "/exit") {
                    break;
                }
                history.push(Speaker::User, line.trim())?;
                match pipeline.run_turn(&history) {
                    Ok(trace) => {
                        let names: Vec<String> = trace
                            .top_k
                            .iter()
                            .map(|c| {
                                format!(
                                    "[{}] {}",
                                    pipeline.profile.aspect_name(c.aspect_id).unwrap_or("?"),
                                    c.text
                                )
                            })
                            .collect();
                        eprintln!("  top topics: {}", names.join(" | "));
                        println!("{system_label}: {}", trace.utterance.text);
                        history.push_utterance(trace.utterance)?;
                    }
                    Err(e) => eprintln!("error: {e}"),
                }
                print!("{user_label}: ");
                std::io::stdout().flush()?;
            }
        }
        Command::Annotate {
            data,
            split,
            resume,
        } => {
            let cfg = load_config(config_path, false)?;
            let corpus = open_corpus(&data)?;
            let dialogues = corpus.split(split.split());
            if dialogues.is_empty() {
                return Err(Error::EmptyCorpus("selected split"));
            }
            let dir = DataDir::new(&data.out);
            let out = dir.annotations(split.name());
            let report = annotate_corpus(
                &dialogues,
                &cfg.profile(data.task)?,
                &StrategyMap::builtin(data.task),
                &cfg.gateway(),
                &out,
                resume,
            )?;
            let hash = hash_hex(&corpus.content_hash());
            dir.update_manifest(|m| {
                m.task = Some(data.task);
                m.corpus_hash = Some(hash);
                let name = out.display().to_string();
                if !m.annotations.contains(&name) {
                    m.annotations.push(name);
                }
            })?;
            print_json(&report)?;
        }
        Command::Cluster {
            data,
            aspect,
            k_min,
            k_max,
            seed,
        } => {
            let cfg = load_config(config_path, false)?;
            let corpus = open_corpus(&data)?;
            let profile = cfg.profile(data.task)?;
            let gateway = cfg.gateway();
            let aspects: Vec<usize> = if aspect == "all" {
                (1..=profile.n_aspects()).collect()
            } else {
                vec![aspect
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad aspect `{aspect}`")))?]
            };
            let train: Vec<_> = corpus.split(Split::Train).into_iter().cloned().collect();
            let dir = DataDir::new(&data.out);
            let hash = hash_hex(&corpus.content_hash());
            let mut summary = Vec::new();
            for a in aspects {
                let cfg_a = profile
                    .aspects
                    .get(a.wrapping_sub(1))
                    .ok_or_else(|| Error::InvalidInput(format!("no aspect {a}")))?;
                let target = build_target_corpus(&train, data.task, cfg_a, &gateway)?;
                let set = cluster_aspect(&target, k_min, k_max, seed)?;
                let path = dir.centroids(a);
                save_centroids(&path, data.task, &set, Some(&hash))?;
                summary.push(serde_json::json!({
                    "aspect_id": a, "k": set.k, "silhouette": set.silhouette,
                    "points": target.embeddings.nrows(), "path": path,
                }));
            }
            dir.update_manifest(|m| {
                m.task = Some(data.task);
                m.corpus_hash = Some(hash);
                m.n_d = Some(gateway.dim());
                m.centroids = (1..=profile.n_aspects())
                    .map(|a| dir.centroids(a).display().to_string())
                    .collect();
            })?;
            print_json(&summary)?;
        }
        Command::Train {
            data,
            d_b,
            d_h,
            epochs,
            lr,
            batch_size,
            alpha,
            margin,
            seed,
            zero_progression,
        } => {
            let cfg = load_config(config_path, false)?;
            let corpus = open_corpus(&data)?;
            let gateway = cfg.gateway();
            let profile = cfg.profile(data.task)?;
            let dir = DataDir::new(&data.out);
            let manifest = dir.read_manifest()?;
            let centroids = dir.load_all_centroids(profile.n_aspects(), Some(gateway.dim()))?;
            let train = examples_for(&dir.annotations("train"), &corpus, &cfg, &gateway)?;
            let val_path = dir.annotations("val");
            let val = if val_path.exists() {
                examples_for(&val_path, &corpus, &cfg, &gateway)?
            } else {
                Vec::new()
            };
            let mut tc = TrainConfig {
                seed,
                zero_progression,
                checkpoint_dir: Some(dir.checkpoints()),
                ..TrainConfig::default()
            };
            if let Some(v) = epochs {
                tc.epochs = v;
            }
            if let Some(v) = lr {
                tc.learning_rate = v;
            }
            if let Some(v) = batch_size {
                tc.batch_size = v;
            }
            if let Some(v) = alpha {
                tc.alpha = v;
            }
            if let Some(v) = margin {
                tc.margin = v;
            }
            let init = RankerModel::new(
                RankerConfig::new(profile.n_aspects(), gateway.dim())
                    .with_widths(d_b, d_h)
                    .with_seed(seed),
            );
            let views: Vec<_> = centroids.iter().map(|c| c.centroids.view()).collect();
            let outcome = train_ranker(init, &views, &train, &val, &tc)?;
            let best = outcome
                .history
                .iter()
                .find(|h| h.epoch == outcome.best_epoch);
            save_checkpoint(
                &dir.model(),
                &outcome.model,
                &CheckpointMeta {
                    epoch: outcome.best_epoch,
                    val_p3: best.map(|h| h.val_p3).filter(|v| v.is_finite()),
                    corpus_hash: manifest.corpus_hash.clone(),
                },
            )?;
            dir.update_manifest(|m| m.model = Some(dir.model().display().to_string()))?;
            print_json(&serde_json::json!({
                "best_epoch": outcome.best_epoch,
                "history": outcome.history,
                "model": dir.model(),
            }))?;
        }
        Command::Eval(EvalCommand::Static { pred, reference }) => {
            let report = MetricReport::compute(&read_lines(&pred)?, &read_lines(&reference)?)?;
            print!("{}", report.table());
            print_json(&report)?;
        }
        Command::Eval(EvalCommand::Ranking {
            data,
            annotations,
            model,
        }) => {
            let cfg = load_config(config_path, false)?;
            let corpus = open_corpus(&data)?;
            let gateway = cfg.gateway();
            let profile = cfg.profile(data.task)?;
            let dir = DataDir::new(&data.out);
            let hash = dir.read_manifest()?.corpus_hash;
            let (model, _) =
                load_checkpoint(&model.unwrap_or_else(|| dir.model()), None, hash.as_deref())?;
            let centroids = dir.load_all_centroids(profile.n_aspects(), Some(gateway.dim()))?;
            let views: Vec<_> = centroids.iter().map(|c| c.centroids.view()).collect();
            let examples = examples_for(&annotations, &corpus, &cfg, &gateway)?;
            let mut report = serde_json::Map::new();
            for n in [1, 3, 5] {
                report.insert(
                    format!("p_at_{n}"),
                    evaluate_precision(&model, &views, &examples, n, false)?.into(),
                );
            }
            report.insert("n_examples".into(), examples.len().into());
            print_json(&report)?;
        }
        Command::Eval(EvalCommand::Interactive {
            system,
            n,
            problems,
            out,
            max_rounds,
            demo,
        }) => {
            let cfg = load_config(config_path, demo)?;
            let gateway = cfg.gateway();
            let templates = cfg.profile(Task::Esc)?.templates;
            let problems: Vec<String> = read_lines(&problems)?
                .into_iter()
                .filter(|l| !l.trim().is_empty())
                .take(n)
                .collect();
            let responder: Box<dyn Responder> = match system.as_str() {
                "cooper" => {
                    let mut p = cfg.pipelines()?;
                    let p = p.remove(&Task::Esc).ok_or(Error::ModelNotLoaded)?;
                    Box::new(
                        Arc::try_unwrap(p)
                            .map_err(|_| Error::InvalidInput("pipeline shared".into()))?,
                    )
                }
                other => Box::new(BaselineResponder {
                    kind: other.parse::<BaselineKind>()?,
                    templates: templates.clone(),
                    context: BaselineContext::default(),
                    gateway: gateway.clone(),
                }),
            };
            let seeker = Seeker {
                templates: &templates,
                gateway: &gateway,
            };
            let transcripts: Vec<SessionTranscript> = problems
                .par_iter()
                .map(|p| run_interactive_session(responder.as_ref(), &seeker, p, max_rounds))
                .collect();
            let mut buf = Vec::new();
            for t in &transcripts {
                serde_json::to_writer(&mut buf, t)?;
                buf.push(b'\n');
            }
            std::fs::write(&out, buf)?;
            let reasons: Vec<_> = transcripts.iter().map(|t| t.termination_reason).collect();
            print_json(
                &serde_json::json!({ "sessions": transcripts.len(), "termination": reasons, "out": out }),
            )?;
        }
        Command::Analyze(AnalyzeCommand::Aspects {
            input,
            corpus,
            task,
            rounds,
        }) => {
            let observations = match (input, corpus) {
                (Some(path), _) => {
                    let transcripts = read_lines(&path)?
                        .iter()
                        .filter(|l| !l.trim().is_empty())
                        .map(|l| serde_json::from_str::<SessionTranscript>(l).map_err(Error::from))
                        .collect::<Result<Vec<_>>>()?;
                    transcript_observations(&transcripts)
                }
                (None, Some(path)) => {
                    let c = load_corpus(&path, task)?;
                    let ds: Vec<_> = c.dialogues.iter().collect();
                    corpus_observations(&ds, &StrategyMap::builtin(task))
                }
                (None, None) => return Err(Error::InvalidInput("pass --in or --corpus".into())),
            };
            print_json(&aspect_distribution(&observations, 3, rounds))?;
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error [{}]: {e}", e.code());
        std::process::exit(1);
    }
}

//! `muse` command-line interface: train, eval, analyze.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use muse::eval::{evaluate, format_table, write_records, TaskRegistry};
use muse::graph::{load_graph, neighborhood_similarity, Graph};
use muse::model::{read_checkpoint, write_checkpoint, Checkpoint, FusionRegistry};
use muse::training::{embed, train};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "muse", version, about = "Multi-view contrastive node representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write `model.ckpt`, `train_report.jsonl` and `config.resolved.toml`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate frozen embeddings from a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write ego/neighborhood similarity values and a 50-bin histogram.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes with their process exit codes.
enum Failure {
    Config(String),
    NonFinite(String),
    Checkpoint(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::NonFinite(_) => 3,
            Failure::Checkpoint(_) => 4,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<muse::Error> for Failure {
    fn from(e: muse::Error) -> Self {
        match e {
            muse::Error::NonFinite { .. } => Failure::NonFinite(e.to_string()),
            muse::Error::Checkpoint(_) => Failure::Checkpoint(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type CmdResult = Result<(), Failure>;

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_dataset(dir: &Path) -> anyhow::Result<Graph> {
    load_graph(dir).with_context(|| format!("cannot load dataset {}", dir.display()))
}

fn cmd_train(config: &Path, dataset: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>) -> CmdResult {
    let mut cfg = RunConfig::load(config)?;
    if dataset.is_some() {
        cfg.dataset_dir = dataset;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let cfg = cfg.resolve()?;
    let dataset = cfg.dataset_dir.clone().ok_or_else(|| Failure::Config("dataset_dir is not set".into()))?;
    let out = cfg.output_dir.clone().ok_or_else(|| Failure::Config("output_dir is not set".into()))?;

    let g = load_dataset(&dataset)?;
    log::info!("training on {} ({} nodes, {} edges)", g.name(), g.n_nodes(), g.n_edges());
    let report = train(&g, &cfg.train)?;

    create_dir(&out)?;
    let ckpt = Checkpoint { params: report.params.clone(), fusion: report.fusion.clone() };
    write_checkpoint(&ckpt, out.join("model.ckpt"))?;
    report.write_jsonl(out.join("train_report.jsonl"), !cfg.test_mode)?;
    write(&out.join("config.resolved.toml"), &cfg.to_toml())?;

    let last = report.records.last().expect("at least one epoch");
    println!(
        "trained {} epochs{}; final contrast loss {:.6}; outputs in {}",
        report.records.len(),
        if report.stopped_early { " (early stop)" } else { "" },
        last.contrast_loss,
        out.display()
    );
    Ok(())
}

struct EvalArgs {
    checkpoint: PathBuf,
    dataset: Option<PathBuf>,
    config: Option<PathBuf>,
    task: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = args.task {
        cfg.eval.task = t;
    }
    if let Some(s) = args.seed {
        cfg.eval.seed = s;
    }
    if args.dataset.is_some() {
        cfg.dataset_dir = args.dataset;
    }
    let cfg = cfg.resolve()?;
    TaskRegistry::builtin().create(&cfg.eval.task).map_err(|e| Failure::Config(e.to_string()))?;
    let dataset = cfg.dataset_dir.clone().ok_or_else(|| Failure::Config("no dataset given".into()))?;

    let ckpt = read_checkpoint(&args.checkpoint).map_err(|e| Failure::Checkpoint(e.to_string()))?;
    let g = load_dataset(&dataset)?;
    if ckpt.params.n_features() != g.n_features() {
        return Err(Failure::Checkpoint(format!(
            "checkpoint expects {} features, dataset {} has {}",
            ckpt.params.n_features(),
            g.name(),
            g.n_features()
        )));
    }
    let strategy = FusionRegistry::builtin().create(&ckpt.fusion).map_err(|e| Failure::Checkpoint(e.to_string()))?;
    let h = embed(&g, &ckpt.params, strategy.as_ref())?;
    let records = evaluate(&g, &h, &cfg.eval)?;

    let out =
        args.out.or_else(|| args.checkpoint.parent().map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    let path = out.join(format!("eval_{}.jsonl", cfg.eval.task));
    write_records(&records, &path)?;
    print!("{}", format_table(&records));
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_analyze(dataset: &Path, out: &Path) -> CmdResult {
    let g = load_dataset(dataset)?;
    let sim = neighborhood_similarity(&g);
    let hist = sim.histogram();

    let mut values = String::from("node,similarity,isolated\n");
    for (i, (v, iso)) in sim.values.iter().zip(&sim.isolated).enumerate() {
        writeln!(values, "{i},{v},{iso}").expect("write to string");
    }
    let mut bins = String::from("bin,lo,hi,count\n");
    for (b, c) in hist.counts.iter().enumerate() {
        let (lo, hi) = hist.bin_edges(b);
        writeln!(bins, "{b},{lo},{hi},{c}").expect("write to string");
    }
    create_dir(out)?;
    write(&out.join("similarity.csv"), &values)?;
    write(&out.join("histogram.csv"), &bins)?;
    println!(
        "{}: {} non-isolated nodes binned, {} isolated",
        g.name(),
        hist.total(),
        sim.isolated.iter().filter(|&&x| x).count()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train { config, dataset, out, seed } => cmd_train(&config, dataset, out, seed),
        Command::Eval { checkpoint, dataset, config, task, out, seed } => {
            cmd_eval(EvalArgs { checkpoint, dataset, config, task, out, seed })
        }
        Command::Analyze { dataset, out } => cmd_analyze(&dataset, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) => format!("config error: {m}"),
                Failure::NonFinite(m) => format!("training diverged: {m}"),
                Failure::Checkpoint(m) => format!("checkpoint error: {m}"),
                Failure::Other(e) => format!("{e:#}"),
            };
            eprintln!("muse: {msg}");
            ExitCode::from(f.code())
        }
    }
}

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use perspex_core::data::{generate_corpus_with, write_csv, CorpusShape, LabeledDataset};
use perspex_core::meta::{train_all, TrainingOptions};
use perspex_core::metrics::{MetricRow, DEFAULT_N_VALUES};
use perspex_core::mip::LowerBoundMode;
use perspex_core::pipeline::{load_dataset, run_exploration, Home, RunConfig, RunResult, RunStatus, RunStore, Seeds, Strategy, HOME_ENV};
use perspex_core::{Error, Result};

#[derive(Parser)]
#[command(name = "perspex", version, about = "Budgeted outlier exploration")]
struct Cli {
    /// Root directory holding datasets/, models/ and runs/.
    #[arg(long, env = HOME_ENV, default_value = ".", global = true)]
    home: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one exploration and store the result.
    Explore(ExploreArgs),
    /// Train the cost and utility models on a labeled corpus.
    TrainMeta(TrainArgs),
    /// Print precision, recall and F at N for a stored run.
    Evaluate(EvaluateArgs),
    /// Write a synthetic labeled corpus as CSV files.
    GenCorpus(GenArgs),
    /// Serve the HTTP run-management API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ExploreArgs {
    /// CSV path, or a dataset name under <home>/datasets.
    #[arg(long)]
    dataset: String,
    /// Budget in seconds of estimated detector cost.
    #[arg(long, default_value_t = 0.5)]
    budget: f64,
    /// Number of perspectives.
    #[arg(long, default_value_t = 1)]
    g: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "MIP", value_parser = parse_strategy)]
    strategy: Strategy,
    /// Model bundle; defaults to <home>/models/bundle.json.
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Diversity bounds: `strict` enforces every share in full; `adaptive`
    /// caps each share at its group's pool and scales all of them down
    /// together until a selection fits the budget.
    #[arg(long, value_enum, default_value = "strict")]
    bounds: Bounds,
    /// Output file; defaults to <home>/runs/<run id>.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of labeled CSV files.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Bundle output; defaults to <home>/models/bundle.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// Cap on subspaces executed per dataset.
    #[arg(long)]
    max_subspaces: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bounds {
    Strict,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Stored run file.
    #[arg(long)]
    run: PathBuf,
    /// CSV with a label column; defaults to the labels stored in the run.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_N_VALUES)]
    n: Vec<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Row count range, as MIN,MAX.
    #[arg(long, value_parser = parse_range)]
    rows: Option<(usize, usize)>,
    /// Column count range, as MIN,MAX.
    #[arg(long, value_parser = parse_range)]
    columns: Option<(usize, usize)>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected MIN,MAX, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(lo)?, parse(hi)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let home = Home::new(cli.home);
    let outcome = match cli.command {
        Command::Explore(a) => explore(a, &home),
        Command::TrainMeta(a) => train_meta(a, &home),
        Command::Evaluate(a) => evaluate(a),
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Serve(a) => serve(a, home),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

fn explore(a: ExploreArgs, home: &Home) -> Result<ExitCode> {
    home.resolve_dataset(&a.dataset)?;
    let config = RunConfig {
        dataset: a.dataset,
        label_column: a.label_column,
        t_total: a.budget,
        g: a.g,
        k: a.k,
        lambda: a.lambda,
        alpha: a.alpha,
        gamma: a.gamma,
        seeds: Seeds::all(a.seed),
        models: a.models,
        strategy: a.strategy,
        lower_bounds: match a.bounds {
            Bounds::Strict => LowerBoundMode::Strict,
            Bounds::Adaptive => LowerBoundMode::Adaptive,
        },
        workers: a.workers,
        ..RunConfig::default()
    };
    let result = run_exploration(&config, home);
    let path = match a.out {
        Some(p) => {
            result.save(&p)?;
            p
        }
        None => RunStore::open(home.runs_dir())?.save(&result)?,
    };
    let summary = json!({
        "run_id": result.run_id,
        "status": result.status,
        "path": path.display().to_string(),
        "detectors": result.detector_results.len(),
        "estimated_cost": result.executed_estimated_cost(),
        "wall_clock": result.executed_wall_clock(),
        "metrics": result.metrics,
        "error": result.error,
    });
    if result.status == RunStatus::Completed {
        println!("{summary}");
        Ok(ExitCode::SUCCESS)
    } else {
        let kind = if result.status == RunStatus::Infeasible { "infeasible" } else { "run_failed" };
        eprintln!("{}", json!({ "error": kind, "message": result.error, "run": summary }));
        Ok(ExitCode::FAILURE)
    }
}

fn read_corpus(dir: &Path, label_column: Option<&str>) -> Result<Vec<LabeledDataset>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let (data, labels) = load_dataset(p, Some(label_column.unwrap_or("label")))?;
            LabeledDataset::new(data, labels.expect("label column requested"))
        })
        .collect()
}

fn train_meta(a: TrainArgs, home: &Home) -> Result<ExitCode> {
    let corpus = read_corpus(&a.corpus, a.label_column.as_deref())?;
    let options = TrainingOptions {
        max_subspaces_per_dataset: a.max_subspaces,
        ..TrainingOptions::default()
    };
    let report = train_all(&corpus, a.split_seed, &options)?;
    let out = a.out.unwrap_or_else(|| home.default_bundle());
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    report.bundle.save(&out)?;
    println!(
        "{}",
        json!({ "bundle": out.display().to_string(), "datasets": corpus.len(), "held_out": report.held_out })
    );
    Ok(ExitCode::SUCCESS)
}

fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let run = RunResult::load(&a.run)?;
    let labels = match &a.labels {
        Some(p) => Some(
            load_dataset(p, Some(&a.label_column))?
                .1
                .expect("label column requested"),
        ),
        None => None,
    };
    let rows = run.evaluate(labels.as_deref(), &a.n)?;
    match a.format {
        Format::Json => println!("{}", json!({ "run_id": run.run_id, "rows": rows })),
        Format::Text => print!("{}", text_table(&rows)),
    }
    Ok(ExitCode::SUCCESS)
}

fn text_table(rows: &[MetricRow]) -> String {
    let mut s = format!("{:>4}  {:>9}  {:>9}  {:>9}\n", "N", "Precision", "Recall", "F");
    for r in rows {
        s.push_str(&format!("{:>4}  {:>9.4}  {:>9.4}  {:>9.4}\n", r.n, r.precision, r.recall, r.f));
    }
    s
}

fn gen_corpus(a: GenArgs) -> Result<ExitCode> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let mut shape = CorpusShape::default();
    if let Some(r) = a.rows {
        shape.n_range = r;
    }
    if let Some(c) = a.columns {
        shape.m_range = c;
    }
    let corpus = generate_corpus_with(a.count, a.seed, &shape)?;
    let width = a.count.max(1).to_string().len().max(3);
    for (i, d) in corpus.iter().enumerate() {
        let path = a.out.join(format!("synthetic_{i:0width$}.csv"));
        write_csv(&path, &d.data, Some(("label", &d.labels)))?;
    }
    println!("{}", json!({ "written": corpus.len(), "dir": a.out.display().to_string() }));
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs, home: Home) -> Result<ExitCode> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from("tokio runtime"),
        source: e,
    })?;
    rt.block_on(perspex_core::server::serve(a.bind, home))?;
    Ok(ExitCode::SUCCESS)
}

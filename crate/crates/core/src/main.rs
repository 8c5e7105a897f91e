use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lgg::graph::{build_lgg, Bandwidth, GraphConfig, Kernel};
use lgg::harness::{default_presets, run_zoo, ZooSpec};
use lgg::mixup::MixupPlan;
use lgg::refnet::RefNet;
use lgg::scoring::{run_score, Embedder, Method, ScorePreset, VertexPolicy};
use lgg::tensor_io::{read_array_file, DatasetManifest};
use lgg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lgg",
    version,
    about = "Latent geometry graph scores for trained classifiers"
)]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a graph from one embedding matrix.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Score a dataset manifest and print the final score.
    Score(ScoreArgs),
    /// Train and score a model zoo; prints tau_vpm=<value>.
    Experiment(ExperimentArgs),
    /// Mixup plan generation.
    #[command(subcommand)]
    Mixup(MixupCommand),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Write the graph JSON dump.
    Build(GraphArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Cosine,
    Rbf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Vr,
    Wcv,
    Vpm,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Mixed,
    Original,
    Both,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum)]
    kernel: KernelArg,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long)]
    binarize: bool,
    #[arg(long)]
    symmetrize: bool,
    #[arg(long)]
    normalize: bool,
    /// Explicit RBF bandwidth; the median heuristic is used otherwise.
    #[arg(long, value_parser = positive_f64)]
    gamma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Number of graphs (default from the method preset).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    graphs: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = positive_f64)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    vertex_policy: Option<PolicyArg>,
    /// Vertices per graph before the per-class minimum.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    vertices: Option<u64>,
    /// Model file used to embed mixed inputs from the manifest's `inputs`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Zoo spec JSON (default: the bundled 12-model zoo).
    #[arg(long)]
    zoo: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum MixupCommand {
    /// Write a plan JSON for the exporter.
    Plan(PlanArgs),
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    sources: u64,
    #[arg(long, value_parser = positive_f64)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite number > 0, got {s}"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn graph_build(a: GraphArgs) -> Result<()> {
    let x = read_array_file(&a.embeddings)?;
    let cfg = GraphConfig {
        kernel: match a.kernel {
            KernelArg::Cosine => Kernel::Cosine,
            KernelArg::Rbf => Kernel::Rbf,
        },
        k: a.k as usize,
        binarize: a.binarize,
        symmetrize: a.symmetrize,
        normalize: a.normalize,
        rbf_bandwidth: a.gamma.map_or(Bandwidth::MedianHeuristic, Bandwidth::Gamma),
    };
    let g = build_lgg(&x, &cfg)?;
    eprintln!(
        "graph: {} vertices, {} stored edges",
        g.n(),
        g.edges().len()
    );
    write_text(&a.out, &g.to_json())
}

fn score(a: ScoreArgs) -> Result<()> {
    let method = match a.method {
        MethodArg::Vr => Method::Vr,
        MethodArg::Wcv => Method::Wcv,
        MethodArg::Vpm => Method::Vpm,
    };
    let mut preset = ScorePreset::for_method(method);
    if let Some(p) = a.vertex_policy {
        preset = preset.with_vertex_policy(match p {
            PolicyArg::Mixed => VertexPolicy::MixedOnly,
            PolicyArg::Original => VertexPolicy::Original,
            PolicyArg::Both => VertexPolicy::OriginalPlusMixed,
        });
    }
    if let Some(g) = a.graphs {
        preset.n_graphs = g as usize;
    }
    if let Some(alpha) = a.alpha {
        preset.alpha = Some(alpha);
    }
    if let Some(v) = a.vertices {
        preset.target_vertices = v as usize;
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let model = a.model.as_deref().map(RefNet::load).transpose()?;
    let embedder = model.as_ref().map(|m| m as &dyn Embedder);
    let report = run_score(&manifest, &preset, a.seed, embedder)?;
    for g in &report.graphs {
        for s in &g.shortfall {
            eprintln!(
                "warning: graph {}: class {} has {} samples, wanted {}",
                g.index, s.class, s.available, s.wanted
            );
        }
    }
    write_text(&a.out, &report.to_json())?;
    println!("{}", report.final_score);
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let zoo = match &a.zoo {
        Some(path) => ZooSpec::load(path)?,
        None => ZooSpec::default_zoo(),
    };
    let report = run_zoo(&zoo, &default_presets(), a.seed)?;
    write_text(&a.out_dir.join("zoo.csv"), &report.to_csv())?;
    write_text(&a.out_dir.join("zoo.json"), &report.to_json())?;
    for r in &report.rows {
        for (m, e) in &r.errors {
            eprintln!("warning: model {} {m}: {e}", r.model_id);
        }
    }
    match report.tau(Method::Vpm) {
        Some(t) => println!("tau_vpm={t}"),
        None => println!("tau_vpm=nan"),
    }
    Ok(())
}

fn mixup_plan(a: PlanArgs) -> Result<()> {
    let plan = MixupPlan::generate(a.n as usize, a.sources as usize, a.alpha, a.seed)?;
    plan.save(&a.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Graph(GraphCommand::Build(a)) => graph_build(a),
        Command::Score(a) => score(a),
        Command::Experiment(a) => experiment(a),
        Command::Mixup(MixupCommand::Plan(a)) => mixup_plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

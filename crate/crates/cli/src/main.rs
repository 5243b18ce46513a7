mod manifest;
mod stats;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tagforest::anchor::{AnchoredRecord, Anchorer, DEFAULT_MIN_SIMILARITY};
use tagforest::builder::{build_tree, Branching, RefinerKind, TreeBuildConfig};
use tagforest::io::{
    load_anchored, load_embeddings, load_instances, load_target, load_tree, normalize_scores, save_anchored,
    save_target, save_tree, EmbeddingTable, Normalization,
};
use tagforest::objective::ObjectiveConfig;
use tagforest::sampler::{derive_target, export_subset, save_trace, Mode, Sampler, SamplerConfig};
use tagforest::report::ReportEntry;
use tagforest::Instance;

use manifest::RunRecord;

/// An error caused by the invocation or its inputs rather than by the tool.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "tagforest", version, about = "Tag-tree construction and tree-aware data selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a tag vocabulary into a tree.
    BuildTree(BuildTreeArgs),
    /// Map each instance's tags onto tree leaves.
    Anchor(AnchorArgs),
    /// Derive a target leaf distribution from an anchored reference set.
    DeriveTarget(DeriveTargetArgs),
    /// Greedily select a subset of an anchored pool.
    Sample(SampleArgs),
    /// Summarize the leaf distribution of an anchored or selected file.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RefinerArg {
    Default,
    Identity,
}

#[derive(Args)]
struct BuildTreeArgs {
    /// Tag vocabulary, one tag per line.
    #[arg(long)]
    tags: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Maximum leaf depth.
    #[arg(long, default_value_t = 10)]
    depth: usize,
    /// Clusters per level. Overrides --ratio.
    #[arg(long)]
    branching: Option<usize>,
    /// Nodes per cluster when --branching is not given.
    #[arg(long, default_value_t = 10.0)]
    ratio: f64,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = RefinerArg::Default)]
    refiner: RefinerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tree.json")]
    out: PathBuf,
}

#[derive(Args)]
struct AnchorArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Tag embeddings; without it only verbatim leaf names and hashed
    /// vectors are available.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_SIMILARITY)]
    min_sim: f64,
    #[arg(long, default_value = "anchored.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct DeriveTargetArgs {
    #[arg(long)]
    tree: PathBuf,
    /// Anchored reference set.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value = "target.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    General,
    Aligned,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    anchored: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.85)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Target leaf distribution as a JSON object of leaf name to weight.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Defaults to aligned when --lambda > 0, general otherwise.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Original pool; when given, selected lines are exported from it
    /// instead of from the anchored file.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Scoring workers, capped by TAGFOREST_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "subset.jsonl")]
    out: PathBuf,
    /// Defaults to trace.json next to --out.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// A subset or anchored JSONL file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Used for score quantiles when lines carry no selection score.
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.85)]
    gamma: f64,
    /// Also write the report here, with a manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("TAGFOREST_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(usage(format!("TAGFOREST_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn workers(requested: Option<usize>, cap: Option<usize>) -> usize {
    let n = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.map_or(n, |c| n.min(c)).max(1)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn print_entries(entries: &[ReportEntry]) {
    for e in entries {
        eprintln!("{:?}: {}: {}", e.severity, e.location, e.message);
    }
}

fn cmd_build_tree(args: BuildTreeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.tags).map_err(|e| usage(format!("{}: {e}", args.tags.display())))?;
    let tags: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let embeddings = load_embeddings(&args.embeddings)?;
    let branching = match args.branching {
        Some(k) => Branching::Clusters(k),
        None => Branching::Ratio(args.ratio),
    };
    let config = TreeBuildConfig {
        depth_limit: args.depth,
        branching,
        seed: args.seed,
        kmeans_iters: args.iters,
        restarts: args.restarts,
        refiner: match args.refiner {
            RefinerArg::Default => RefinerKind::Default,
            RefinerArg::Identity => RefinerKind::Identity,
        },
    };

    let mut run = RunRecord::start("build-tree", args.seed);
    run.param("depth", args.depth)
        .param("branching", args.branching)
        .param("ratio", args.ratio)
        .param("restarts", args.restarts)
        .param("iters", args.iters)
        .param("refiner", args.refiner)
        .input(&args.tags)
        .input(&args.embeddings);

    let (tree, report) = build_tree(&tags, &embeddings, &config)?;
    print_entries(&report.entries);
    save_tree(&tree, &args.out)?;
    run.finish(&[&args.out])?;
    println!(
        "tree: {} nodes, {} leaves, depth {}",
        tree.len(),
        tree.leaf_ids().len(),
        tree.max_depth()
    );
    Ok(())
}

#[derive(Serialize)]
struct DropLine<'a> {
    id: &'a str,
    tag: &'a str,
}

#[derive(Serialize)]
struct DropReport<'a> {
    dropped: Vec<DropLine<'a>>,
    unanchorable: &'a [String],
    diagnostics: &'a [ReportEntry],
}

fn cmd_anchor(args: AnchorArgs) -> Result<()> {
    let tree = load_tree(&args.tree)?;
    let mut pool: Vec<Instance> = load_instances(&args.pool)?;
    if !pool.is_empty() {
        normalize_scores(&mut pool, Normalization::MinMax)?;
    }
    let embeddings = match &args.embeddings {
        Some(p) => load_embeddings(p)?,
        None => {
            let dim = tree
                .nodes
                .iter()
                .find_map(|n| n.embedding.as_ref().map(Vec::len))
                .ok_or_else(|| usage("tree has no embeddings; pass --embeddings"))?;
            EmbeddingTable::new(dim)?
        }
    };

    let mut run = RunRecord::start("anchor", 0);
    run.param("min_sim", args.min_sim).input(&args.tree).input(&args.pool);
    if let Some(p) = &args.embeddings {
        run.input(p);
    }

    let anchorer = Anchorer::new(&tree, &embeddings)?;
    let (profiles, report) = anchorer.anchor_pool(&pool, args.min_sim);
    let records: Vec<AnchoredRecord> = profiles
        .iter()
        .zip(&pool)
        .map(|(p, inst)| AnchoredRecord::new(p, inst, anchorer.ancestry()))
        .collect();
    save_anchored(&args.out, &records)?;

    let drops = sibling(&args.out, "drops.json");
    write_json(
        &drops,
        &DropReport {
            dropped: report
                .dropped
                .iter()
                .map(|(id, tag)| DropLine { id, tag })
                .collect(),
            unanchorable: &report.unanchorable,
            diagnostics: &report.diagnostics.entries,
        },
    )?;
    run.finish(&[&args.out, &drops])?;
    println!(
        "anchored: {} instances, {} dropped tags, {} unanchorable",
        records.len(),
        report.dropped.len(),
        report.unanchorable.len()
    );
    Ok(())
}

fn cmd_derive_target(args: DeriveTargetArgs) -> Result<()> {
    let tree = load_tree(&args.tree)?;
    let reference = load_anchored(&args.reference)?;
    let mut run = RunRecord::start("derive-target", 0);
    run.input(&args.tree).input(&args.reference);
    let target = derive_target(&reference, &tree)?;
    save_target(&target, &tree, &args.out)?;
    run.finish(&[&args.out])?;
    println!("target: {} leaves with positive mass", target.weights().len());
    Ok(())
}

fn cmd_sample(args: SampleArgs, cap: Option<usize>) -> Result<()> {
    if args.lambda > 0.0 && args.target.is_none() {
        bail!(usage("aligned mode requires target"));
    }
    let mode = match args.mode {
        Some(ModeArg::Aligned) => Mode::Aligned,
        Some(ModeArg::General) => Mode::General,
        None if args.lambda > 0.0 => Mode::Aligned,
        None => Mode::General,
    };
    if mode == Mode::Aligned && args.target.is_none() {
        bail!(usage("aligned mode requires target"));
    }
    if mode == Mode::General && args.lambda != 0.0 {
        bail!(usage("general mode requires --lambda 0"));
    }

    let tree = load_tree(&args.tree)?;
    let anchored = load_anchored(&args.anchored)?;
    let target = args.target.as_ref().map(|p| load_target(p, &tree)).transpose()?;
    let parallelism = workers(args.threads, cap);
    let config = SamplerConfig {
        budget: args.budget,
        objective: ObjectiveConfig {
            alpha: args.alpha,
            gamma: args.gamma,
            lambda: args.lambda,
            ..ObjectiveConfig::default()
        },
        seed: args.seed,
        mode,
        candidate_parallelism: parallelism,
        ..SamplerConfig::general(args.budget)
    };

    // Worker count does not affect the output, so it stays out of the manifest.
    let mut run = RunRecord::start("sample", args.seed);
    run.param("budget", args.budget)
        .param("alpha", args.alpha)
        .param("gamma", args.gamma)
        .param("lambda", args.lambda)
        .param("epsilon", config.objective.epsilon)
        .param("mode", mode)
        .input(&args.tree)
        .input(&args.anchored);
    for p in args.target.iter().chain(&args.pool) {
        run.input(p);
    }

    let trace = Sampler::new(&tree)?.sample(&anchored, &config, target.as_ref())?;
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    match &args.pool {
        Some(p) => {
            let pool = load_instances(p)?;
            export_subset(&trace, &pool, |r: &Instance| r.id.as_str(), &args.out)?;
        }
        None => export_subset(&trace, &anchored, |r: &AnchoredRecord| r.id.as_str(), &args.out)?,
    }
    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| args.out.with_file_name("trace.json"));
    save_trace(&trace, &trace_path)?;
    run.finish(&[&args.out, &trace_path])?;

    println!("picks: {}", trace.picks.len());
    println!("final information: {}", trace.final_information);
    match trace.final_kl {
        Some(kl) => println!("final KL: {kl}"),
        None => println!("final KL: n/a (no target)"),
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let tree = load_tree(&args.tree)?;
    let target = args.target.as_ref().map(|p| load_target(p, &tree)).transpose()?;
    let objective = ObjectiveConfig {
        alpha: args.alpha,
        gamma: args.gamma,
        ..ObjectiveConfig::default()
    };
    objective.validate()?;
    let mut run = RunRecord::start("stats", 0);
    run.param("alpha", args.alpha).param("gamma", args.gamma).input(&args.input).input(&args.tree);
    if let Some(p) = &args.target {
        run.input(p);
    }

    let rows = stats::read_rows(&args.input, args.alpha)?;
    let report = stats::compute(&rows, &tree, target.as_ref(), objective)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        run.finish(&[out])?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cap = thread_cap()?;
    if let Some(n) = cap {
        // Only fails if the global pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::BuildTree(a) => cmd_build_tree(a),
        Command::Anchor(a) => cmd_anchor(a),
        Command::DeriveTarget(a) => cmd_derive_target(a),
        Command::Sample(a) => cmd_sample(a, cap),
        Command::Stats(a) => cmd_stats(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let user = err
        .chain()
        .any(|e| e.is::<UsageError>() || e.is::<tagforest::Error>());
    if user {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

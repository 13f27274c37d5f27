//! `elastic-embed`: distance matrices, embeddings, cross-validated
//! evaluation and scatter plots for planar shape datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use elastic_embed::classify::{evaluate, Classifier};
use elastic_embed::curve::CLOSURE_TOL;
use elastic_embed::datasets::{load_dataset, synth_shapes, LoadOptions, Manifest, ManifestEntry};
use elastic_embed::distmat::{
    compute_matrix, load_matrix, save_matrix, validate_metric_axioms, MatrixOptions,
};
use elastic_embed::elastic::ElasticOptions;
use elastic_embed::embedding::EmbeddingTable;
use elastic_embed::plot::render_svg;
use elastic_embed::tsne::TsneParams;
use elastic_embed::umap::UmapParams;
use elastic_embed::{DistanceMatrix, MetricTag, Reducer};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const CACHE_ENV: &str = "ELASTIC_EMBED_CACHE";
const AXIOM_SLACK: f64 = 0.03;

#[derive(Parser)]
#[command(name = "elastic-embed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise distance matrix of the shapes listed in a manifest.
    Distmat(DistmatArgs),
    /// Embed a distance matrix with t-SNE, elastic t-SNE or UMAP.
    Embed(EmbedArgs),
    /// Embed, then cross-validate a classifier on the coordinates.
    Eval(EvalArgs),
    /// Scatter plot of an embedding CSV as SVG.
    Plot(PlotArgs),
    /// Write a synthetic labeled dataset (curve CSVs plus manifest).
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Elastic,
    Euclidean,
    Phase,
    FisherRao,
}

impl From<MetricArg> for MetricTag {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Elastic => MetricTag::ElasticAmplitude,
            MetricArg::Euclidean => MetricTag::Euclidean,
            MetricArg::Phase => MetricTag::Phase,
            MetricArg::FisherRao => MetricTag::FisherRao,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReducerArg {
    Tsne,
    Etsne,
    Umap,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Knn,
    Rf,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long, value_enum, default_value = "elastic")]
    metric: MetricArg,
    /// Points per curve after resampling.
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    /// Search over start points (closed contours only).
    #[arg(long)]
    closed: bool,
    /// Start points tried with `--closed`.
    #[arg(long, default_value_t = 10)]
    seed_shifts: usize,
    /// Worker threads for the distance computation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DistmatArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReducerArgs {
    #[arg(long, value_enum, default_value = "umap")]
    reducer: ReducerArg,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    /// Neighborhood size of the UMAP graph.
    #[arg(long, default_value_t = 15)]
    k_neighbors: usize,
    /// t-SNE iterations or UMAP epochs; reducer default when omitted.
    #[arg(long)]
    iterations: Option<usize>,
}

impl ReducerArgs {
    fn reducer(&self) -> Reducer {
        let tsne = TsneParams {
            perplexity: self.perplexity,
            n_iter: self.iterations.unwrap_or(TsneParams::default().n_iter),
            ..TsneParams::default()
        };
        match self.reducer {
            ReducerArg::Tsne => Reducer::Tsne(tsne),
            ReducerArg::Etsne => Reducer::Etsne(tsne),
            ReducerArg::Umap => Reducer::Umap(UmapParams {
                k: self.k_neighbors,
                n_epochs: self.iterations.unwrap_or(UmapParams::default().n_epochs),
                ..UmapParams::default()
            }),
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[command(flatten)]
    reducer: ReducerArgs,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Precomputed labeled matrix.
    #[arg(
        long,
        conflicts_with = "manifest",
        required_unless_present = "manifest"
    )]
    matrix: Option<PathBuf>,
    /// Compute (or fetch from the cache) the matrix for this manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    distances: MatrixArgs,
    #[command(flatten)]
    reducer: ReducerArgs,
    #[arg(long, value_enum, default_value = "knn")]
    classifier: ClassifierArg,
    /// Neighbors consulted by the kNN classifier.
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    /// Trees in the random forest.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Embedding CSV written by `embed`.
    embedding: PathBuf,
    #[arg(long)]
    title: Option<String>,
    /// SVG file to write.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    /// Jitter as a fraction of each shape's diameter.
    #[arg(long, default_value_t = 0.02)]
    nuisance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn matrix_options(args: &MatrixArgs) -> MatrixOptions {
    MatrixOptions {
        elastic: ElasticOptions {
            seed_shifts: args.closed.then_some(args.seed_shifts),
            ..ElasticOptions::default()
        },
        threads: args.threads,
    }
}

/// SHA-256 over everything the matrix depends on: settings, the manifest and
/// every file it lists. Thread count is excluded since it does not change
/// the result.
fn cache_key(manifest: &Path, args: &MatrixArgs, opts: &MatrixOptions) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(b"eldm-cache-1\n");
    hasher.update(MetricTag::from(args.metric).as_str());
    hasher.update(args.resolution.to_le_bytes());
    hasher.update(serde_json::to_vec(&opts.elastic)?);
    hasher.update(fs::read(manifest)?);
    let base = manifest.parent().unwrap_or(Path::new(""));
    for entry in Manifest::read(manifest)?.entries {
        let bytes = fs::read(base.join(&entry.file))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

struct Computed {
    matrix: DistanceMatrix,
    cache_hit: bool,
    seconds: f64,
}

fn manifest_matrix(manifest: &Path, args: &MatrixArgs) -> Result<Computed> {
    let start = Instant::now();
    let load = LoadOptions {
        resolution: args.resolution,
        ..LoadOptions::default()
    };
    let data = load_dataset(manifest, &load)?;
    let opts = matrix_options(args);
    let cached = match std::env::var_os(CACHE_ENV) {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            create_dir(&dir)?;
            Some(dir.join(format!("{}.eldm", cache_key(manifest, args, &opts)?)))
        }
        None => None,
    };
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        match load_matrix(path) {
            Ok(m) if m.size() == data.len() => {
                log::info!("matrix cache hit: {}", path.display());
                return Ok(Computed {
                    matrix: m,
                    cache_hit: true,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
            _ => log::warn!("ignoring unreadable cache entry {}", path.display()),
        }
    }
    let n = data.len();
    log::info!(
        "computing {} {} distances among {n} shapes",
        n * n.saturating_sub(1) / 2,
        MetricTag::from(args.metric)
    );
    let matrix =
        compute_matrix(&data.curves, args.metric.into(), &opts)?.with_labels(data.labels)?;
    if let Some(path) = &cached {
        save_matrix(&matrix, path)?;
    }
    Ok(Computed {
        matrix,
        cache_hit: false,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn matrix_config(manifest: &Path, args: &MatrixArgs) -> Value {
    json!({
        "manifest": manifest.display().to_string(),
        "metric": MetricTag::from(args.metric).as_str(),
        "resolution": args.resolution,
        "elastic": matrix_options(args).elastic,
    })
}

fn cmd_distmat(args: &DistmatArgs) -> Result<()> {
    let computed = manifest_matrix(&args.manifest, &args.matrix)?;
    let m = &computed.matrix;
    create_dir(&args.out)?;
    save_matrix(m, args.out.join("matrix.eldm"))?;
    let summary = json!({
        "n": m.size(),
        "metric": m.metric().as_str(),
        "wall_time_s": computed.seconds,
        "cache_hit": computed.cache_hit,
        "threads": args.matrix.threads,
        "config": matrix_config(&args.manifest, &args.matrix),
        "axioms": validate_metric_axioms(m, AXIOM_SLACK),
    });
    write_json(&args.out.join("summary.json"), &summary)?;
    println!("{}", args.out.join("matrix.eldm").display());
    Ok(())
}

fn cmd_embed(args: &EmbedArgs) -> Result<()> {
    let m = load_matrix(&args.matrix)?;
    let reducer = args.reducer.reducer();
    let e = reducer.embed(&m, args.dim, args.seed)?;
    create_dir(&args.out)?;
    let stem = reducer.name();
    let csv = args.out.join(format!("{stem}.csv"));
    fs::write(&csv, e.to_csv_string(m.labels())?)
        .with_context(|| format!("writing {}", csv.display()))?;
    let mut sidecar = serde_json::to_value(e.sidecar())?;
    sidecar["matrix"] = json!(args.matrix.display().to_string());
    sidecar["metric"] = json!(m.metric().as_str());
    write_json(&args.out.join(format!("{stem}.json")), &sidecar)?;
    println!("{}", csv.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (m, source) = match (&args.matrix, &args.manifest) {
        (Some(path), _) => (
            load_matrix(path)?,
            json!({ "matrix": path.display().to_string() }),
        ),
        (None, Some(manifest)) => (
            manifest_matrix(manifest, &args.distances)?.matrix,
            matrix_config(manifest, &args.distances),
        ),
        (None, None) => unreachable!("clap requires one of --matrix and --manifest"),
    };
    let classifier = match args.classifier {
        ClassifierArg::Knn => Classifier::Knn { k: args.knn_k },
        ClassifierArg::Rf => Classifier::RandomForest {
            n_trees: args.trees,
        },
    };
    let report = evaluate(
        &m,
        &args.reducer.reducer(),
        &classifier,
        args.folds,
        args.seed,
    )?;
    create_dir(&args.out)?;
    let mut value = serde_json::to_value(&report)?;
    value["metric"] = json!(m.metric().as_str());
    value["source"] = source;
    write_json(&args.out.join("eval.json"), &value)?;
    let confusion = args.out.join("confusion.csv");
    fs::write(
        &confusion,
        report.confusion.to_csv_string(&report.class_names),
    )
    .with_context(|| format!("writing {}", confusion.display()))?;
    println!("macro F1 {:.4}, MCC {:.4}", report.macro_f1, report.mcc);
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let table = EmbeddingTable::read(&args.embedding)?;
    let svg = render_svg(&table, args.title.as_deref())?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(&args.out, svg).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let data = synth_shapes(args.classes, args.per_class, args.nuisance, args.seed)?;
    create_dir(&args.out)?;
    let mut entries = Vec::with_capacity(data.len());
    for ((curve, label), name) in data.curves.iter().zip(&data.labels).zip(&data.names) {
        let file = format!("{name}.csv");
        curve.write_csv(args.out.join(&file))?;
        entries.push(ManifestEntry {
            file,
            label: label.clone(),
            name: name.clone(),
            closed: curve.is_closed(CLOSURE_TOL).then_some(true),
        });
    }
    let manifest = serde_json::to_value(Manifest { entries })?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!("{}", args.out.join("manifest.json").display());
    Ok(())
}

/// Context chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut text = err.to_string();
    for cause in err.chain().skip(1) {
        let cause = cause.to_string();
        if !text.contains(&cause) {
            text = format!("{text}: {cause}");
        }
    }
    text
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<elastic_embed::Error>() {
        Some(e) if e.is_internal() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Distmat(a) => cmd_distmat(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

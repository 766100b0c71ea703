//! `gvcnet` command line: synthetic data generation, training, treatment
//! rotation, dose-response estimation, clustering and diagnostics.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gvcnet::analysis::{
    cluster_report, kmeans_curves, write_assignments_csv, write_centroids_csv, ClusterReport,
    DEFAULT_EPSILON,
};
use gvcnet::graph::RoiGraph;
use gvcnet::numerics::Rng;
use gvcnet::pipeline::{
    assemble, classify, estimate_adrf, positivity_by_roi, read_curves_csv, run_rotation,
    split_dataset, summarize, train, write_curves_csv, AdrfCurve, Config, Dataset, Demographics,
    GvcnetModel, PositivityReport, RoiResult, RoiSummary,
};
use gvcnet::synthbench::{evaluate_adrf, generate_with, GeneratorConfig, GraphModel, GroundTruth, SyntheticProblem};
use gvcnet::{gradsuite, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "gvcnet", version, about = "Graph varying-coefficient dose-response estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort, its graph and the ground truth
    Gen(GenArgs),
    /// Train one model with a single treatment ROI
    Train(TrainArgs),
    /// Train a model per ROI, estimate every ADRF and cluster the curves
    Rotate(RotateArgs),
    /// Evaluate the ADRF of a trained model
    Adrf(AdrfArgs),
    /// Cluster previously estimated curves
    Cluster(ClusterArgs),
    /// Finite-difference check of every backward pass
    Gradcheck(GradcheckArgs),
    /// Treatment coverage per ROI
    Positivity(PositivityArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GraphKind {
    Ring,
    Geometric,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 12)]
    roi: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    confounding: f64,
    #[arg(long, value_enum, default_value_t = GraphKind::Ring)]
    graph_model: GraphKind,
    /// Connection radius of the geometric graph
    #[arg(long, default_value_t = 0.3)]
    radius: f64,
    /// Monte-Carlo draws of the oracle curves
    #[arg(long, default_value_t = gvcnet::synthbench::ORACLE_DRAWS)]
    draws: usize,
}

/// Inputs and hyperparameter overrides shared by the training commands.
#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    data: PathBuf,
    /// Edge list `src,dst,weight`
    #[arg(long)]
    graph: PathBuf,
    /// Node universe `roi_name`; defaults to the dataset's ROI columns
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    demographics: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    /// ADRF grid points on [0, 1]
    #[arg(long, default_value_t = 65)]
    grid: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Treatment ROI
    #[arg(long)]
    roi: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RotateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Slope threshold of the trend labels
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Split {
    Test,
    Train,
    All,
}

#[derive(Args, Debug)]
struct AdrfArgs {
    /// `model.json` written by `train`
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    #[arg(long, default_value_t = 65)]
    grid: usize,
    /// Ground truth of a synthetic cohort to score against
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Curve CSV to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Curve CSV `roi,t,response`; may be repeated
    #[arg(long, required = true)]
    curves: Vec<PathBuf>,
    /// Rotation `summary.json` providing per-ROI accuracies
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random configurations per operation
    #[arg(long, default_value_t = 100)]
    configs: usize,
    /// Restrict to one operation
    #[arg(long)]
    op: Option<String>,
    /// JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PositivityArgs {
    #[arg(long)]
    data: PathBuf,
    /// Treatment intervals; defaults to the configured grid_B
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 1 on invalid input, 2 on numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Rotate(a) => rotate(a),
        Command::Adrf(a) => adrf(a),
        Command::Cluster(a) => cluster(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Positivity(a) => positivity(a),
    }
}

/// Writes through a temporary file in the target directory, renamed into
/// place only after `body` succeeds.
fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::from(e).in_file(&dir))?;
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::from(e).in_file(&dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| e.in_file(path))?;
        w.flush().map_err(|e| Error::from(e).in_file(path))?;
    }
    tmp.persist(path).map_err(|e| Error::from(e.error).in_file(path))?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::from(e).in_file(path))
}

/// Keeps ROI names usable as file names.
fn file_stem(roi: &str) -> String {
    roi.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn gen(a: GenArgs) -> Result<i32> {
    let graph_model = match a.graph_model {
        GraphKind::Ring => GraphModel::Ring,
        GraphKind::Geometric => GraphModel::RandomGeometric { radius: a.radius },
    };
    let cfg = GeneratorConfig {
        rois: a.roi,
        n: a.n,
        confounding: a.confounding,
        graph_model,
        ..GeneratorConfig::default()
    };
    let (ds, graph, truth) = generate_with(&cfg, a.seed, a.draws)?;
    write_atomic(&a.out.join("data.csv"), |w| ds.write_csv(w))?;
    write_atomic(&a.out.join("graph.csv"), |w| graph.write_edges(w))?;
    write_atomic(&a.out.join("nodes.csv"), |w| graph.write_nodes(w))?;
    write_atomic(&a.out.join("truth.json"), |w| truth.write_json(w))?;
    let rate = ds.subjects.iter().map(|s| s.label as f64).sum::<f64>() / ds.len() as f64;
    println!("{} subjects, {} ROIs, positive rate {rate:.3}", ds.len(), ds.rois());
    println!("wrote {}", a.out.display());
    Ok(0)
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::parse(&read_text(p)?).map_err(|e| e.in_file(p)),
        None => Ok(Config::default()),
    }
}

impl ModelArgs {
    fn config(&self) -> Result<Config> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = &self.demographics {
            cfg.demographics = v.parse::<Demographics>()?;
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<(Dataset, RoiGraph)> {
        let ds = Dataset::load(&self.data)?;
        let graph = load_graph(&self.graph, self.nodes.as_deref(), &ds)?;
        Ok((ds, graph))
    }
}

fn load_graph(edges: &Path, nodes: Option<&Path>, ds: &Dataset) -> Result<RoiGraph> {
    let (graph, stats) = match nodes {
        Some(n) => RoiGraph::load(edges, n)?,
        None => {
            let mut universe = Vec::new();
            {
                let mut w = csv::Writer::from_writer(&mut universe);
                w.write_record(["roi_name"])?;
                for name in &ds.roi_names {
                    w.write_record([name])?;
                }
                w.flush()?;
            }
            RoiGraph::read_csv(open(edges)?, universe.as_slice()).map_err(|e| e.in_file(edges))?
        }
    };
    if stats.self_loops_dropped > 0 {
        eprintln!("warning: dropped {} self-loops from {}", stats.self_loops_dropped, edges.display());
    }
    Ok(graph)
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    roi: &'a str,
    accuracy: f64,
    final_loss: Option<f64>,
    train_subjects: usize,
    test_subjects: usize,
}

fn train_cmd(a: TrainArgs) -> Result<i32> {
    let cfg = a.model.config()?;
    let (ds, graph) = a.model.load()?;
    let (train_ds, test_ds) = split_dataset(&ds, cfg.test_fraction, cfg.seed)?;
    let mut model = assemble(&graph, &a.roi, &cfg)?;
    let history = train(&mut model, &train_ds).map_err(|e| e.for_roi(&a.roi))?;
    let accuracy = classify(&model, &test_ds, 0.5)?;
    let curve = estimate_adrf(&model, &test_ds, a.model.grid)?;
    write_json(&a.out.join("model.json"), &model)?;
    write_atomic(&a.out.join("history.csv"), |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in history.losses.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, l)?;
        }
        Ok(())
    })?;
    write_atomic(&a.out.join("adrf.csv"), |w| write_curves_csv([&curve], w))?;
    let metrics = TrainMetrics {
        roi: &a.roi,
        accuracy,
        final_loss: history.last(),
        train_subjects: train_ds.len(),
        test_subjects: test_ds.len(),
    };
    write_json(&a.out.join("metrics.json"), &metrics)?;
    println!("{}: accuracy {accuracy:.4}, final loss {:.5}", a.roi, history.last().unwrap_or(f64::NAN));
    Ok(0)
}

#[derive(Serialize)]
struct RotationSummary<'a> {
    config: &'a Config,
    grid: usize,
    epsilon: f64,
    rois: &'a [RoiSummary],
}

#[derive(Serialize)]
struct RoiFile<'a> {
    #[serde(flatten)]
    summary: &'a RoiSummary,
    accuracies: &'a [f64],
    final_losses: &'a [f64],
}

fn rotate(a: RotateArgs) -> Result<i32> {
    let cfg = a.model.config()?;
    let (ds, graph) = a.model.load()?;
    let results = run_rotation(&ds, &graph, &cfg, a.model.grid, a.jobs)?;
    let summaries = summarize(&results, a.epsilon)?;
    write_rotation(&a.out, &results, &summaries)?;
    write_json(
        &a.out.join("summary.json"),
        &RotationSummary { config: &cfg, grid: a.model.grid, epsilon: a.epsilon, rois: &summaries },
    )?;
    println!("{:<12} {:>9} {:>8} {:>9}  trend", "roi", "accuracy", "sd", "slope");
    for s in &summaries {
        println!("{:<12} {:>9.4} {:>8.4} {:>9.4}  {}", s.roi, s.accuracy, s.accuracy_sd, s.slope, s.trend);
    }
    let curves: Vec<AdrfCurve> = results.iter().map(|r| r.curve.clone()).collect();
    if curves.len() >= a.k {
        let report = cluster_curves(&curves, cfg.seed, a.k, a.restarts, a.epsilon)?;
        write_report(&a.out, &report)?;
        print_clusters(&report);
    } else {
        eprintln!("warning: {} ROIs cannot form {} clusters; clustering skipped", curves.len(), a.k);
    }
    Ok(0)
}

fn write_rotation(out: &Path, results: &[RoiResult], summaries: &[RoiSummary]) -> Result<()> {
    write_atomic(&out.join("curves.csv"), |w| write_curves_csv(results.iter().map(|r| &r.curve), w))?;
    let dir = out.join("rois");
    for (r, s) in results.iter().zip(summaries) {
        let stem = file_stem(&r.roi);
        write_atomic(&dir.join(format!("{stem}.csv")), |w| write_curves_csv([&r.curve], w))?;
        write_json(
            &dir.join(format!("{stem}.json")),
            &RoiFile { summary: s, accuracies: &r.accuracies, final_losses: &r.final_losses },
        )?;
    }
    Ok(())
}

fn cluster_curves(curves: &[AdrfCurve], seed: u64, k: usize, restarts: usize, epsilon: f64) -> Result<ClusterReport> {
    let km = kmeans_curves(curves, k, seed, restarts)?;
    cluster_report(curves, &km, epsilon)
}

fn write_report(out: &Path, report: &ClusterReport) -> Result<()> {
    write_json(&out.join("clusters.json"), report)?;
    write_atomic(&out.join("assignments.csv"), |w| write_assignments_csv(report, w))?;
    write_atomic(&out.join("centroids.csv"), |w| write_centroids_csv(report, w))
}

fn print_clusters(report: &ClusterReport) {
    println!("{:<8} {:<9} {:>7} {:>9} {:>8}", "cluster", "trend", "members", "accuracy", "sd");
    for c in &report.clusters {
        println!(
            "{:<8} {:<9} {:>7} {:>9.4} {:>8.4}",
            c.cluster, c.trend, c.members, c.accuracy_mean, c.accuracy_sd
        );
    }
}

#[derive(Serialize)]
struct AdrfScore {
    roi: String,
    rmse: f64,
    amse: f64,
}

fn adrf(a: AdrfArgs) -> Result<i32> {
    let model: GvcnetModel = serde_json::from_reader(std::io::BufReader::new(open(&a.model)?))
        .map_err(|e| Error::from(e).in_file(&a.model))?;
    let ds = Dataset::load(&a.data)?;
    let cfg = model.config();
    let subset = match a.split {
        Split::All => ds,
        Split::Test => split_dataset(&ds, cfg.test_fraction, cfg.seed)?.1,
        Split::Train => split_dataset(&ds, cfg.test_fraction, cfg.seed)?.0,
    };
    let curve = estimate_adrf(&model, &subset, a.grid)?;
    write_atomic(&a.out, |w| write_curves_csv([&curve], w))?;
    println!("{}: accuracy {:.4} on {} subjects", curve.roi, curve.accuracy, subset.len());
    if let Some(path) = &a.truth {
        let truth = GroundTruth::read_json(open(path)?).map_err(|e| e.in_file(path))?;
        let score = score_against_truth(&model, &curve, &truth)?;
        println!("{}: rmse {:.5}, amse {:.6}", score.roi, score.rmse, score.amse);
        let mut scored = a.out.clone().into_os_string();
        scored.push(".score.json");
        write_json(Path::new(&scored), &score)?;
    }
    Ok(0)
}

/// Oracle of the treatment ROI on the signal values the model's grid maps
/// back to.
fn score_against_truth(model: &GvcnetModel, curve: &AdrfCurve, truth: &GroundTruth) -> Result<AdrfScore> {
    let stats = model
        .stats
        .as_ref()
        .ok_or_else(|| Error::Invalid("model has no normalization statistics".into()))?;
    let col = model
        .data_rois
        .iter()
        .position(|r| *r == model.treatment)
        .ok_or_else(|| Error::Invalid(format!("ROI {} missing from the model", model.treatment)))?;
    let raw: Vec<f64> = curve.grid.iter().map(|&t| stats.raw_treatment(col, t)).collect();
    let problem = SyntheticProblem::new(&truth.config, truth.seed)?;
    let oracle = problem.oracle_adrf(&model.treatment, &raw, truth.oracle_draws, Rng::new(truth.seed).fork(2).seed())?;
    let (rmse, amse) = evaluate_adrf(&curve.response, &oracle.response)?;
    Ok(AdrfScore { roi: model.treatment.clone(), rmse, amse })
}

fn cluster(a: ClusterArgs) -> Result<i32> {
    let mut curves = Vec::new();
    for path in &a.curves {
        curves.extend(read_curves_csv(open(path)?).map_err(|e| e.in_file(path))?);
    }
    if let Some(path) = &a.summary {
        let v: serde_json::Value = serde_json::from_reader(open(path)?).map_err(|e| Error::from(e).in_file(path))?;
        let rois: Vec<RoiSummary> = serde_json::from_value(v.get("rois").cloned().unwrap_or_default())
            .map_err(|e| Error::from(e).in_file(path))?;
        for c in curves.iter_mut() {
            if let Some(s) = rois.iter().find(|s| s.roi == c.roi) {
                c.accuracy = s.accuracy;
            }
        }
    }
    let report = cluster_curves(&curves, a.seed, a.k, a.restarts, a.epsilon)?;
    write_report(&a.out, &report)?;
    print_clusters(&report);
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let report = match &a.op {
        Some(op) => gradsuite::SuiteReport {
            tol: gradsuite::TOLERANCE,
            ops: vec![gradsuite::run_op(op, a.seed, a.configs)?],
        },
        None => gradsuite::run(a.seed, a.configs)?,
    };
    println!("{:<16} {:>7} {:>8} {:>12}", "op", "configs", "redrawn", "max rel err");
    for op in &report.ops {
        println!("{:<16} {:>7} {:>8} {:>12.3e}", op.op, op.configs, op.redrawn, op.max_rel_error);
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if report.passed() {
        println!("all below {:e}", report.tol);
        Ok(0)
    } else {
        eprintln!("gradient check failed: tolerance {:e}", report.tol);
        Ok(2)
    }
}

#[derive(Serialize)]
struct PositivityRow<'a> {
    roi: &'a str,
    #[serde(flatten)]
    report: &'a PositivityReport,
}

fn positivity(a: PositivityArgs) -> Result<i32> {
    let intervals = match a.intervals {
        Some(b) => b,
        None => load_config(a.config.as_deref())?.grid_b,
    };
    let ds = Dataset::load(&a.data)?;
    let reports = positivity_by_roi(&ds, intervals)?;
    let mut flagged = 0;
    for (roi, r) in &reports {
        let counts: Vec<String> = r.counts.iter().map(|c| c.to_string()).collect();
        println!("{roi}: {}", counts.join(" "));
        if let Some(w) = r.warning() {
            flagged += 1;
            eprintln!("warning: {roi}: {w}");
        }
    }
    println!("{flagged} of {} ROIs have empty treatment intervals", reports.len());
    if let Some(out) = &a.out {
        let rows: Vec<PositivityRow> = reports.iter().map(|(roi, report)| PositivityRow { roi, report }).collect();
        write_json(out, &rows)?;
    }
    Ok(0)
}

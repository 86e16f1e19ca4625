use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use sensorcal::calib::{calibrate, Anchor, CalibrationOptions, CalibrationResult, Status};
use sensorcal::dataset::{load_dataset, save_dataset, Dataset};
use sensorcal::eval::{evaluate, PairwiseReport};
use sensorcal::io::{write_atomic, Provenance};
use sensorcal::labeling::{label_dataset, LabelConfig};
use sensorcal::residuals::{LongitudinalMode, Weights};
use sensorcal::synth::{self, cell, NoiseConfig, SceneConfig};

#[derive(Debug, Parser)]
#[command(name = "sensorcal", version, about = "Multi-sensor extrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a calibration scene with known ground truth.
    Generate(GenerateArgs),
    /// Label LiDAR and depth detections from raw sidecars.
    Label(LabelArgs),
    /// Jointly estimate sensor extrinsics and board poses.
    Calibrate(CalibrateArgs),
    /// Score a calibration result on a held-out dataset.
    Evaluate(EvaluateArgs),
    /// Render a pairwise report as text tables.
    Report(ReportArgs),
    /// Print collection and detection counts.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Test,
    RealShaped,
    NoComplete,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Scene config document.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scene instead of a config file.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disables all measurement noise.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Label config document.
    #[arg(long)]
    config: PathBuf,
    /// Output dataset; must share the input's directory so sidecar paths stay valid.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Sensor to hold fixed, or `none` to leave the gauge free.
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Residual weights, e.g. `rgb=1,range=100`.
    #[arg(long)]
    weights: Option<Weights>,
    #[arg(long, value_enum)]
    longitudinal: Option<Longitudinal>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Longitudinal {
    Perimeter,
    NearestSample,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Held-out dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Calibration result document.
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the tables as text.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    /// Write the text here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("solver stopped on a degenerate system")]
    Degenerate,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Degenerate => 3,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<(String, Vec<u8>), Failure> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| invalid(format!("{}: not UTF-8", path.display())))?;
    Ok((text, bytes))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let mut input = None;
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => {
            let (text, bytes) = read_text(path)?;
            input = Some(bytes);
            SceneConfig::from_json_str(&text).map_err(invalid)?
        }
        (None, Some(p)) => {
            let seed = args.seed.unwrap_or(0);
            match p {
                Preset::Default => cell::default_scene(seed),
                Preset::Test => cell::test_scene(seed),
                Preset::RealShaped => cell::real_shaped_scene(seed),
                Preset::NoComplete => cell::no_complete_scene(seed),
            }
        }
        (None, None) => return Err(Failure::Usage("one of --config or --preset is required".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.noiseless {
        cfg.noise = NoiseConfig::none();
    }
    cfg.validate().map_err(invalid)?;
    let mut scene = synth::generate(&cfg).map_err(invalid)?;
    let mut prov = Provenance::new(&cfg, Some(cfg.seed));
    if let Some(bytes) = &input {
        prov = prov.with_input("config", bytes);
    }
    scene
        .dataset
        .meta
        .insert("provenance".into(), serde_json::to_value(&prov).expect("provenance serializes"));
    scene.ground_truth.provenance = Some(prov);
    scene.write_to(&args.out).map_err(invalid)?;
    let stats = &scene.ground_truth.manifest.stats;
    log::info!(
        "wrote {} collections ({} complete, {} rgb partials) to {}",
        stats.collections,
        stats.complete,
        stats.rgb_partials,
        args.out.display()
    );
    Ok(())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    let dir = |p: &Path| {
        let d = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        d.canonicalize().ok()
    };
    matches!((dir(a), dir(b)), (Some(x), Some(y)) if x == y)
}

fn label(args: &LabelArgs) -> Result<(), Failure> {
    let (text, cfg_bytes) = read_text(&args.config)?;
    let cfg = LabelConfig::from_json_str(&text).map_err(invalid)?;
    let ds_bytes = read_bytes(&args.dataset)?;
    let (mut ds, _) = load_dataset(&args.dataset).map_err(invalid)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| invalid(format!("{}: {e}", parent.display())))?;
    }
    if !same_dir(&args.dataset, &args.out) {
        return Err(invalid("--out must be in the same directory as --dataset (sidecar paths are relative)"));
    }
    let summary = label_dataset(&mut ds, &cfg).map_err(invalid)?;
    let seed = ds.meta.get("generator").and_then(|g| g.get("seed")).and_then(|s| s.as_u64());
    let prov = Provenance::new(&cfg, seed)
        .with_input("dataset", &ds_bytes)
        .with_input("label_config", &cfg_bytes);
    ds.meta
        .insert("provenance".into(), serde_json::to_value(&prov).expect("provenance serializes"));
    // round trip through validation so empty collections are dropped
    let (ds, _) = Dataset::from_json_str(&ds.to_json_string()).map_err(invalid)?;
    save_dataset(&ds, &args.out).map_err(invalid)?;
    println!(
        "labeled {} detection(s), rejected {}, unseeded {}",
        summary.labeled, summary.rejected, summary.unseeded
    );
    Ok(())
}

fn calibrate_cmd(args: &CalibrateArgs) -> Result<(), Failure> {
    let bytes = read_bytes(&args.dataset)?;
    let (ds, _) = load_dataset(&args.dataset).map_err(invalid)?;
    let mut opts = CalibrationOptions::default();
    match args.anchor.as_deref() {
        None => {}
        Some("none") => opts.anchor = Anchor::None,
        Some(id) => opts.anchor = Anchor::Sensor(id.to_string()),
    }
    if let Some(n) = args.max_iters {
        opts.solver.max_iters = n;
    }
    if let Some(w) = args.weights {
        opts.weights = w;
    }
    if let Some(l) = args.longitudinal {
        opts.longitudinal = match l {
            Longitudinal::Perimeter => LongitudinalMode::Perimeter,
            Longitudinal::NearestSample => LongitudinalMode::NearestSample,
        };
    }
    let mut result = calibrate(&ds, &ds.tree, &opts).map_err(invalid)?;
    result.provenance = result.provenance.with_input("dataset", &bytes);
    write(&args.out, &result.to_json_string())?;
    println!(
        "status {:?}, {} iteration(s), cost {:.6e} -> {:.6e}",
        result.status, result.iterations, result.initial_cost, result.final_cost
    );
    for r in &result.rms {
        println!(
            "  {:<12} rgb {:>10} px  orthogonal {:>10} m  longitudinal {:>10} m",
            r.sensor,
            fmt_opt(r.rgb_px),
            fmt_opt(r.orthogonal_m),
            fmt_opt(r.longitudinal_m)
        );
    }
    if result.status == Status::Degenerate {
        return Err(Failure::Degenerate);
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), Failure> {
    let ds_bytes = read_bytes(&args.dataset)?;
    let (ds, _) = load_dataset(&args.dataset).map_err(invalid)?;
    let (text, res_bytes) = read_text(&args.result)?;
    let result = CalibrationResult::from_json_str(&text).map_err(invalid)?;
    let mut report = evaluate(&ds, &result).map_err(invalid)?;
    report.provenance = report
        .provenance
        .with_input("dataset", &ds_bytes)
        .with_input("result", &res_bytes);
    write(&args.out, &report.to_json_string())?;
    let rendered = report.render_text();
    if let Some(path) = &args.text {
        write(path, &rendered)?;
    }
    print!("{rendered}");
    if report.refinement.status == Status::Degenerate {
        return Err(Failure::Degenerate);
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), Failure> {
    let (text, _) = read_text(&args.report)?;
    let report = PairwiseReport::from_json_str(&text).map_err(invalid)?;
    let rendered = report.render_text();
    match &args.out {
        Some(path) => write(path, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

fn stats(args: &StatsArgs) -> Result<(), Failure> {
    let (ds, load) = load_dataset(&args.dataset).map_err(invalid)?;
    if load.dropped_empty > 0 {
        log::warn!("{} collection(s) without detections were dropped", load.dropped_empty);
    }
    let stats = ds.stats();
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    } else {
        print!("{stats}");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Label(a) => label(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Report(a) => report(a),
        Command::Stats(a) => stats(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.code())
        }
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use blendtrack::bench::{bench_forward, DEFAULT_PAIRS};
use blendtrack::mesh::canthal_scale;
use blendtrack::nn::{load_weights, save_weights, Regressor};
use blendtrack::pipeline::{load_dataset, ClipKey, Dataset, Manifest, SyncConfig, DEFAULT_SEARCH_RANGE_MS, DEFAULT_TOLERANCE_MS, SCHEMA};
use blendtrack::synth::{generate_study_with, write_study, StudyConfig, DEFAULT_CLIP_SECONDS};
use blendtrack::training::{
    audit_leakage, calibrate, calibration_curve, clip_counts, evaluate, initial_model, train_user_independent,
    RunManifest, SplitPlan, TrainConfig,
};
use blendtrack::{seed, BlendShapeId, Error, FaceMesh, Result};

const WEIGHTS_FILE: &str = "model.btrk";
const RUN_FILE: &str = "run.json";

#[derive(Parser)]
#[command(name = "blendtrack", version, about = "Half-face blend-shape tracking: synthetic data, sync, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study on disk
    Synth(SynthArgs),
    /// Estimate clock offsets and report per-clip cleaning statistics
    Sync(SyncArgs),
    /// Train a user-independent model with one subject held out
    Train(TrainArgs),
    /// Fine-tune a user-independent model on the held-out subject's calibration clip
    Calibrate(CalibrateArgs),
    /// Error as a function of calibration data
    Curve(CurveArgs),
    /// Millimetre vertex error and per-blend-shape Pearson R
    Eval(EvalArgs),
    /// Forward-pass latency, one image pair per batch
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    subjects: usize,
    /// Clips per location per subject
    #[arg(long, default_value_t = 2)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CLIP_SECONDS)]
    duration_s: f64,
    /// Image width and height in pixels
    #[arg(long, default_value_t = 64)]
    size: u32,
    /// Fixed camera-to-ground-truth clock offset for every clip
    #[arg(long, allow_hyphen_values = true)]
    offset_ms: Option<i64>,
    #[arg(long, default_value_t = 0.03)]
    invalid_fraction: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SyncOpts {
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_MS)]
    tolerance_ms: i64,
    #[arg(long, default_value_t = DEFAULT_SEARCH_RANGE_MS)]
    search_range_ms: i64,
    /// Skip estimation and use this offset for every clip
    #[arg(long, allow_hyphen_values = true)]
    offset_ms: Option<i64>,
}

#[derive(Args)]
struct SyncArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    sync: SyncOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test_subject: String,
    #[command(flatten)]
    sync: SyncOpts,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: DataArgs,
    /// Output directory for the weights and run manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: DataArgs,
    /// User-independent weights
    #[arg(long)]
    model: PathBuf,
    /// Overrides the config's calibration fraction
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeshArgs {
    /// Face mesh; the bundled procedural mesh when omitted
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Average inner canthal distance used for the millimetre scale
    #[arg(long, default_value_t = 32.0)]
    icd_mm: f64,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    common: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.25, 0.5, 1.0])]
    fractions: Vec<f64>,
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    mesh: MeshArgs,
    /// Evaluate only this subject's held-out clips (calibration clip excluded)
    #[arg(long)]
    test_subject: Option<String>,
    /// Config whose seed picks the calibration clip for --test-subject
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    sync: SyncOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Weights to time; an untrained 64x64 model when omitted
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PAIRS)]
    pairs: usize,
    #[arg(long)]
    out: PathBuf,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn sync_config(data: &Path, opts: &SyncOpts) -> Result<SyncConfig> {
    let manifest = Manifest::load(Manifest::resolve_path(data))?;
    let region = manifest
        .eye_region
        .ok_or_else(|| Error::InvalidArgument("manifest has no eye_region".into()))?;
    Ok(SyncConfig {
        tolerance_ms: opts.tolerance_ms,
        search_range_ms: opts.search_range_ms,
        offset_ms: opts.offset_ms,
        ..SyncConfig::with_eye_region(region)
    })
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed::resolve(cfg.seed);
    Ok(cfg)
}

struct Loaded {
    data: Dataset,
    cfg: TrainConfig,
    split: SplitPlan,
}

fn load_common(a: &DataArgs) -> Result<Loaded> {
    let cfg = load_config(a.config.as_deref())?;
    let (data, _) = load_dataset(&a.data, Some(sync_config(&a.data, &a.sync)?))?;
    let split = SplitPlan::new(&data, &a.test_subject, cfg.seed)?;
    Ok(Loaded { data, cfg, split })
}

fn load_mesh(a: &MeshArgs) -> Result<FaceMesh> {
    match &a.mesh {
        Some(p) => FaceMesh::load(p),
        None => Ok(FaceMesh::procedural()),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = StudyConfig {
        duration_s: a.duration_s,
        width: a.size,
        height: a.size,
        invalid_fraction: a.invalid_fraction,
        clock_offset_ms: a.offset_ms,
        ..StudyConfig::new(a.subjects, a.clips, seed::resolve(a.seed))
    };
    let study = generate_study_with(&cfg)?;
    let manifest = write_study(&study, &a.out)?;
    println!(
        "wrote {} subjects, {} clips ({}x{}, {} s each) to {}",
        manifest.subjects.len(),
        manifest.clip_count(),
        a.size,
        a.size,
        a.duration_s,
        a.out.display()
    );
    Ok(())
}

fn sync(a: &SyncArgs) -> Result<()> {
    let (data, reports) = load_dataset(&a.data, Some(sync_config(&a.data, &a.sync)?))?;
    for r in &reports {
        println!(
            "{}/{}/{}: offset {} ms, {} pairs (left {} / right {} frames kept)",
            r.clip.subject,
            r.clip.location.as_str(),
            r.clip.clip_id,
            r.offset_ms,
            r.pairs,
            r.left.kept,
            r.right.kept
        );
    }
    println!("{} clips, {} synchronized pairs", data.clips.len(), data.pair_count());
    write_json(
        &a.out,
        &json!({ "schema": SCHEMA, "pairs": data.pair_count(), "clips": reports }),
    )
}

fn losses(phase: &str, l: &[f64]) -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([(phase.to_string(), l.to_vec())])
}

fn train(a: &TrainArgs) -> Result<()> {
    let Loaded { data, cfg, split } = load_common(&a.common)?;
    let out = train_user_independent(&data, &cfg, &split)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_weights(&out.model, a.out.join(WEIGHTS_FILE))?;
    let audit = audit_leakage(&split, std::slice::from_ref(&out.provenance));
    let mut run = RunManifest::new("independent", &cfg, &split);
    run.epoch_losses = losses("independent", &out.epoch_losses);
    run.metrics.insert("leakage_audit".into(), serde_json::to_value(&audit).unwrap());
    run.metrics.insert("samples_per_clip".into(), json!(clip_counts(&out.provenance)));
    run.provenance = vec![out.provenance];
    run.weights_file = Some(WEIGHTS_FILE.into());
    run.save(a.out.join(RUN_FILE))?;
    println!(
        "trained on {} for {} epochs (test subject {}), final loss {:.4}; leakage audit {}",
        split.training_subjects.join(","),
        cfg.epochs_independent,
        split.test_subject,
        out.epoch_losses.last().copied().unwrap_or(f64::NAN),
        if audit.passed { "passed" } else { "FAILED" }
    );
    println!("weights: {}", a.out.join(WEIGHTS_FILE).display());
    Ok(())
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let Loaded { data, mut cfg, split } = load_common(&a.common)?;
    if let Some(f) = a.fraction {
        cfg.calibration_fraction = f;
    }
    let base = load_weights(&a.model)?;
    let out = calibrate(&base, &data, &cfg, &split)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_weights(&out.model, a.out.join(WEIGHTS_FILE))?;
    let audit = audit_leakage(&split, std::slice::from_ref(&out.provenance));
    let mut run = RunManifest::new("calibration", &cfg, &split);
    run.epoch_losses = losses("calibration", &out.epoch_losses);
    run.metrics.insert("leakage_audit".into(), serde_json::to_value(&audit).unwrap());
    run.metrics.insert("calibration_seconds".into(), json!(out.calibration_seconds));
    run.metrics.insert("samples_per_clip".into(), json!(clip_counts(&out.provenance)));
    run.provenance = vec![out.provenance];
    run.weights_file = Some(WEIGHTS_FILE.into());
    run.save(a.out.join(RUN_FILE))?;
    println!(
        "calibrated on {:?} with fraction {} ({:.1} s of data), final loss {:.4}; leakage audit {}",
        split.calibration_clip,
        cfg.calibration_fraction,
        out.calibration_seconds.unwrap_or(0.0),
        out.epoch_losses.last().copied().unwrap_or(f64::NAN),
        if audit.passed { "passed" } else { "FAILED" }
    );
    Ok(())
}

fn curve(a: &CurveArgs) -> Result<()> {
    let Loaded { data, cfg, split } = load_common(&a.common)?;
    let base = load_weights(&a.model)?;
    let mesh = load_mesh(&a.mesh)?;
    let scale = canthal_scale(&mesh, a.mesh.icd_mm)?;
    let points = calibration_curve(&base, &data, &cfg, &split, &a.fractions, &mesh, scale)?;
    for p in &points {
        println!("fraction {:<5} ({:>5.1} s): {:.3} mm", p.fraction, p.seconds, p.overall_mm_error);
    }
    write_json(
        &a.out,
        &json!({ "schema": SCHEMA, "test_subject": split.test_subject, "seed": cfg.seed, "points": points }),
    )
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_weights(&a.model)?;
    let (data, _) = load_dataset(&a.data, Some(sync_config(&a.data, &a.sync)?))?;
    let clips: Vec<ClipKey> = match &a.test_subject {
        Some(s) => SplitPlan::new(&data, s, load_config(a.config.as_deref())?.seed)?.evaluation_clips(),
        None => data.clips.iter().map(|c| c.key.clone()).collect(),
    };
    let mesh = load_mesh(&a.mesh)?;
    let report = evaluate(&model, &data, &clips, &mesh, canthal_scale(&mesh, a.mesh.icd_mm)?)?;
    let r: BTreeMap<&str, Option<f64>> = BlendShapeId::all().map(|id| (id.name(), report.correlation.r(id))).collect();
    println!(
        "{} clips, {} pairs: overall {:.3} mm (eye {:.3}, mouth {:.3}); mean R {}",
        clips.len(),
        report.pairs,
        report.vertex.overall_mean_mm,
        report.vertex.eye_mean_mm,
        report.vertex.mouth_mean_mm,
        report
            .correlation
            .overall_mean
            .map_or("n/a".to_string(), |v| format!("{v:.3}"))
    );
    write_json(
        &a.out,
        &json!({
            "schema": SCHEMA,
            "overall_mean_mm": report.vertex.overall_mean_mm,
            "per_blendshape_r": r,
            "report": report,
        }),
    )
}

fn bench(a: &BenchArgs) -> Result<()> {
    let model: Regressor<f32> = match &a.model {
        Some(p) => load_weights(p)?,
        None => initial_model(&TrainConfig::default())?,
    };
    let r = bench_forward(&model, a.pairs)?;
    println!(
        "{} pairs: {:.3} ms per pair, {:.1} fps ({})",
        r.pairs_measured, r.mean_ms_per_pair, r.expected_fps, r.platform
    );
    let mut v = serde_json::to_value(&r).unwrap();
    v["schema"] = json!(SCHEMA);
    write_json(&a.out, &v)
}

fn error_report(e: &Error) -> Value {
    json!({ "schema": SCHEMA, "error": { "category": e.category(), "message": e.to_string() } })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Sync(a) => sync(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Curve(a) => curve(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&error_report(&e)).unwrap());
            ExitCode::from(1)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use shmkit::attention::EnsembleParams;
use shmkit::eval::{bench, map_mar};
use shmkit::fmap::{FeatureMap, Rotation, SeededWeights};
use shmkit::gam::{gam_generate, gam_stack, DEFAULT_F_RATE};
use shmkit::hea::{refine_class_instances, ClassLabel, TaskId};
use shmkit::io;
use shmkit::perturb::{self, LabelNoiseSpec, PerturbKind, PerturbSpec, Tier};
use shmkit::pipeline::{run_pipeline, PipelineConfig};
use shmkit::vcva::{vcva_pipeline, ChannelWeights, SeverityThresholds, VcvaConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

/// A bad flag combination that clap cannot express.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "shmkit",
    version,
    about = "Structural damage feature synthesis, class elimination and volumetric assessment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the six multi-varied maps and the stacked output.
    Gam(GamArgs),
    /// Refine downstream class sets from Task 1 and Task 5 predictions.
    Hea(HeaArgs),
    /// Heatmap, voxel grid and severity for one feature stack.
    Vcva(VcvaArgs),
    /// Detection metrics over the IoU ladder.
    Eval(EvalArgs),
    /// Apply a seeded corruption to a map or to annotation labels.
    Perturb(PerturbArgs),
    /// Time the pipeline on synthetic inputs.
    Bench(BenchArgs),
    /// Run the guided pipeline on one or more inputs.
    Pipeline(PipelineArgs),
    /// Print the task vocabularies.
    Taxonomy,
}

#[derive(Args)]
struct GamArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_F_RATE)]
    f_rate: f32,
    /// Signed degrees, positive clockwise (90, 180, 270, -90, ...).
    #[arg(long, default_value_t = 180, allow_hyphen_values = true)]
    rotation: i32,
    /// Project the stack back to the input channel count.
    #[arg(long)]
    project: bool,
}

#[derive(Args)]
struct HeaArgs {
    #[arg(long)]
    task1: String,
    #[arg(long)]
    task5: String,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct VcvaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON array with one weight per channel; uniform when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Gate width; defaults to the mean absolute weight.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    t1: f64,
    #[arg(long, default_value_t = 0.5)]
    t2: f64,
    /// Voxelize raw heatmap values instead of max-normalized ones.
    #[arg(long)]
    raw: bool,
    /// Voxel CSV path; the sidecar goes next to it.
    #[arg(long, default_value = "voxels.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Reject unknown keys.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Background,
    Occlusion,
    #[value(name = "rain_snow")]
    RainSnow,
    #[value(name = "label_noise")]
    LabelNoise,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Low,
    Moderate,
    High,
}

impl From<TierArg> for Tier {
    fn from(t: TierArg) -> Self {
        match t {
            TierArg::Low => Tier::Low,
            TierArg::Moderate => Tier::Moderate,
            TierArg::High => Tier::High,
        }
    }
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, value_enum, conflicts_with = "intensity")]
    tier: Option<TierArg>,
    #[arg(long)]
    intensity: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input map (FMAP, PGM or PPM), or annotation JSON for label noise.
    /// Image corruptions fall back to a flat grey 3x100x100 map.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Background map for blending.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Number of labels to corrupt.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Pipeline configuration JSON.
    #[arg(long)]
    pipeline: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 4)]
    inputs: usize,
    /// Side of the square synthetic inputs.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
}

#[derive(Args)]
struct PipelineArgs {
    /// Input maps (FMAP, PGM or PPM).
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads across inputs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    let cfg: PipelineConfig = match path {
        Some(p) => io::load_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gam(a: &GamArgs) -> anyhow::Result<()> {
    let rotation = Rotation::from_signed_degrees(a.rotation).ok_or_else(|| {
        usage(format!(
            "rotation must be ±90, ±180 or ±270, got {}",
            a.rotation
        ))
    })?;
    let map = io::load_input(&a.input)?;
    let params = EnsembleParams {
        seed: a.seed,
        ..EnsembleParams::default()
    };
    let set = gam_generate(&map, &params, rotation, a.f_rate)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut written = Vec::new();
    for (k, m) in set.maps().iter().enumerate() {
        let p = a.out_dir.join(format!("mv{}.fmap", k + 1));
        io::save_fmap(m, &p)?;
        written.push(p);
    }
    let stack = gam_stack(&set, &map, a.project, a.seed)?;
    let p = a.out_dir.join("stack.fmap");
    io::save_fmap(&stack, &p)?;
    written.push(p);
    print_json(&json!({
        "input": map.shape().to_string(),
        "stack": stack.shape().to_string(),
        "files": written,
    }))
}

fn cmd_hea(a: &HeaArgs) -> anyhow::Result<()> {
    let t1 = ClassLabel::new(TaskId::Task1, &a.task1)?;
    let t5 = ClassLabel::new(TaskId::Task5, &a.task5)?;
    print_json(&refine_class_instances(t1, t5, a.strict)?)
}

fn cmd_vcva(a: &VcvaArgs) -> anyhow::Result<()> {
    let map = io::load_input(&a.input)?;
    let weights = match &a.weights {
        Some(p) => io::load_json::<ChannelWeights>(p)?,
        None => ChannelWeights::uniform(map.channels()),
    };
    let config = VcvaConfig {
        grid_spacing: a.spacing,
        epsilon: a.epsilon,
        thresholds: SeverityThresholds { t1: a.t1, t2: a.t2 },
        normalize: !a.raw,
    };
    let (_, grid, verdict) = vcva_pipeline(&map, &weights, &config)?;
    io::export_voxels(&grid, Some(verdict), &a.out)?;
    print_json(&json!({
        "voxels": grid.len(),
        "v_total": grid.v_total(),
        "severity": verdict,
        "csv": a.out,
        "sidecar": io::sidecar_path(&a.out),
    }))
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let pred = io::load_detections(&a.pred, a.strict)?;
    let gt = io::load_detections(&a.gt, a.strict)?;
    let mut classes: Vec<ClassLabel> = pred.iter().chain(&gt).map(|r| r.label).collect();
    classes.sort();
    classes.dedup();
    print_json(&map_mar(&pred, &gt, &classes))
}

fn grey_input() -> FeatureMap {
    FeatureMap::filled(3, 100, 100, 0.5)
}

fn cmd_perturb(a: &PerturbArgs) -> anyhow::Result<()> {
    let kind = match a.kind {
        KindArg::LabelNoise => return label_noise(a),
        KindArg::Background => PerturbKind::Background,
        KindArg::Occlusion => PerturbKind::Occlusion,
        KindArg::RainSnow => PerturbKind::RainSnow,
    };
    let intensity = match (a.tier, a.intensity) {
        (Some(t), _) => kind.tier_intensity(t.into()),
        (None, Some(x)) => x,
        (None, None) => {
            return Err(usage(format!(
                "--tier or --intensity is required for {kind}"
            )))
        }
    };
    let spec = PerturbSpec {
        kind,
        intensity,
        seed: a.seed,
    };
    let image = match &a.input {
        Some(p) => io::load_input(p)?,
        None => grey_input(),
    };
    let background = a.background.as_deref().map(io::load_input).transpose()?;
    let out = perturb::perturb(&image, &spec, background.as_ref())?;
    let changed = out
        .data()
        .iter()
        .zip(image.data())
        .filter(|(x, y)| x != y)
        .count();
    if let Some(p) = &a.out {
        io::save_fmap(&out, p)?;
    }
    print_json(&json!({
        "kind": kind,
        "intensity": intensity,
        "seed": a.seed,
        "changed_values": changed,
        "changed_fraction": changed as f64 / image.data().len() as f64,
        "out": a.out,
    }))
}

fn label_noise(a: &PerturbArgs) -> anyhow::Result<()> {
    let Some(input) = &a.input else {
        return Err(usage(
            "label noise needs --in with an annotation JSON array",
        ));
    };
    let Some(count) = a.count else {
        return Err(usage("label noise needs --count"));
    };
    let records = io::load_detections(input, false)?;
    let noisy = perturb::inject_label_noise(
        &records,
        &LabelNoiseSpec {
            count,
            seed: a.seed,
        },
    )?;
    match &a.out {
        Some(p) => io::save_detections(&noisy, p)?,
        None => print_json(&serde_json::to_value(&noisy)?)?,
    }
    Ok(())
}

fn synthetic_inputs(
    n: usize,
    channels: usize,
    size: usize,
    seed: u64,
) -> anyhow::Result<Vec<FeatureMap>> {
    (0..n as u64)
        .map(|k| {
            let w = SeededWeights::generate(seed.wrapping_add(k), channels * size * size);
            Ok(FeatureMap::new(channels, size, size, w.values().to_vec())?)
        })
        .collect()
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.pipeline.as_deref())?;
    let inputs = synthetic_inputs(a.inputs, a.channels, a.size, cfg.seed)?;
    // Fail fast on data errors before timing.
    run_pipeline("warmup", &inputs[0], &cfg)?;
    let report = bench(&inputs, a.repeats, |m| {
        let _ = run_pipeline("bench", m, &cfg);
    })?;
    print_json(&report)
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_pipeline(a: &PipelineArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let jobs = a.jobs.clamp(1, a.inputs.len());
    let run = |p: &PathBuf| -> anyhow::Result<_> {
        let map = io::load_input(p)?;
        run_pipeline(&image_id(p), &map, &cfg).with_context(|| p.display().to_string())
    };
    let chunk = a.inputs.len().div_ceil(jobs);
    let docs = std::thread::scope(|s| {
        let handles: Vec<_> = a
            .inputs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<anyhow::Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("pipeline worker panicked"))
            .collect::<anyhow::Result<Vec<_>>>()
    })?
    .concat();
    match &a.out {
        Some(p) => Ok(io::save_predictions(&docs, p)?),
        None => {
            println!("{}", io::predictions_to_json(&docs)?);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Gam(a) => cmd_gam(a),
        Command::Hea(a) => cmd_hea(a),
        Command::Vcva(a) => cmd_vcva(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Taxonomy => print_json(&io::taxonomy()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}

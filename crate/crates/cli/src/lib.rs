//! Command-line scoring, generation, decoding and self-checks over `vql3d-core`.
//!
//! Exit codes: 0 on success, 1 when a file cannot be read or written, 2 when an input,
//! flag or configuration fails validation.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use vql3d_core::anchor::{assemble_track, AnchorError, AnchorGrid, TrackAssembly, DEFAULT_COUNTS};
use vql3d_core::data::{
    compute_stats, generate_synthetic, parse_annotations, parse_head_document, parse_predictions, response_tracks,
    sequence_seed, serialize_annotations, serialize_head_document, serialize_predictions, splitmix64, DataError,
    HeadDocument, Header, SynthConfig, ANNOTATIONS_KIND, DEFAULT_BINS, PREDICTIONS_KIND,
};
use vql3d_core::fusion::{
    add_fuse, align_2d_to_volume, daf_fuse, frustum_mask, gaf_fuse, lift, paf_fuse, DepthEncoding, FeatureMap2D,
    FeatureVolume3D, FusionBlock, FusionError, WeightRow,
};
use vql3d_core::geom::{iou3d, mc_iou_oracle, Box9, GeomError, PinholeCamera, Workspace};
use vql3d_core::metrics::{score, EvalConfig, MetricReport, MetricsError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Validation(_) => 2,
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        })*
    };
}

validation_from!(DataError, MetricsError, AnchorError, FusionError, GeomError);

#[derive(Debug, Parser)]
#[command(
    name = "vql3d",
    version,
    about = "Scoring and tooling for 3D visual query localization"
)]
pub struct Cli {
    /// Worker threads; outputs do not depend on this value.
    #[arg(long, global = true, value_parser = parse_workers)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score Top-1 predictions against annotated response tracks.
    Score(ScoreArgs),
    /// Generate a synthetic split with oracle and degraded predictions.
    Gen(GenArgs),
    /// Histogram statistics of an annotations document.
    Stats(StatsArgs),
    /// Turn raw head outputs into a predictions document.
    Decode(DecodeArgs),
    /// Compare the exact box IoU with a Monte Carlo estimate on random pairs.
    Selfcheck(SelfcheckArgs),
    /// Run one fusion variant on a seeded scene and print a digest of the result.
    FuseDemo(FuseDemoArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold)]
    pub thresholds_t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold)]
    pub thresholds_st: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator config; fields left out take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Also write head tensors encoding the ground truth.
    #[arg(long)]
    pub heads: bool,
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 3]>,
    #[arg(long, value_parser = parse_workspace)]
    pub workspace: Option<Workspace>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Center jitter standard deviation, meters.
    #[arg(long)]
    pub noise_center: Option<f64>,
    /// Log-scale size jitter standard deviation.
    #[arg(long)]
    pub noise_size: Option<f64>,
    /// Euler angle jitter standard deviation, radians.
    #[arg(long)]
    pub noise_angle: Option<f64>,
    /// Temporal shift of the predicted interval, frames.
    #[arg(long, allow_hyphen_values = true)]
    pub noise_shift: Option<i64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, value_parser = parse_workspace)]
    pub workspace: Option<Workspace>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Head tensor document.
    #[arg(long)]
    pub heads: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Anchor counts; taken from the document header when omitted.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 3]>,
    #[arg(long, value_parser = parse_workspace)]
    pub workspace: Option<Workspace>,
    #[arg(long, default_value_t = 0.5, value_parser = parse_threshold)]
    pub presence_threshold: f64,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    #[arg(long, default_value_t = 2_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseDemoArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Volume side is `8 * scale` voxels.
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    #[arg(long, value_enum, default_value_t = Variant::Add)]
    pub variant: Variant,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Add,
    Daf,
    Gaf,
    Paf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Add, Variant::Daf, Variant::Gaf, Variant::Paf];
}

fn parse_workers(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("worker count must be an integer >= 1, got {s:?}")),
    }
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let t: f64 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(format!("threshold {t} outside (0, 1]"))
    }
}

fn parse_list<const N: usize, T: std::str::FromStr>(s: &str) -> Result<[T; N], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated values, got {}", parts.len()));
    }
    let values = parts
        .iter()
        .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<T>, String>>()?;
    values.try_into().map_err(|_| unreachable!("length checked"))
}

/// `"nx,ny,nz"`, each positive.
pub fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let counts: [usize; 3] = parse_list(s)?;
    if counts.contains(&0) {
        return Err(format!("anchor counts must be positive, got {counts:?}"));
    }
    Ok(counts)
}

/// `"x0,y0,z0,x1,y1,z1"` with every minimum below its maximum.
pub fn parse_workspace(s: &str) -> Result<Workspace, String> {
    let v: [f64; 6] = parse_list(s)?;
    let ws = Workspace::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]);
    if (0..3).any(|k| !ws.max[k].is_finite() || !ws.min[k].is_finite() || ws.min[k] >= ws.max[k]) {
        return Err(format!("workspace {v:?} needs finite min < max on every axis"));
    }
    Ok(ws)
}

/// Runs the parsed command on a dedicated pool of `--workers` threads.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
        Command::FuseDemo(a) => cmd_fuse_demo(a),
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn score_documents(gt_text: &str, pred_text: &str, config: &EvalConfig) -> Result<MetricReport, CliError> {
    let gts = response_tracks(&parse_annotations(gt_text)?);
    let preds = parse_predictions(pred_text)?;
    Ok(score(&preds, &gts, config)?)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let gt_text = read_text(&args.gt)?;
    let pred_text = read_text(&args.pred)?;
    let mut config = EvalConfig::default();
    if let Some(t) = &args.thresholds_t {
        config.temporal_thresholds = t.clone();
    }
    if let Some(t) = &args.thresholds_st {
        config.spatiotemporal_thresholds = t.clone();
    }
    let report = score_documents(&gt_text, &pred_text, &config)?;
    emit(args.out.as_deref(), &to_json(&report))
}

/// Generator config after the config file and the individual flags are applied.
pub fn gen_config(args: &GenArgs) -> Result<SynthConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str::<SynthConfig>(&read_text(path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        None => SynthConfig::default(),
    };
    if let Some(n) = args.sequences {
        config.num_sequences = n;
    }
    if let Some(n) = args.min_frames {
        config.min_frames = n;
    }
    if let Some(n) = args.max_frames {
        config.max_frames = n;
    }
    if let Some(v) = args.noise.noise_center {
        config.noise.center_jitter = v;
    }
    if let Some(v) = args.noise.noise_size {
        config.noise.size_jitter = v;
    }
    if let Some(v) = args.noise.noise_angle {
        config.noise.angle_jitter = v;
    }
    if let Some(v) = args.noise.noise_shift {
        config.noise.temporal_shift = v;
    }
    if let Some(ws) = args.workspace {
        config.workspace = ws;
    }
    if args.heads || args.grid.is_some() {
        config.head_grid = Some(args.grid.or(config.head_grid).unwrap_or(DEFAULT_COUNTS));
    }
    config.validate()?;
    Ok(config)
}

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const ORACLE_FILE: &str = "oracle.jsonl";
pub const DEGRADED_FILE: &str = "degraded.jsonl";
pub const HEADS_FILE: &str = "heads.jsonl";

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let config = gen_config(args)?;
    let data = generate_synthetic(args.seed, &config)?;
    let echo = json!({ "seed": args.seed, "synth": config });
    let with_source = |source: &str| {
        let mut v = echo.clone();
        v["source"] = Value::from(source);
        Header::new(PREDICTIONS_KIND, Some(v))
    };
    fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    let ann_header = Header::new(ANNOTATIONS_KIND, Some(echo.clone()));
    write_text(
        &args.out.join(ANNOTATIONS_FILE),
        &serialize_annotations(&data.annotations, Some(&ann_header)),
    )?;
    write_text(
        &args.out.join(ORACLE_FILE),
        &serialize_predictions(&data.oracle, Some(&with_source("oracle"))),
    )?;
    write_text(
        &args.out.join(DEGRADED_FILE),
        &serialize_predictions(&data.degraded, Some(&with_source("degraded"))),
    )?;
    if let (Some(records), Some(counts)) = (data.heads, config.head_grid) {
        let doc = HeadDocument {
            header: Some(HeadDocument::grid_header(&config.workspace, counts, Some(echo))),
            records,
        };
        write_text(&args.out.join(HEADS_FILE), &serialize_head_document(&doc))?;
    }
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs) -> Result<(), CliError> {
    let annotations = parse_annotations(&read_text(&args.gt)?)?;
    if args.bins == 0 {
        return Err(CliError::Validation("bin count must be positive".into()));
    }
    let stats = compute_stats(&annotations, &args.workspace.unwrap_or_default(), args.bins)?;
    emit(args.out.as_deref(), &to_json(&stats))
}

/// Anchor grid for a head document: flags first, then the header, then the default grid.
/// A flag that contradicts the header is rejected.
pub fn resolve_grid(
    doc: &HeadDocument,
    counts: Option<[usize; 3]>,
    workspace: Option<Workspace>,
) -> Result<AnchorGrid, CliError> {
    let declared = doc.grid();
    if let Some((ws, c)) = declared {
        if counts.is_some_and(|flag| flag != c) || workspace.is_some_and(|flag| flag != ws) {
            return Err(CliError::Validation(format!(
                "grid flags disagree with the document header (counts {c:?}, workspace {ws:?})"
            )));
        }
    }
    let counts = counts.or(declared.map(|d| d.1)).unwrap_or(DEFAULT_COUNTS);
    let workspace = workspace.or(declared.map(|d| d.0)).unwrap_or_default();
    Ok(AnchorGrid::new(workspace, counts)?)
}

/// Decodes every record into at most one track; records without a qualifying frame are
/// left out.
pub fn decode_document(
    text: &str,
    counts: Option<[usize; 3]>,
    workspace: Option<Workspace>,
    presence_threshold: f64,
) -> Result<String, CliError> {
    let doc = parse_head_document(text)?;
    let grid = resolve_grid(&doc, counts, workspace)?;
    let rule = TrackAssembly {
        presence_threshold,
        ..TrackAssembly::default()
    };
    let mut problems = Vec::new();
    let mut tracks = Vec::new();
    for r in &doc.records {
        let head = match r.to_head_output(grid.len()) {
            Ok(h) => h,
            Err(issues) => {
                problems.extend(issues.into_iter().map(|m| format!("{}: {m}", r.sequence_id)));
                continue;
            }
        };
        match assemble_track(&r.sequence_id, &grid, &head, &rule) {
            Ok(Some(t)) => tracks.push(t),
            Ok(None) => {}
            Err(e) => problems.push(format!("{}: {e}", r.sequence_id)),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(format!(
            "{} invalid head record(s):\n{}",
            problems.len(),
            problems.join("\n")
        )));
    }
    let header = Header::new(
        PREDICTIONS_KIND,
        Some(json!({
            "source": "decode",
            "grid": { "workspace": grid.workspace(), "counts": grid.counts() },
            "assembly": rule,
        })),
    );
    Ok(serialize_predictions(&tracks, Some(&header)))
}

pub fn cmd_decode(args: &DecodeArgs) -> Result<(), CliError> {
    let text = read_text(&args.heads)?;
    let out = decode_document(&text, args.grid, args.workspace, args.presence_threshold)?;
    emit(args.out.as_deref(), &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub iou: f64,
    pub estimate: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub pairs: usize,
    pub samples: usize,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    pub worst_pair: usize,
    /// Largest gap between the clipped IoU and the closed form on axis-aligned pairs.
    pub axis_aligned_max_deviation: f64,
    pub passed: bool,
    pub per_pair: Vec<PairCheck>,
}

fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(lo..hi))
}

/// Pair `index` of a self-check run: a random oriented box and a neighbour with nonzero
/// overlap, redrawn until they intersect.
pub fn selfcheck_pair(seed: u64, index: usize) -> (Box9, Box9) {
    let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(seed, index));
    loop {
        let a = Box9::new(
            uniform3(&mut rng, -1.0, 1.0),
            uniform3(&mut rng, 0.3, 2.0),
            uniform3(&mut rng, -PI, PI),
        )
        .expect("positive sizes");
        let c = a.center() + Vector3::from(uniform3(&mut rng, -0.5, 0.5));
        let b = Box9::new(
            [c.x, c.y, c.z],
            uniform3(&mut rng, 0.3, 2.0),
            uniform3(&mut rng, -PI, PI),
        )
        .expect("positive sizes");
        if iou3d(&a, &b) > 0.0 {
            return (a, b);
        }
    }
}

fn axis_aligned_gap(seed: u64, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(sequence_seed(seed, index) ^ 0xA5A5_A5A5));
    let (ca, sa) = (uniform3(&mut rng, -1.0, 1.0), uniform3(&mut rng, 0.1, 2.0));
    let (cb, sb) = (uniform3(&mut rng, -1.0, 1.0), uniform3(&mut rng, 0.1, 2.0));
    let mut inter = 1.0;
    for k in 0..3 {
        let lo = (ca[k] - sa[k] / 2.0).max(cb[k] - sb[k] / 2.0);
        let hi = (ca[k] + sa[k] / 2.0).min(cb[k] + sb[k] / 2.0);
        inter *= (hi - lo).max(0.0);
    }
    let va: f64 = sa.iter().product();
    let vb: f64 = sb.iter().product();
    let closed = inter / (va + vb - inter);
    let a = Box9::axis_aligned(ca, sa).expect("positive sizes");
    let b = Box9::axis_aligned(cb, sb).expect("positive sizes");
    (iou3d(&a, &b) - closed).abs()
}

pub fn selfcheck(seed: u64, pairs: usize, samples: usize, tolerance: f64) -> Result<SelfCheckReport, CliError> {
    if pairs == 0 || samples == 0 {
        return Err(CliError::Validation(
            "self-check needs at least one pair and one sample".into(),
        ));
    }
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(CliError::Validation(format!(
            "tolerance {tolerance} must be non-negative"
        )));
    }
    let per_pair: Vec<PairCheck> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let (a, b) = selfcheck_pair(seed, i);
            let iou = iou3d(&a, &b);
            let estimate = mc_iou_oracle(&a, &b, samples, splitmix64(sequence_seed(seed, i)));
            PairCheck {
                iou,
                estimate,
                deviation: (iou - estimate).abs(),
            }
        })
        .collect();
    let axis_aligned_max_deviation = (0..pairs)
        .into_par_iter()
        .map(|i| axis_aligned_gap(seed, i))
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max);
    let (worst_pair, max_deviation) =
        per_pair.iter().enumerate().fold(
            (0, 0.0),
            |best, (i, p)| if p.deviation > best.1 { (i, p.deviation) } else { best },
        );
    let mean_deviation = per_pair.iter().map(|p| p.deviation).sum::<f64>() / pairs as f64;
    Ok(SelfCheckReport {
        seed,
        pairs,
        samples,
        tolerance,
        max_deviation,
        mean_deviation,
        worst_pair,
        axis_aligned_max_deviation,
        passed: max_deviation <= tolerance && axis_aligned_max_deviation <= 1e-12,
        per_pair,
    })
}

/// Writes the report, then fails with exit code 2 if any deviation is out of tolerance.
pub fn cmd_selfcheck(args: &SelfcheckArgs) -> Result<(), CliError> {
    let report = selfcheck(args.seed, args.pairs, args.samples, args.tolerance)?;
    emit(args.out.as_deref(), &to_json(&report))?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "max deviation {} (pair {}), axis-aligned {}, tolerance {}",
            report.max_deviation, report.worst_pair, report.axis_aligned_max_deviation, report.tolerance
        )))
    }
}

pub const DEMO_CHANNELS: usize = 8;
pub const DEMO_HEADS: usize = 4;

/// Seeded volume, token map and a camera inside the default workspace looking along `+x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoScene {
    pub volume: FeatureVolume3D,
    pub map: FeatureMap2D,
    pub camera: PinholeCamera,
}

pub fn demo_scene(seed: u64, scale: usize) -> Result<DemoScene, CliError> {
    if scale == 0 || scale > 8 {
        return Err(CliError::Validation(format!("scale {scale} outside 1..=8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let focal = 12.0 * scale as f64;
    let camera = PinholeCamera::looking_along_x(
        focal * rng.random_range(0.5..1.0),
        focal * rng.random_range(0.5..1.0),
        16 * scale,
        16 * scale,
        Vector3::new(
            rng.random_range(1.0..4.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.3..0.3),
        ),
    )?;
    let side = 8 * scale;
    Ok(DemoScene {
        volume: FeatureVolume3D::random([side; 3], DEMO_CHANNELS, Workspace::default(), splitmix64(seed ^ 1))?,
        map: FeatureMap2D::random(4 * scale, 4 * scale, DEMO_CHANNELS, splitmix64(seed ^ 2))?,
        camera,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseDigest {
    pub variant: Variant,
    pub seed: u64,
    pub scale: usize,
    pub dims: [usize; 3],
    pub channels: usize,
    pub in_frustum: usize,
    /// Voxels whose output features are bit-identical to the input.
    pub unchanged: usize,
    pub weight_rows: usize,
    pub weight_row_sum_min: Option<f64>,
    pub weight_row_sum_max: Option<f64>,
    pub slice_checksums: Vec<f64>,
    pub input_sha256: String,
    pub sha256: String,
}

/// SHA-256 of the little-endian bytes of every feature value in storage order.
pub fn volume_sha256(volume: &FeatureVolume3D) -> String {
    let mut h = Sha256::new();
    for v in volume.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Digest of a fused volume against the scene it came from.
pub fn digest(
    variant: Variant,
    seed: u64,
    scale: usize,
    scene: &DemoScene,
    out: &FeatureVolume3D,
    weights: &[WeightRow],
) -> FuseDigest {
    let sums: Vec<f64> = weights.iter().map(|w| w.weights.iter().sum()).collect();
    FuseDigest {
        variant,
        seed,
        scale,
        dims: out.dims(),
        channels: out.channels(),
        in_frustum: frustum_mask(&scene.camera, &scene.volume)
            .iter()
            .filter(|m| **m)
            .count(),
        unchanged: (0..out.num_voxels())
            .filter(|&n| out.voxel(n) == scene.volume.voxel(n))
            .count(),
        weight_rows: weights.len(),
        weight_row_sum_min: sums.iter().copied().reduce(f64::min),
        weight_row_sum_max: sums.iter().copied().reduce(f64::max),
        slice_checksums: out.slice_checksums(),
        input_sha256: volume_sha256(&scene.volume),
        sha256: volume_sha256(out),
    }
}

/// Fused volume and attention rows for one variant on `scene`.
pub fn fuse(variant: Variant, scene: &DemoScene, seed: u64) -> Result<(FeatureVolume3D, Vec<WeightRow>), CliError> {
    let block = || FusionBlock::seeded(DEMO_CHANNELS, DEMO_HEADS, splitmix64(seed ^ 3));
    let out = match variant {
        Variant::Add => {
            let aligned = align_2d_to_volume(&scene.map, &scene.camera, &scene.volume)?;
            return Ok((add_fuse(&scene.volume, &aligned)?, Vec::new()));
        }
        Variant::Daf => {
            let lifted = lift(&scene.map, &scene.camera, scene.volume.dims()[0], 0.5, 9.0)?;
            daf_fuse(&scene.volume, &lifted, &scene.camera, &block()?)?
        }
        Variant::Gaf => {
            let encoding = DepthEncoding::sinusoidal(scene.volume.dims()[0], DEMO_CHANNELS);
            gaf_fuse(&scene.volume, &scene.map, &encoding, &scene.camera, &block()?)?
        }
        Variant::Paf => paf_fuse(&scene.volume, &scene.map, &scene.camera, &block()?)?,
    };
    Ok((out.volume, out.weights))
}

pub fn fuse_demo(seed: u64, scale: usize, variant: Variant) -> Result<FuseDigest, CliError> {
    let scene = demo_scene(seed, scale)?;
    let (out, weights) = fuse(variant, &scene, seed)?;
    Ok(digest(variant, seed, scale, &scene, &out, &weights))
}

pub fn cmd_fuse_demo(args: &FuseDemoArgs) -> Result<(), CliError> {
    let d = fuse_demo(args.seed, args.scale, args.variant)?;
    emit(args.out.as_deref(), &to_json(&d))
}

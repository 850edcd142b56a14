//! Command implementations behind the `facemotion` binary.
//!
//! Every command reads its options from explicit flags merged over an
//! optional JSON config file (`--config`), writes data only to files and
//! logs to standard error. Exit codes: [`EXIT_OK`], [`EXIT_INPUT`] for bad
//! input, [`EXIT_NONCONVERGED`] when a fit did not converge.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::benchmark::{
    build_benchmark, frame_file, frame_paths, read_identity_of, read_video_params, BenchmarkSpec,
};
use crate::error::{ensure, Error, Result};
use crate::image::{Image, Mask};
use crate::io::{read_json, write_bytes, write_json, KeypointSequence};
use crate::keypoints::{KeypointSet, Vec2, Vec3};
use crate::losses::masked_l1;
use crate::metrics::{
    aed, apd, expression_vector, feature_set, frechet_distance, gaze_directions, l1, mae_angular, pose_vector,
    psnr, ssim, MetricReport, PooledGray,
};
use crate::motion::{
    animate, delta_leakage, edit_enhance, edit_replace, procrustes_fit, transform_liveportrait, MotionDescriptor,
};
use crate::region::{
    apply_warp, attenuate_outside_mask, default_sigma, estimate_warp_field, facial_masks, Camera, WarpField,
    DEFAULT_EXPANSION,
};
use crate::rig::{make_synthetic_rig, FlameParams, RigDefinition, SyntheticRigConfig};
use crate::rotation::{axis_angle_to_matrix, rotation_angle_between};
use crate::tracker::{fit_keypoint_sequence, JacobianMode, TrackedSequence, TrackerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NONCONVERGED: i32 = 3;

/// Exit code for a failed command: degenerate numerics map to
/// [`EXIT_NONCONVERGED`], everything else is an input problem.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Rank(_) | Error::Numeric(_) => EXIT_NONCONVERGED,
        _ => EXIT_INPUT,
    }
}

#[derive(Parser, Debug)]
#[command(name = "facemotion", version, about = "Keypoint-driven face motion editing toolkit")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON option file, either flat or keyed by subcommand; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic rig definition.
    RigGen(RigGenOpts),
    /// Generate the pose-locked synthetic benchmark.
    BenchGen(BenchGenOpts),
    /// Fit rig parameters to a keypoint sequence.
    Track(TrackOpts),
    /// Edit a source video with a driving video's motion.
    Edit(EditOpts),
    /// Compare generated frames with reference frames.
    Eval(EvalOpts),
    /// Tabulate expression/pose leakage of the two keypoint conventions.
    Leakage(LeakageOpts),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RigGen(_) => "rig-gen",
            Command::BenchGen(_) => "bench-gen",
            Command::Track(_) => "track",
            Command::Edit(_) => "edit",
            Command::Eval(_) => "eval",
            Command::Leakage(_) => "leakage",
        }
    }
}

const COMMAND_NAMES: [&str; 6] = ["rig-gen", "bench-gen", "track", "edit", "eval", "leakage"];

fn parse_bool_flag(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true/false, got {s}")),
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigGenOpts {
    /// Output rig JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 600]
    #[arg(long)]
    pub n_vertices: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub n_shape: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub n_expr: Option<usize>,
    /// [default: 49]
    #[arg(long)]
    pub n_keypoints: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchGenOpts {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 4]
    #[arg(long)]
    pub identities: Option<usize>,
    /// Expression tracks per identity [default: 4].
    #[arg(long)]
    pub tracks: Option<usize>,
    /// [default: 150]
    #[arg(long)]
    pub frames: Option<usize>,
    /// [default: 30]
    #[arg(long)]
    pub fps: Option<f64>,
    /// [default: 128]
    #[arg(long)]
    pub height: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    pub width: Option<usize>,
    /// [default: 7]
    #[arg(long)]
    pub pose_seed: Option<u64>,
    /// Comma-separated, one per track (default: derived from the pose seed).
    #[arg(long, value_delimiter = ',')]
    pub expression_seeds: Option<Vec<u64>>,
    /// [default: 0]
    #[arg(long)]
    pub rig_seed: Option<u64>,
    /// [default: 600]
    #[arg(long)]
    pub n_vertices: Option<usize>,
    /// [default: 49]
    #[arg(long)]
    pub n_keypoints: Option<usize>,
}

/// Tracker tuning shared by the commands that may run the tracker.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerOpts {
    /// [default: 100]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// [default: 1e-9]
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    /// [default: 0.1]
    #[arg(long)]
    pub smoothness_lambda: Option<f64>,
    /// analytic | finite_difference [default: analytic]
    #[arg(long, value_parser = parse_jacobian)]
    pub jacobian: Option<JacobianMode>,
    /// [default: 1e-6]
    #[arg(long)]
    pub fd_step: Option<f64>,
    /// Free the neck rotation as well as the head [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = parse_bool_flag)]
    pub free_neck: Option<bool>,
}

fn parse_jacobian(s: &str) -> std::result::Result<JacobianMode, String> {
    match s {
        "analytic" => Ok(JacobianMode::Analytic),
        "finite_difference" | "finite-difference" | "fd" => Ok(JacobianMode::FiniteDifference),
        _ => Err(format!("unknown jacobian mode {s}")),
    }
}

impl TrackerOpts {
    pub fn resolve(&self) -> Result<TrackerConfig> {
        let d = TrackerConfig::default();
        let cfg = TrackerConfig {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            convergence_tol: self.convergence_tol.unwrap_or(d.convergence_tol),
            smoothness_lambda: self.smoothness_lambda.unwrap_or(d.smoothness_lambda),
            jacobian_mode: self.jacobian.unwrap_or(d.jacobian_mode),
            fd_step: self.fd_step.unwrap_or(d.fd_step),
            free_neck: self.free_neck.unwrap_or(d.free_neck),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackOpts {
    /// Keypoint sequence JSON.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Rig JSON.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Output tracked-sequence JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Identity JSON whose shape coefficients are used instead of fitting them.
    #[arg(long)]
    pub identity: Option<PathBuf>,
    #[command(flatten)]
    pub tracker: TrackerOpts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    Replace,
    Enhance,
    Animate,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditOpts {
    /// Source video directory.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Driving video directory.
    #[arg(long)]
    pub driving: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<EditMode>,
    /// Confine the warp to the facial region [default: on for replace/enhance, off for animate].
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = parse_bool_flag)]
    pub bam: Option<bool>,
    /// Warp kernel width in pixels [default: 5% of the shorter side].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Landmark expansion factor for the facial mask [default: 1.2].
    #[arg(long)]
    pub expansion: Option<f64>,
    /// Attenuation ramp outside the mask, pixels [default: 0].
    #[arg(long)]
    pub feather: Option<f64>,
    /// Driving frame used as the enhancement anchor [default: 0].
    #[arg(long)]
    pub anchor_frame: Option<usize>,
    /// Source frame used for animation [default: 0].
    #[arg(long)]
    pub source_frame: Option<usize>,
    /// Rig JSON [default: <source>/../rig.json].
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[command(flatten)]
    pub tracker: TrackerOpts,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOpts {
    /// Generated frames directory.
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Reference frames directory.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Output directory for metrics.csv and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rig JSON used for parameter metrics [default: <reference>/../rig.json if present].
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Directory holding mask_%04d.pbm facial masks; adds a non-facial L1 column.
    #[arg(long)]
    pub nonfacial_from: Option<PathBuf>,
    /// Pooling grid of the distribution features [default: 8].
    #[arg(long)]
    pub grid: Option<usize>,
    #[command(flatten)]
    pub tracker: TrackerOpts,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageOpts {
    /// Output directory for leakage.json and leakage.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 1000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Keypoints per sample [default: 49].
    #[arg(long)]
    pub keypoints: Option<usize>,
    /// Smallest sampled rotation angle, degrees [default: 5].
    #[arg(long)]
    pub min_angle: Option<f64>,
    /// Largest sampled rotation angle, degrees [default: 60].
    #[arg(long)]
    pub max_angle: Option<f64>,
}

// ---------------------------------------------------------------------------
// Config merging
// ---------------------------------------------------------------------------

/// Overlays non-null fields of `top` onto `base`, recursing into objects.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                if v.is_null() {
                    continue;
                }
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

/// Picks the section of a config document that applies to `command`.
fn config_section(doc: &Value, command: &str) -> Value {
    let Value::Object(map) = doc else {
        return Value::Null;
    };
    if map.keys().any(|k| COMMAND_NAMES.contains(&k.as_str())) {
        map.get(command).cloned().unwrap_or(Value::Null)
    } else {
        doc.clone()
    }
}

/// Options from `config` (if any) with every explicitly given flag on top.
pub fn merge_options<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = config else {
        return serde_json::from_value(serde_json::to_value(flags).expect("options serialize"))
            .map_err(|e| Error::Parameter(e.to_string()));
    };
    let doc: Value = read_json(path)?;
    let mut base = match config_section(&doc, command) {
        Value::Null => Value::Object(Default::default()),
        v @ Value::Object(_) => v,
        _ => return Err(Error::format(path, format!("section {command} must be an object"))),
    };
    overlay(&mut base, serde_json::to_value(flags).expect("options serialize"));
    serde_json::from_value(base).map_err(|e| Error::format(path, e.to_string()))
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Parameter(format!("--{flag} is required")))
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let name = cli.command.name();
    let result = match cli.jobs {
        Some(0) => Err(Error::Parameter("--jobs must be positive".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::Parameter(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            log::error!("{name}: {e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = cli.config.as_deref();
    let name = cli.command.name();
    match &cli.command {
        Command::RigGen(o) => cmd_rig_gen(&merge_options(o, cfg, name)?),
        Command::BenchGen(o) => cmd_bench_gen(&merge_options(o, cfg, name)?),
        Command::Track(o) => cmd_track(&merge_options(o, cfg, name)?),
        Command::Edit(o) => cmd_edit(&merge_options(o, cfg, name)?),
        Command::Eval(o) => cmd_eval(&merge_options(o, cfg, name)?),
        Command::Leakage(o) => cmd_leakage(&merge_options(o, cfg, name)?),
    }
}

// ---------------------------------------------------------------------------
// rig-gen / bench-gen
// ---------------------------------------------------------------------------

pub fn cmd_rig_gen(o: &RigGenOpts) -> Result<i32> {
    let out = required(&o.out, "out")?;
    let d = SyntheticRigConfig::default();
    let rig = make_synthetic_rig(&SyntheticRigConfig {
        seed: o.seed.unwrap_or(d.seed),
        n_vertices: o.n_vertices.unwrap_or(d.n_vertices),
        n_shape: o.n_shape.unwrap_or(d.n_shape),
        n_expr: o.n_expr.unwrap_or(d.n_expr),
        n_keypoints: o.n_keypoints.unwrap_or(d.n_keypoints),
    })?;
    write_json(&out, &rig)?;
    log::info!("wrote rig with {} vertices to {}", rig.n_vertices(), out.display());
    Ok(EXIT_OK)
}

pub fn bench_spec_from(o: &BenchGenOpts) -> BenchmarkSpec {
    let d = BenchmarkSpec::default();
    BenchmarkSpec {
        n_identities: o.identities.unwrap_or(d.n_identities),
        n_expression_tracks: o.tracks.unwrap_or(d.n_expression_tracks),
        frames_per_video: o.frames.unwrap_or(d.frames_per_video),
        fps: o.fps.unwrap_or(d.fps),
        pose_track_seed: o.pose_seed.unwrap_or(d.pose_track_seed),
        expression_seeds: o.expression_seeds.clone().unwrap_or_default(),
        image_size: [o.height.unwrap_or(d.image_size[0]), o.width.unwrap_or(d.image_size[1])],
        rig_seed: o.rig_seed.unwrap_or(d.rig_seed),
        rig: SyntheticRigConfig {
            n_vertices: o.n_vertices.unwrap_or(d.rig.n_vertices),
            n_keypoints: o.n_keypoints.unwrap_or(d.rig.n_keypoints),
            ..d.rig.clone()
        },
        render: d.render,
    }
}

pub fn cmd_bench_gen(o: &BenchGenOpts) -> Result<i32> {
    let out = required(&o.out, "out")?;
    let m = build_benchmark(&bench_spec_from(o), &out)?;
    log::info!("wrote {} identities, {} triplets to {}", m.identities.len(), m.triplets.len(), out.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub frames: usize,
    pub all_converged: bool,
    pub max_residual: f64,
    pub mean_residual: f64,
    #[serde(flatten)]
    pub sequence: TrackedSequence,
}

impl TrackReport {
    pub fn new(sequence: TrackedSequence) -> Self {
        let r = &sequence.residual_per_frame;
        Self {
            frames: sequence.len(),
            all_converged: sequence.all_converged(),
            max_residual: r.iter().copied().fold(0.0, f64::max),
            mean_residual: r.iter().sum::<f64>() / r.len().max(1) as f64,
            sequence,
        }
    }
}

fn read_identity_beta(path: &Path) -> Result<Vec<f64>> {
    let v: Value = read_json(path)?;
    v.get("beta")
        .and_then(|b| serde_json::from_value(b.clone()).ok())
        .ok_or_else(|| Error::format(path, "missing beta array"))
}

pub fn cmd_track(o: &TrackOpts) -> Result<i32> {
    let kp_path = required(&o.keypoints, "keypoints")?;
    let rig: RigDefinition = read_json(required(&o.rig, "rig")?)?;
    let out = required(&o.out, "out")?;
    let cfg = o.tracker.resolve()?;
    let seq: KeypointSequence = read_json(&kp_path)?;
    ensure!(!seq.is_empty(), Parameter, "{}: no frames", kp_path.display());
    let beta = o.identity.as_deref().map(read_identity_beta).transpose()?;
    let tracked = fit_keypoint_sequence(&rig, &seq, beta.as_deref(), &cfg)?;
    let report = TrackReport::new(tracked);
    write_json(&out, &report)?;
    log::info!(
        "tracked {} frames, max residual {:.3e}, converged: {}",
        report.frames,
        report.max_residual,
        report.all_converged
    );
    Ok(if report.all_converged { EXIT_OK } else { EXIT_NONCONVERGED })
}

// ---------------------------------------------------------------------------
// Video loading
// ---------------------------------------------------------------------------

/// Per-frame rig parameters of a video directory: the stored parameter files
/// when an identity record is available, otherwise the tracker applied to
/// `keypoints.json`.
pub fn load_video_params(dir: &Path, rig: &RigDefinition, frames: usize, cfg: &TrackerConfig) -> Result<Vec<FlameParams>> {
    let identity = read_identity_of(dir)?;
    if let Some(id) = &identity {
        if let Some(p) = read_video_params(dir, frames, &id.beta, rig.n_expr())? {
            return Ok(p);
        }
    }
    let kp_path = dir.join("keypoints.json");
    ensure!(
        kp_path.is_file(),
        Parameter,
        "{}: neither parameter files nor keypoints.json found",
        dir.display()
    );
    let seq: KeypointSequence = read_json(&kp_path)?;
    ensure!(
        seq.len() == frames,
        Shape,
        "{}: {} keypoint frames for {frames} images",
        kp_path.display(),
        seq.len()
    );
    log::info!("{}: no parameter files, tracking keypoints", dir.display());
    let tracked = fit_keypoint_sequence(rig, &seq, identity.as_ref().map(|i| i.beta.as_slice()), cfg)?;
    if !tracked.all_converged() {
        log::warn!("{}: tracker did not converge on every frame", dir.display());
    }
    Ok(tracked.params_per_frame)
}

fn read_frames(paths: &[PathBuf]) -> Result<Vec<Image>> {
    paths.par_iter().map(Image::read).collect()
}

fn default_rig_path(video_dir: &Path) -> Option<PathBuf> {
    video_dir.parent().map(|p| p.join("rig.json")).filter(|p| p.is_file())
}

// ---------------------------------------------------------------------------
// edit
// ---------------------------------------------------------------------------

pub fn mask_file(f: usize) -> String {
    format!("mask_{f:04}.pbm")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpSettings {
    pub bam: bool,
    pub sigma: f64,
    pub expansion: f64,
    pub feather: f64,
}

/// One warped frame together with its masks and fields.
pub struct EditedFrame {
    pub image: Image,
    pub facial: Mask,
    pub nonfacial: Mask,
    pub raw_field: WarpField,
    pub field: WarpField,
}

/// Moves the content at `src_px` to `dst_px` by backward warping `source`.
/// The facial mask is the expanded hull of both keypoint sets; with `bam`
/// the field is attenuated outside it.
pub fn warp_edit_frame(source: &Image, src_px: &[Vec2], dst_px: &[Vec2], s: &WarpSettings) -> Result<EditedFrame> {
    let (h, w) = (source.height(), source.width());
    let raw_field = estimate_warp_field(src_px, dst_px, h, w, s.sigma)?;
    let landmarks: Vec<Vec2> = src_px.iter().chain(dst_px).copied().collect();
    let (facial, nonfacial) = facial_masks(&landmarks, s.expansion, h, w)?;
    let field = if s.bam {
        attenuate_outside_mask(&raw_field, &facial, s.feather)?
    } else {
        raw_field.clone()
    };
    let image = apply_warp(source, &field)?;
    Ok(EditedFrame {
        image,
        facial,
        nonfacial,
        raw_field,
        field,
    })
}

/// Edited keypoints `(source, edited)` of frame `i` for each mode.
pub fn edit_keypoints(
    mode: EditMode,
    rig: &RigDefinition,
    source: &FlameParams,
    driving: &FlameParams,
    driving_anchor: &FlameParams,
) -> Result<(KeypointSet, KeypointSet)> {
    let md_s = MotionDescriptor::from_rig(rig, source)?;
    let md_d = MotionDescriptor::from_rig(rig, driving)?;
    match mode {
        EditMode::Replace => edit_replace(&md_s, &md_d.delta),
        EditMode::Enhance => {
            let md_0 = MotionDescriptor::from_rig(rig, driving_anchor)?;
            edit_enhance(&md_s, &md_d.delta, &md_0.delta)
        }
        EditMode::Animate => animate(&md_s, &md_d),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EditRecord {
    mode: EditMode,
    frames: usize,
    warp: WarpSettings,
    anchor_frame: usize,
    source_frame: Option<usize>,
    camera: Camera,
}

pub fn cmd_edit(o: &EditOpts) -> Result<i32> {
    let src_dir = required(&o.source, "source")?;
    let drv_dir = required(&o.driving, "driving")?;
    let out = required(&o.out, "out")?;
    let mode = o.mode.unwrap_or(EditMode::Replace);
    let rig_path = match &o.rig {
        Some(p) => p.clone(),
        None => default_rig_path(&src_dir).ok_or_else(|| Error::Parameter("--rig is required".into()))?,
    };
    let rig: RigDefinition = read_json(&rig_path)?;
    let cfg = o.tracker.resolve()?;

    let src_paths = frame_paths(&src_dir);
    let drv_paths = frame_paths(&drv_dir);
    ensure!(!src_paths.is_empty(), Parameter, "{}: no frames", src_dir.display());
    ensure!(!drv_paths.is_empty(), Parameter, "{}: no frames", drv_dir.display());
    let source_frame = o.source_frame.unwrap_or(0);
    if mode == EditMode::Animate {
        ensure!(source_frame < src_paths.len(), Parameter, "source frame {source_frame} out of range");
    } else {
        ensure!(
            src_paths.len() == drv_paths.len(),
            Parameter,
            "frame count mismatch: source {} vs driving {}",
            src_paths.len(),
            drv_paths.len()
        );
    }
    let anchor = o.anchor_frame.unwrap_or(0);
    ensure!(anchor < drv_paths.len(), Parameter, "anchor frame {anchor} out of range");

    let src_params = load_video_params(&src_dir, &rig, src_paths.len(), &cfg)?;
    let drv_params = load_video_params(&drv_dir, &rig, drv_paths.len(), &cfg)?;
    let sources = read_frames(&src_paths)?;
    let (h, w) = (sources[0].height(), sources[0].width());
    ensure!(
        sources.iter().all(|i| i.height() == h && i.width() == w),
        Shape,
        "{}: frames differ in size",
        src_dir.display()
    );
    let camera = read_identity_of(&src_dir)?.map(|i| i.camera).unwrap_or_else(|| Camera::framing(h, w));
    let settings = WarpSettings {
        bam: o.bam.unwrap_or(mode != EditMode::Animate),
        sigma: o.sigma.unwrap_or_else(|| default_sigma(h, w)),
        expansion: o.expansion.unwrap_or(DEFAULT_EXPANSION),
        feather: o.feather.unwrap_or(0.0),
    };

    let keypoints = (0..drv_paths.len())
        .into_par_iter()
        .map(|i| {
            let si = if mode == EditMode::Animate { source_frame } else { i };
            let (x_s, x_d) = edit_keypoints(mode, &rig, &src_params[si], &drv_params[i], &drv_params[anchor])?;
            let edited = warp_edit_frame(&sources[si], &camera.project_all(&x_s.points), &camera.project_all(&x_d.points), &settings)?;
            edited.image.write(out.join(frame_file(i)))?;
            edited.facial.write(out.join(mask_file(i)))?;
            Ok(x_d)
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(out.join("keypoints.json"), &KeypointSequence::Full(keypoints))?;
    write_json(
        out.join("edit.json"),
        &EditRecord {
            mode,
            frames: drv_paths.len(),
            warp: settings,
            anchor_frame: anchor,
            source_frame: (mode == EditMode::Animate).then_some(source_frame),
            camera,
        },
    )?;
    log::info!("edited {} frames into {}", drv_paths.len(), out.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub means: std::collections::BTreeMap<String, f64>,
    /// Fréchet distance of pooled-feature statistics; absent with one frame.
    pub frechet: Option<f64>,
}

pub fn cmd_eval(o: &EvalOpts) -> Result<i32> {
    let gen_dir = required(&o.generated, "generated")?;
    let ref_dir = required(&o.reference, "reference")?;
    let out = required(&o.out, "out")?;
    let cfg = o.tracker.resolve()?;
    let gen_paths = frame_paths(&gen_dir);
    let ref_paths = frame_paths(&ref_dir);
    ensure!(!gen_paths.is_empty(), Parameter, "{}: no frames", gen_dir.display());
    ensure!(
        gen_paths.len() == ref_paths.len(),
        Parameter,
        "frame count mismatch: generated {} vs reference {}",
        gen_paths.len(),
        ref_paths.len()
    );
    let n = gen_paths.len();
    let generated = read_frames(&gen_paths)?;
    let reference = read_frames(&ref_paths)?;

    let masks = match &o.nonfacial_from {
        Some(dir) => Some(
            (0..n)
                .map(|i| Mask::read(dir.join(mask_file(i))).map(|m| m.complement()))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let rig_path = o.rig.clone().or_else(|| default_rig_path(&ref_dir));
    let params = match rig_path {
        Some(p) => {
            let rig: RigDefinition = read_json(&p)?;
            let g = load_video_params(&gen_dir, &rig, n, &cfg);
            let r = load_video_params(&ref_dir, &rig, n, &cfg);
            match (g, r) {
                (Ok(g), Ok(r)) => Some((rig, g, r)),
                (Err(e), _) | (_, Err(e)) => {
                    log::warn!("parameter metrics skipped: {e}");
                    None
                }
            }
        }
        None => None,
    };

    let mut columns = vec!["psnr", "ssim", "l1"];
    if masks.is_some() {
        columns.push("nonfacial_l1");
    }
    if params.is_some() {
        columns.extend(["aed", "apd", "mae_deg"]);
    }
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let (g, r) = (&generated[i], &reference[i]);
            let mut row = vec![psnr(g, r)?, ssim(g, r)?, l1(g, r)?];
            if let Some(m) = &masks {
                row.push(masked_l1(g, r, &m[i])?);
            }
            if let Some((rig, pg, pr)) = &params {
                row.push(aed(&[expression_vector(rig, &pg[i])], &[expression_vector(rig, &pr[i])])?);
                row.push(apd(&[pose_vector(&pg[i])], &[pose_vector(&pr[i])])?);
                let (a, b) = (gaze_directions(rig, &pg[i]), gaze_directions(rig, &pr[i]));
                row.push(0.5 * (mae_angular(&a[0], &b[0])? + mae_angular(&a[1], &b[1])?));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport::new(&columns);
    for row in rows {
        report.push_row(row);
    }
    let frechet = if n >= 2 {
        let ex = PooledGray {
            grid: o.grid.unwrap_or(8),
        };
        Some(frechet_distance(&feature_set(&generated, &ex)?, &feature_set(&reference, &ex)?)?)
    } else {
        None
    };
    let summary = EvalSummary {
        frames: n,
        means: columns.iter().map(|c| c.to_string()).zip(report.means()).collect(),
        frechet,
    };
    write_bytes(&out.join("metrics.csv"), report.to_csv().as_bytes())?;
    write_json(out.join("summary.json"), &summary)?;
    log::info!("evaluated {n} frames into {}", out.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// leakage
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageSample {
    pub angle_deg: f64,
    /// Max-norm of `δ_required − δ_true` for each convention.
    pub leak_liveportrait: f64,
    pub leak_recast: f64,
    /// Procrustes fit of the replacement-edited keypoints against `x_c + δ_d`.
    pub residual_liveportrait: f64,
    pub residual_recast: f64,
    pub rotation_error_liveportrait_deg: f64,
    pub rotation_error_recast_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(v: impl Iterator<Item = f64> + Clone) -> Self {
        let n = v.clone().count().max(1) as f64;
        Self {
            mean: v.clone().sum::<f64>() / n,
            min: v.clone().fold(f64::INFINITY, f64::min),
            max: v.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub seed: u64,
    pub samples: usize,
    pub keypoints: usize,
    pub angle_range_deg: [f64; 2],
    pub leak_liveportrait: Stats,
    pub leak_recast: Stats,
    pub residual_liveportrait: Stats,
    pub residual_recast: Stats,
    pub rotation_error_liveportrait_deg: Stats,
    pub rotation_error_recast_deg: Stats,
}

fn random_rotation(rng: &mut ChaCha8Rng, min_deg: f64, max_deg: f64) -> crate::keypoints::Mat3 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let axis = loop {
        let v = Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        if v.norm() > 1e-6 {
            break v.normalize();
        }
    };
    let angle = if max_deg > min_deg { rng.random_range(min_deg..max_deg) } else { min_deg };
    axis_angle_to_matrix(&(axis * angle.to_radians()))
}

fn random_set(rng: &mut ChaCha8Rng, k: usize, sigma: f64) -> KeypointSet {
    let n = Normal::new(0.0, sigma).expect("normal");
    (0..k)
        .map(|_| Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)))
        .collect::<Vec<_>>()
        .into()
}

/// Samples `(x_c, δ, R)` triples and a second driving pose, and measures how
/// much pose each convention leaks into the deformation and into a
/// replacement edit.
pub fn leakage_samples(seed: u64, samples: usize, k: usize, min_deg: f64, max_deg: f64) -> Result<Vec<LeakageSample>> {
    ensure!(samples >= 1, Parameter, "samples must be at least 1");
    ensure!(k >= 3, Parameter, "need at least 3 keypoints");
    ensure!(
        (0.0..=180.0).contains(&min_deg) && min_deg <= max_deg && max_deg <= 180.0,
        Parameter,
        "angle range must satisfy 0 <= min <= max <= 180"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x_c = random_set(&mut rng, k, 1.0);
        let delta_true = random_set(&mut rng, k, 0.1);
        let r_d = random_rotation(&mut rng, min_deg, max_deg);
        let r_s = random_rotation(&mut rng, min_deg, max_deg);
        let scale = rng.random_range(0.5..2.0);
        let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));

        let (d_lp, d_rc) = delta_leakage(&x_c, &delta_true, &r_d)?;
        let leak = |d: &KeypointSet| d.max_abs_diff(&delta_true);

        // replacement with the source's rigid pose and each convention's deformation
        let md_s = MotionDescriptor::new(x_c.clone(), r_s, KeypointSet::zeros(k), scale, t);
        let (_, edited_rc) = edit_replace(&md_s, &d_rc)?;
        let edited_lp = transform_liveportrait(&MotionDescriptor { delta: d_lp.clone(), ..md_s.clone() })?;
        let reference = x_c.add(&delta_true);
        let fit_rc = procrustes_fit(&reference, &edited_rc)?;
        let fit_lp = procrustes_fit(&reference, &edited_lp)?;
        out.push(LeakageSample {
            angle_deg: rotation_angle_between(&r_d, &crate::keypoints::Mat3::identity()).to_degrees(),
            leak_liveportrait: leak(&d_lp),
            leak_recast: leak(&d_rc),
            residual_liveportrait: fit_lp.residual,
            residual_recast: fit_rc.residual,
            rotation_error_liveportrait_deg: fit_lp.rotation_error(&r_s).to_degrees(),
            rotation_error_recast_deg: fit_rc.rotation_error(&r_s).to_degrees(),
        });
    }
    Ok(out)
}

pub fn cmd_leakage(o: &LeakageOpts) -> Result<i32> {
    let out = required(&o.out, "out")?;
    let seed = o.seed.unwrap_or(0);
    let samples = o.samples.unwrap_or(1000);
    let k = o.keypoints.unwrap_or(49);
    let range = [o.min_angle.unwrap_or(5.0), o.max_angle.unwrap_or(60.0)];
    let rows = leakage_samples(seed, samples, k, range[0], range[1])?;
    let st = |f: fn(&LeakageSample) -> f64| Stats::of(rows.iter().map(f));
    let report = LeakageReport {
        seed,
        samples,
        keypoints: k,
        angle_range_deg: range,
        leak_liveportrait: st(|s| s.leak_liveportrait),
        leak_recast: st(|s| s.leak_recast),
        residual_liveportrait: st(|s| s.residual_liveportrait),
        residual_recast: st(|s| s.residual_recast),
        rotation_error_liveportrait_deg: st(|s| s.rotation_error_liveportrait_deg),
        rotation_error_recast_deg: st(|s| s.rotation_error_recast_deg),
    };
    let mut csv = String::from(
        "sample,angle_deg,leak_liveportrait,leak_recast,residual_liveportrait,residual_recast,rotation_error_liveportrait_deg,rotation_error_recast_deg\n",
    );
    for (i, s) in rows.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            s.angle_deg,
            s.leak_liveportrait,
            s.leak_recast,
            s.residual_liveportrait,
            s.residual_recast,
            s.rotation_error_liveportrait_deg,
            s.rotation_error_recast_deg
        ));
    }
    write_json(out.join("leakage.json"), &report)?;
    write_bytes(&out.join("leakage.csv"), csv.as_bytes())?;
    log::info!(
        "leakage over {samples} samples: liveportrait mean {:.3e}, recast max {:.3e}",
        report.leak_liveportrait.mean,
        report.leak_recast.max
    );
    Ok(EXIT_OK)
}

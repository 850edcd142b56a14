//! Synthetic pose-locked benchmark: per identity, several expression videos
//! and one neutral video that all share a single head-pose track.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io::{read_json, write_json, KeypointSequence};
use crate::keypoints::{KeypointSet, Vec3};
use crate::region::{render_keypoint_frame, Camera, RenderStyle};
use crate::rig::{keypoints_full, make_synthetic_rig, FlameParams, RigDefinition, SyntheticRigConfig};
use crate::rotation::{axis_angle_to_matrix, euler_from_rotation, matrix_to_axis_angle, rotation_from_euler};

pub const DEFAULT_FRAMES: usize = 150;
pub const DEFAULT_FPS: f64 = 30.0;
/// Bound on the summed sinusoid amplitudes of each pose channel, degrees.
pub const MAX_POSE_AMPLITUDE_DEG: f64 = 25.0;
/// Jaw and gaze curves are expression curves scaled by this factor (radians).
pub const ROTATION_CHANNEL_SCALE: f64 = 0.2;
pub const NEUTRAL_VIDEO: &str = "neutral";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub n_identities: usize,
    pub n_expression_tracks: usize,
    pub frames_per_video: usize,
    pub fps: f64,
    pub pose_track_seed: u64,
    /// One seed per expression track; derived from `pose_track_seed` when empty.
    pub expression_seeds: Vec<u64>,
    pub image_size: [usize; 2],
    /// Seed of identity 0's rig; identity `i` uses `rig_seed + i`.
    pub rig_seed: u64,
    pub rig: SyntheticRigConfig,
    pub render: RenderStyle,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            n_identities: 4,
            n_expression_tracks: 4,
            frames_per_video: DEFAULT_FRAMES,
            fps: DEFAULT_FPS,
            pose_track_seed: 7,
            expression_seeds: Vec::new(),
            image_size: [128, 128],
            rig_seed: 0,
            rig: SyntheticRigConfig::default(),
            render: RenderStyle::default(),
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_identities > 0, Parameter, "n_identities must be positive");
        ensure!(self.n_expression_tracks > 0, Parameter, "n_expression_tracks must be positive");
        ensure!(self.frames_per_video > 0, Parameter, "frames_per_video must be positive");
        ensure!(self.fps.is_finite() && self.fps > 0.0, Parameter, "fps must be positive, got {}", self.fps);
        ensure!(
            self.expression_seeds.is_empty() || self.expression_seeds.len() == self.n_expression_tracks,
            Parameter,
            "{} expression seeds given for {} tracks",
            self.expression_seeds.len(),
            self.n_expression_tracks
        );
        ensure!(
            self.image_size[0] >= 16 && self.image_size[1] >= 16,
            Parameter,
            "image size must be at least 16x16"
        );
        Ok(())
    }

    pub fn resolved_expression_seeds(&self) -> Vec<u64> {
        if self.expression_seeds.is_empty() {
            (0..self.n_expression_tracks as u64)
                .map(|i| self.pose_track_seed.wrapping_mul(1_000_003).wrapping_add(101 + i))
                .collect()
        } else {
            self.expression_seeds.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

impl Sinusoid {
    fn eval(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.freq_hz * t + self.phase).sin()
    }
}

/// Random sum of 1 to 3 sinusoids whose amplitudes add up to `budget`.
fn random_sinusoids(rng: &mut ChaCha8Rng, budget: f64, freq: (f64, f64)) -> Vec<Sinusoid> {
    let n = rng.random_range(1..=3usize);
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| Sinusoid {
            amplitude: budget * w / total,
            freq_hz: rng.random_range(freq.0..freq.1),
            phase: rng.random_range(0.0..TAU),
        })
        .collect()
}

/// Head pose of one frame, degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    #[serde(rename = "HeadYaw")]
    pub yaw: f64,
    #[serde(rename = "HeadPitch")]
    pub pitch: f64,
    #[serde(rename = "HeadRoll")]
    pub roll: f64,
}

/// Band-limited yaw/pitch/roll curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseCurve {
    pub yaw: Vec<Sinusoid>,
    pub pitch: Vec<Sinusoid>,
    pub roll: Vec<Sinusoid>,
}

impl PoseCurve {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channel = |lo: f64| {
            let budget = rng.random_range(lo..MAX_POSE_AMPLITUDE_DEG);
            random_sinusoids(&mut rng, budget, (0.05, 0.5))
        };
        let yaw = channel(12.0);
        let pitch = channel(6.0);
        let roll = channel(3.0);
        Self { yaw, pitch, roll }
    }

    pub fn eval(&self, t: f64) -> PoseSample {
        let sum = |c: &[Sinusoid]| c.iter().map(|s| s.eval(t)).sum::<f64>();
        PoseSample {
            yaw: sum(&self.yaw),
            pitch: sum(&self.pitch),
            roll: sum(&self.roll),
        }
    }
}

/// Pose track sampled at [`DEFAULT_FPS`].
pub fn generate_pose_track(seed: u64, frames: usize) -> Vec<PoseSample> {
    generate_pose_track_at(seed, frames, DEFAULT_FPS)
}

pub fn generate_pose_track_at(seed: u64, frames: usize, fps: f64) -> Vec<PoseSample> {
    let curve = PoseCurve::from_seed(seed);
    (0..frames).map(|f| curve.eval(f as f64 / fps)).collect()
}

/// Expression channels of one frame. Rotations are axis-angle radians.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionSample {
    pub psi: Vec<f64>,
    pub jaw: Vec3,
    pub eye_l: Vec3,
    pub eye_r: Vec3,
}

impl ExpressionSample {
    pub fn zeros(n_expr: usize) -> Self {
        Self {
            psi: vec![0.0; n_expr],
            jaw: Vec3::zeros(),
            eye_l: Vec3::zeros(),
            eye_r: Vec3::zeros(),
        }
    }
}

/// `Σ a_k (sin(ω_k t + φ_k) − sin φ_k)` with `Σ a_k = 1/2`: starts at zero
/// and stays within `[−1, 1]`.
fn anchored_curve(rng: &mut ChaCha8Rng) -> Vec<Sinusoid> {
    random_sinusoids(rng, 0.5, (0.1, 1.0))
}

fn eval_anchored(c: &[Sinusoid], t: f64) -> f64 {
    c.iter().map(|s| s.eval(t) - s.amplitude * s.phase.sin()).sum()
}

/// Expression track at [`DEFAULT_FPS`]; `None` gives the all-zero track.
pub fn generate_expression_track(seed: Option<u64>, frames: usize, n_expr: usize) -> Vec<ExpressionSample> {
    generate_expression_track_at(seed, frames, n_expr, DEFAULT_FPS)
}

pub fn generate_expression_track_at(seed: Option<u64>, frames: usize, n_expr: usize, fps: f64) -> Vec<ExpressionSample> {
    let Some(seed) = seed else {
        return vec![ExpressionSample::zeros(n_expr); frames];
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi: Vec<_> = (0..n_expr).map(|_| anchored_curve(&mut rng)).collect();
    let jaw = anchored_curve(&mut rng);
    let gaze_yaw = anchored_curve(&mut rng);
    let gaze_pitch = anchored_curve(&mut rng);
    (0..frames)
        .map(|f| {
            let t = f as f64 / fps;
            let gaze = Vec3::new(
                ROTATION_CHANNEL_SCALE * eval_anchored(&gaze_pitch, t),
                ROTATION_CHANNEL_SCALE * eval_anchored(&gaze_yaw, t),
                0.0,
            );
            ExpressionSample {
                psi: psi.iter().map(|c| eval_anchored(c, t)).collect(),
                jaw: Vec3::new(ROTATION_CHANNEL_SCALE * eval_anchored(&jaw, t), 0.0, 0.0),
                eye_l: gaze,
                eye_r: gaze,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Parameter channels
// ---------------------------------------------------------------------------

const EXPR_PREFIX: &str = "CTRL_expressions_";

/// Per-frame parameter file: a flat map of named channels. Expression
/// channels carry the `CTRL_expressions_` prefix, head pose is in degrees
/// under `HeadYaw`/`HeadPitch`/`HeadRoll`, neck is axis-angle radians.
/// Shape coefficients live in the identity file.
pub type FrameChannels = BTreeMap<String, f64>;

fn psi_key(i: usize) -> String {
    format!("{EXPR_PREFIX}psi_{i:02}")
}

fn vec_keys(name: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{EXPR_PREFIX}{name}_{a}"))
}

pub fn channels_from_samples(pose: &PoseSample, expr: &ExpressionSample) -> FrameChannels {
    let mut ch = FrameChannels::new();
    for (i, v) in expr.psi.iter().enumerate() {
        ch.insert(psi_key(i), *v);
    }
    for (name, v) in [("jaw", expr.jaw), ("eyeLeft", expr.eye_l), ("eyeRight", expr.eye_r)] {
        for (k, x) in vec_keys(name).into_iter().zip(v.iter()) {
            ch.insert(k, *x);
        }
    }
    ch.insert("HeadYaw".into(), pose.yaw);
    ch.insert("HeadPitch".into(), pose.pitch);
    ch.insert("HeadRoll".into(), pose.roll);
    for k in ["NeckX", "NeckY", "NeckZ"] {
        ch.insert(k.into(), 0.0);
    }
    ch
}

/// Channels describing `p` (shape coefficients omitted).
pub fn channels_from_params(p: &FlameParams) -> FrameChannels {
    let (pitch, yaw, roll) = euler_from_rotation(&axis_angle_to_matrix(&p.theta_head));
    let mut ch = channels_from_samples(
        &PoseSample { yaw, pitch, roll },
        &ExpressionSample {
            psi: p.psi.clone(),
            jaw: p.theta_jaw,
            eye_l: p.theta_eye_l,
            eye_r: p.theta_eye_r,
        },
    );
    for (k, v) in ["NeckX", "NeckY", "NeckZ"].iter().zip(p.theta_neck.iter()) {
        ch.insert(k.to_string(), *v);
    }
    ch
}

/// Rebuilds rig parameters from channels and the identity's shape.
pub fn params_from_channels(ch: &FrameChannels, beta: &[f64], n_expr: usize) -> Result<FlameParams> {
    let get = |k: &str| -> Result<f64> {
        ch.get(k)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("parameter channel {k} is missing")))
    };
    let vec = |name: &str| -> Result<Vec3> {
        let [x, y, z] = vec_keys(name);
        Ok(Vec3::new(get(&x)?, get(&y)?, get(&z)?))
    };
    let n_psi = ch.keys().filter(|k| k.starts_with(&format!("{EXPR_PREFIX}psi_"))).count();
    ensure!(n_psi == n_expr, Parameter, "{n_psi} expression channels, rig expects {n_expr}");
    let psi = (0..n_expr).map(|i| get(&psi_key(i))).collect::<Result<Vec<_>>>()?;
    let head = rotation_from_euler(get("HeadPitch")?, get("HeadYaw")?, get("HeadRoll")?);
    Ok(FlameParams {
        beta: beta.to_vec(),
        psi,
        theta_head: matrix_to_axis_angle(&head),
        theta_neck: Vec3::new(get("NeckX")?, get("NeckY")?, get("NeckZ")?),
        theta_jaw: vec("jaw")?,
        theta_eye_l: vec("eyeLeft")?,
        theta_eye_r: vec("eyeRight")?,
    })
}

// ---------------------------------------------------------------------------
// Layout and manifest
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub name: String,
    pub rig_seed: u64,
    pub pose_seed: u64,
    pub beta: Vec<f64>,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub name: String,
    /// `None` for the neutral (zero-expression) video.
    pub expression_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletMode {
    Replacement,
    Enhancement,
}

/// Video directories relative to the benchmark root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTriplet {
    pub identity: String,
    pub mode: TripletMode,
    pub source_path: String,
    pub driving_path: String,
    pub ground_truth_path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub identity: IdentityRecord,
    pub videos: Vec<VideoRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: BenchmarkSpec,
    pub expression_seeds: Vec<u64>,
    pub identities: Vec<IdentityEntry>,
    pub triplets: Vec<BenchmarkTriplet>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

pub fn identity_name(i: usize) -> String {
    format!("id_{i:02}")
}

pub fn expression_video_name(j: usize) -> String {
    format!("expr_{j:02}")
}

pub fn frame_file(f: usize) -> String {
    format!("frame_{f:04}.png")
}

pub fn params_file(f: usize) -> String {
    format!("params_{f:04}.json")
}

/// Triplets of one identity. Expression tracks are paired `(2m, 2m+1)`:
/// replacement takes `2m` as source and `2m+1` as driving and ground truth;
/// enhancement takes the neutral video as source with the same driving
/// video. Every expression curve starts at zero, so the driving anchor frame
/// carries no expression and the driving video is the enhancement target.
pub fn identity_triplets(identity: &str, n_tracks: usize) -> Vec<BenchmarkTriplet> {
    let mut out = Vec::new();
    for m in 0..n_tracks / 2 {
        let (src, drv) = (expression_video_name(2 * m), expression_video_name(2 * m + 1));
        let rel = |v: &str| format!("{identity}/{v}");
        out.push(BenchmarkTriplet {
            identity: identity.to_string(),
            mode: TripletMode::Replacement,
            source_path: rel(&src),
            driving_path: rel(&drv),
            ground_truth_path: rel(&drv),
        });
        out.push(BenchmarkTriplet {
            identity: identity.to_string(),
            mode: TripletMode::Enhancement,
            source_path: rel(NEUTRAL_VIDEO),
            driving_path: rel(&drv),
            ground_truth_path: rel(&drv),
        });
    }
    out
}

const BETA_SEED_TAG: u64 = 0x5eed_0000_0000_0001;

/// Shape coefficients of an identity, uniform in `[−0.8, 0.8]`.
pub fn identity_beta(rig_seed: u64, n_shape: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rig_seed ^ BETA_SEED_TAG);
    (0..n_shape).map(|_| rng.random_range(-0.8..0.8)).collect()
}

/// Per-frame parameters of one video.
pub fn video_params(
    beta: &[f64],
    poses: &[PoseSample],
    expressions: &[ExpressionSample],
    n_expr: usize,
) -> Result<Vec<FlameParams>> {
    poses
        .iter()
        .zip(expressions)
        .map(|(p, e)| params_from_channels(&channels_from_samples(p, e), beta, n_expr))
        .collect()
}

/// Everything needed to render one identity, computed without touching disk.
pub struct IdentityPlan {
    pub record: IdentityRecord,
    pub rig: RigDefinition,
    pub poses: Vec<PoseSample>,
    /// `(video name, expression seed, per-frame channels, per-frame params)`.
    pub videos: Vec<(String, Option<u64>, Vec<FrameChannels>, Vec<FlameParams>)>,
}

pub fn plan_identity(spec: &BenchmarkSpec, index: usize) -> Result<IdentityPlan> {
    spec.validate()?;
    let rig_seed = spec.rig_seed.wrapping_add(index as u64);
    let rig = make_synthetic_rig(&SyntheticRigConfig {
        seed: rig_seed,
        ..spec.rig.clone()
    })?;
    let pose_seed = spec.pose_track_seed.wrapping_add(index as u64);
    let poses = generate_pose_track_at(pose_seed, spec.frames_per_video, spec.fps);
    let beta = identity_beta(rig_seed, rig.n_shape());
    let [h, w] = spec.image_size;
    let record = IdentityRecord {
        name: identity_name(index),
        rig_seed,
        pose_seed,
        beta: beta.clone(),
        camera: Camera::framing(h, w),
    };
    let mut tracks: Vec<(String, Option<u64>)> = spec
        .resolved_expression_seeds()
        .iter()
        .enumerate()
        .map(|(j, s)| (expression_video_name(j), Some(s.wrapping_add(7919 * index as u64))))
        .collect();
    tracks.push((NEUTRAL_VIDEO.to_string(), None));
    let mut videos = Vec::with_capacity(tracks.len());
    for (name, seed) in tracks {
        let exprs = generate_expression_track_at(seed, spec.frames_per_video, rig.n_expr(), spec.fps);
        let channels: Vec<FrameChannels> = poses.iter().zip(&exprs).map(|(p, e)| channels_from_samples(p, e)).collect();
        let params = channels
            .iter()
            .map(|c| params_from_channels(c, &beta, rig.n_expr()))
            .collect::<Result<Vec<_>>>()?;
        videos.push((name, seed, channels, params));
    }
    Ok(IdentityPlan {
        record,
        rig,
        poses,
        videos,
    })
}

fn write_identity(spec: &BenchmarkSpec, plan: &IdentityPlan, out_dir: &Path) -> Result<IdentityEntry> {
    let id_dir = out_dir.join(&plan.record.name);
    write_json(id_dir.join("rig.json"), &plan.rig)?;
    write_json(id_dir.join("identity.json"), &plan.record)?;
    let [h, w] = spec.image_size;
    let mut videos = Vec::new();
    for (name, seed, channels, params) in &plan.videos {
        let dir = id_dir.join(name);
        let mut keypoints = Vec::with_capacity(params.len());
        for (f, (ch, p)) in channels.iter().zip(params).enumerate() {
            write_json(dir.join(params_file(f)), ch)?;
            keypoints.push(keypoints_full(&plan.rig, p)?);
            render_keypoint_frame(&plan.rig, p, &plan.record.camera, h, w, &spec.render)?.write(dir.join(frame_file(f)))?;
        }
        write_json(dir.join("keypoints.json"), &KeypointSequence::Full(keypoints))?;
        write_json(dir.join("pose.json"), &plan.poses)?;
        videos.push(VideoRecord {
            name: name.clone(),
            expression_seed: *seed,
        });
    }
    Ok(IdentityEntry {
        identity: plan.record.clone(),
        videos,
    })
}

/// Generates the benchmark under `out_dir` and writes `manifest.json`.
/// Identities are generated in parallel; output is independent of the
/// thread count.
pub fn build_benchmark(spec: &BenchmarkSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let identities = (0..spec.n_identities)
        .into_par_iter()
        .map(|i| {
            let plan = plan_identity(spec, i)?;
            log::info!("identity {} ({} videos)", plan.record.name, plan.videos.len());
            write_identity(spec, &plan, out_dir)
        })
        .collect::<Result<Vec<_>>>()?;
    let triplets = identities
        .iter()
        .flat_map(|e| identity_triplets(&e.identity.name, spec.n_expression_tracks))
        .collect();
    let manifest = Manifest {
        spec: spec.clone(),
        expression_seeds: spec.resolved_expression_seeds(),
        identities,
        triplets,
    };
    write_json(out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Reading videos back
// ---------------------------------------------------------------------------

/// Number of consecutive `frame_%04d.png` files in `dir`.
pub fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&f| dir.join(frame_file(f)).is_file()).count()
}

pub fn frame_paths(dir: &Path) -> Vec<PathBuf> {
    (0..count_frames(dir)).map(|f| dir.join(frame_file(f))).collect()
}

/// Reads `params_%04d.json` for `frames` frames, or `None` if the first is absent.
pub fn read_video_params(dir: &Path, frames: usize, beta: &[f64], n_expr: usize) -> Result<Option<Vec<FlameParams>>> {
    if !dir.join(params_file(0)).is_file() {
        return Ok(None);
    }
    (0..frames)
        .map(|f| {
            let path = dir.join(params_file(f));
            let ch: FrameChannels = read_json(&path)?;
            params_from_channels(&ch, beta, n_expr).map_err(|e| Error::format(&path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Identity record stored next to a video directory (`<video>/../identity.json`).
pub fn read_identity_of(video_dir: &Path) -> Result<Option<IdentityRecord>> {
    let Some(parent) = video_dir.parent() else {
        return Ok(None);
    };
    let path = parent.join("identity.json");
    if path.is_file() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn read_keypoints(dir: &Path) -> Result<Vec<KeypointSet>> {
    let path = dir.join("keypoints.json");
    let seq: KeypointSequence = read_json(&path)?;
    seq.full_frames()
        .map(|f| f.to_vec())
        .ok_or_else(|| Error::format(&path, "expected 3D keypoints"))
}

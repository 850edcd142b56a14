//! Motion descriptors and keypoint arithmetic.
//!
//! A [`MotionDescriptor`] holds canonical keypoints `x_c`, a head rotation
//! `R`, a per-keypoint expression deformation `δ`, a per-axis scale `s` and a
//! translation `t`. Keypoints are row vectors, so rotation acts as `x · R`.
//!
//! Two transform conventions are provided:
//!
//! - [`transform_liveportrait`]: `x = s ⊙ (x_c · R + δ) + t` (deformation added
//!   after rotation, so `δ` absorbs part of the pose);
//! - [`transform_recast`]: `x = s ⊙ ((x_c + δ) · R) + t` (deform, then rotate,
//!   matching the rig's blendshape-then-skin order).
//!
//! The editing functions ([`edit_replace`], [`edit_enhance`], [`animate`]) are
//! all built on the second convention.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::io::vec3_array;
use crate::keypoints::{row_mul, KeypointSet, Mat3, Vec3};
use crate::rig::{keypoints_canonical, keypoints_expression_of, FlameParams, RigDefinition};
use crate::rotation::{check_rotation, euler_from_rotation, rotation_angle_between, rotation_from_euler};

#[derive(Clone, Debug, PartialEq)]
pub struct MotionDescriptor {
    pub x_c: KeypointSet,
    pub rotation: Mat3,
    pub delta: KeypointSet,
    pub scale: Vec3,
    pub translation: Vec3,
}

impl MotionDescriptor {
    /// Descriptor with isotropic scale.
    pub fn new(x_c: KeypointSet, rotation: Mat3, delta: KeypointSet, scale: f64, translation: Vec3) -> Self {
        Self {
            x_c,
            rotation,
            delta,
            scale: Vec3::repeat(scale),
            translation,
        }
    }

    /// Neutral descriptor: identity pose, zero deformation.
    pub fn identity(x_c: KeypointSet) -> Self {
        let k = x_c.len();
        Self::new(x_c, Mat3::identity(), KeypointSet::zeros(k), 1.0, Vec3::zeros())
    }

    pub fn k(&self) -> usize {
        self.x_c.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.x_c.same_len(&self.delta, "descriptor x_c/delta")?;
        check_rotation(&self.rotation, "descriptor rotation")?;
        ensure!(
            self.scale.iter().all(|s| *s > 0.0 && s.is_finite()),
            Parameter,
            "descriptor scale components must be positive, got {:?}",
            self.scale.as_slice()
        );
        ensure!(
            self.x_c.is_finite() && self.delta.is_finite() && self.translation.iter().all(|v| v.is_finite()),
            Parameter,
            "descriptor contains non-finite values"
        );
        Ok(())
    }

    /// Ground-truth descriptor read off the rig: `x_c = V_c`, `δ = V_exp − V_c`,
    /// and `(R, t)` the rigid head-and-neck transform, with unit scale.
    /// `transform_recast` of the result reproduces `V_kp`.
    pub fn from_rig(rig: &RigDefinition, params: &FlameParams) -> Result<Self> {
        let v_c = keypoints_canonical(rig, &params.beta)?;
        let v_exp = keypoints_expression_of(rig, params)?;
        let head = rig.head_neck_transform(params);
        Ok(Self {
            delta: v_exp.sub(&v_c),
            x_c: v_c,
            // column-form A·x + b is row-form x·Aᵀ + b
            rotation: head.rotation.transpose(),
            scale: Vec3::repeat(1.0),
            translation: head.translation,
        })
    }

    fn place(&self, p: Vec3) -> Vec3 {
        self.scale.component_mul(&p) + self.translation
    }
}

/// `x = s ⊙ (x_c · R + δ) + t`.
pub fn transform_liveportrait(md: &MotionDescriptor) -> Result<KeypointSet> {
    md.validate()?;
    Ok(md
        .x_c
        .points
        .iter()
        .zip(&md.delta.points)
        .map(|(c, d)| md.place(row_mul(c, &md.rotation) + d))
        .collect::<Vec<_>>()
        .into())
}

/// `x = s ⊙ ((x_c + δ) · R) + t`.
pub fn transform_recast(md: &MotionDescriptor) -> Result<KeypointSet> {
    md.validate()?;
    Ok(recast_with(md, &md.x_c, &md.delta))
}

/// Recast transform with `md`'s rigid quantities and the given canonical
/// points and deformation.
fn recast_with(md: &MotionDescriptor, x_c: &KeypointSet, delta: &KeypointSet) -> KeypointSet {
    x_c.points
        .iter()
        .zip(&delta.points)
        .map(|(c, d)| md.place(row_mul(&(c + d), &md.rotation)))
        .collect::<Vec<_>>()
        .into()
}

/// Replacement mode: the driving deformation replaces the source one while
/// scale, rotation, translation and canonical keypoints stay the source's.
pub fn edit_replace(md_source: &MotionDescriptor, delta_driving: &KeypointSet) -> Result<(KeypointSet, KeypointSet)> {
    md_source.validate()?;
    md_source.x_c.same_len(delta_driving, "edit_replace")?;
    let x_s = recast_with(md_source, &md_source.x_c, &md_source.delta);
    let x_d = recast_with(md_source, &md_source.x_c, delta_driving);
    Ok((x_s, x_d))
}

/// Enhancement mode for frame `i`: adds the driving deformation relative to
/// the driving anchor frame on top of the source deformation.
pub fn edit_enhance(
    md_source_i: &MotionDescriptor,
    delta_drv_i: &KeypointSet,
    delta_drv_0: &KeypointSet,
) -> Result<(KeypointSet, KeypointSet)> {
    md_source_i.validate()?;
    md_source_i.x_c.same_len(delta_drv_i, "edit_enhance")?;
    md_source_i.x_c.same_len(delta_drv_0, "edit_enhance")?;
    let x_s = recast_with(md_source_i, &md_source_i.x_c, &md_source_i.delta);
    let combined: KeypointSet = md_source_i
        .delta
        .points
        .iter()
        .zip(&delta_drv_i.points)
        .zip(&delta_drv_0.points)
        .map(|((s, d), d0)| s + d - d0)
        .collect::<Vec<_>>()
        .into();
    let x_d = recast_with(md_source_i, &md_source_i.x_c, &combined);
    Ok((x_s, x_d))
}

/// Portrait animation: canonical keypoints from the source, everything else
/// from the driving frame.
pub fn animate(md_source: &MotionDescriptor, md_driving_i: &MotionDescriptor) -> Result<(KeypointSet, KeypointSet)> {
    md_source.validate()?;
    md_driving_i.validate()?;
    md_source.x_c.same_len(&md_driving_i.x_c, "animate")?;
    let x_s = recast_with(md_source, &md_source.x_c, &md_source.delta);
    let x_d = recast_with(md_driving_i, &md_source.x_c, &md_driving_i.delta);
    Ok((x_s, x_d))
}

/// Deformations each convention must adopt to reproduce the ground-truth
/// keypoints `(x_c + δ_true) · R` (unit scale, zero translation). Returns
/// `(δ_liveportrait, δ_recast)`; the first equals `δ_true · R`, so it carries
/// pose information whenever `R ≠ I`.
pub fn delta_leakage(x_c: &KeypointSet, delta_true: &KeypointSet, rotation: &Mat3) -> Result<(KeypointSet, KeypointSet)> {
    check_rotation(rotation, "delta_leakage")?;
    x_c.same_len(delta_true, "delta_leakage")?;
    // Solve x_c·R + δ₁ = (x_c + δ)·R for δ₁ directly from the target keypoints.
    let target: Vec<Vec3> = x_c
        .points
        .iter()
        .zip(&delta_true.points)
        .map(|(c, d)| row_mul(&(c + d), rotation))
        .collect();
    let delta_eq1 = target
        .iter()
        .zip(&x_c.points)
        .map(|(x, c)| x - row_mul(c, rotation))
        .collect::<Vec<_>>()
        .into();
    Ok((delta_eq1, delta_true.clone()))
}

/// Result of a similarity alignment `observed ≈ s ⊙ (reference · R) + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidFit {
    pub scale: Vec3,
    pub rotation: Mat3,
    pub translation: Vec3,
    /// RMS of the per-point alignment error.
    pub residual: f64,
}

impl RigidFit {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale.component_mul(&row_mul(p, &self.rotation)) + self.translation
    }

    /// Geodesic angle to another rotation, radians.
    pub fn rotation_error(&self, rotation: &Mat3) -> f64 {
        rotation_angle_between(&self.rotation, rotation)
    }
}

fn centered(set: &KeypointSet) -> (Vec3, Vec<Vec3>) {
    let mu = set.centroid();
    (mu, set.points.iter().map(|p| p - mu).collect())
}

fn check_alignment_input(reference: &KeypointSet, observed: &KeypointSet) -> Result<()> {
    reference.same_len(observed, "procrustes_fit")?;
    ensure!(reference.len() >= 3, Rank, "procrustes_fit needs at least 3 points, got {}", reference.len());
    ensure!(reference.is_finite() && observed.is_finite(), Domain, "procrustes_fit: non-finite input");
    let (_, a) = centered(reference);
    let cov = a.iter().fold(Mat3::zeros(), |acc, p| acc + p * p.transpose());
    let sv = cov.symmetric_eigenvalues();
    let max = sv.max();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ensure!(
        max > 0.0 && sorted[1] > 1e-12 * max,
        Rank,
        "procrustes_fit: reference points are collinear or coincident"
    );
    Ok(())
}

/// Rotation minimising `Σ‖a_k · R − b_k‖²` over proper rotations.
fn kabsch_rows(a: &[Vec3], b: &[Vec3]) -> (Mat3, Vec3) {
    // With column form b ≈ A a: H = Σ b aᵀ = U D Vᵀ, A = U S Vᵀ and R = Aᵀ.
    let h = a.iter().zip(b).fold(Mat3::zeros(), |acc, (p, q)| acc + q * p.transpose());
    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let s = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let a_mat = u * s * v_t;
    let trace_ds = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
    (a_mat.transpose(), Vec3::new(trace_ds, 0.0, 0.0))
}

fn rms_residual(reference: &KeypointSet, observed: &KeypointSet, fit: &RigidFit) -> f64 {
    let sum: f64 = reference
        .points
        .iter()
        .zip(&observed.points)
        .map(|(a, b)| (fit.apply(a) - b).norm_squared())
        .sum();
    (sum / reference.len() as f64).sqrt()
}

/// Least-squares similarity transform with isotropic scale (Umeyama).
pub fn procrustes_fit(reference: &KeypointSet, observed: &KeypointSet) -> Result<RigidFit> {
    check_alignment_input(reference, observed)?;
    let (mu_a, a) = centered(reference);
    let (mu_b, b) = centered(observed);
    let (rotation, trace) = kabsch_rows(&a, &b);
    let var_a: f64 = a.iter().map(|p| p.norm_squared()).sum();
    let s = trace.x / var_a;
    let mut fit = RigidFit {
        scale: Vec3::repeat(s),
        rotation,
        translation: mu_b - s * row_mul(&mu_a, &rotation),
        residual: 0.0,
    };
    fit.residual = rms_residual(reference, observed, &fit);
    Ok(fit)
}

/// Similarity fit with a separate scale per output axis,
/// `observed ≈ (reference · R) ⊙ s + t`, by alternating scale and rotation
/// updates from the isotropic solution. Only well-posed when the reference
/// spreads along all three axes.
pub fn procrustes_fit_per_axis(reference: &KeypointSet, observed: &KeypointSet) -> Result<RigidFit> {
    let mut fit = procrustes_fit(reference, observed)?;
    let (mu_a, a) = centered(reference);
    let (mu_b, b) = centered(observed);
    for _ in 0..200 {
        let z: Vec<Vec3> = a.iter().map(|p| row_mul(p, &fit.rotation)).collect();
        let mut scale = Vec3::zeros();
        for ax in 0..3 {
            let num: f64 = z.iter().zip(&b).map(|(z, b)| z[ax] * b[ax]).sum();
            let den: f64 = z.iter().map(|z| z[ax] * z[ax]).sum();
            ensure!(den > 0.0, Rank, "procrustes_fit_per_axis: degenerate axis {ax}");
            scale[ax] = num / den;
        }
        let unscaled: Vec<Vec3> = b.iter().map(|q| q.component_div(&scale)).collect();
        let (rotation, _) = kabsch_rows(&a, &unscaled);
        let change = (rotation - fit.rotation).abs().max() + (scale - fit.scale).abs().max();
        fit.rotation = rotation;
        fit.scale = scale;
        if change < 1e-15 {
            break;
        }
    }
    fit.translation = mu_b - fit.scale.component_mul(&row_mul(&mu_a, &fit.rotation));
    fit.residual = rms_residual(reference, observed, &fit);
    Ok(fit)
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerDegrees {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RotationDocument {
    Matrix([[f64; 3]; 3]),
    EulerDeg(EulerDegrees),
}

#[derive(Serialize, Deserialize)]
struct DescriptorDocument {
    x_c: KeypointSet,
    delta: KeypointSet,
    rotation: RotationDocument,
    scale: Vec3Or<f64>,
    #[serde(with = "vec3_array")]
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Vec3Or<T> {
    Vector([T; 3]),
    Scalar(T),
}

impl Serialize for MotionDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        DescriptorDocument {
            x_c: self.x_c.clone(),
            delta: self.delta.clone(),
            rotation: RotationDocument::Matrix([
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ]),
            scale: Vec3Or::Vector([self.scale.x, self.scale.y, self.scale.z]),
            translation: self.translation,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MotionDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = DescriptorDocument::deserialize(d)?;
        let rotation = match doc.rotation {
            RotationDocument::Matrix(m) => Mat3::from_fn(|i, j| m[i][j]),
            RotationDocument::EulerDeg(e) => rotation_from_euler(e.pitch, e.yaw, e.roll),
        };
        let scale = match doc.scale {
            Vec3Or::Vector(v) => Vec3::from(v),
            Vec3Or::Scalar(s) => Vec3::repeat(s),
        };
        let md = MotionDescriptor {
            x_c: doc.x_c,
            rotation,
            delta: doc.delta,
            scale,
            translation: doc.translation,
        };
        md.validate().map_err(D::Error::custom)?;
        Ok(md)
    }
}

/// Euler head-pose channels of a descriptor rotation.
pub fn descriptor_euler(md: &MotionDescriptor) -> EulerDegrees {
    let (pitch, yaw, roll) = euler_from_rotation(&md.rotation);
    EulerDegrees { pitch, yaw, roll }
}

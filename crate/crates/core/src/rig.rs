//! Blendshape face rig with a five-joint skinning chain.
//!
//! The forward model is `LBS(T + B_S(β) + B_E(ψ), θ)`: shape and expression
//! offsets are added to the template in the rest pose, then the result is
//! posed by linear blend skinning over the chain
//! `head → neck → {jaw, eye_left, eye_right}`. Pose-corrective blendshapes are
//! not part of the model. Joint rest positions are rig constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io::vec3_array;
use crate::keypoints::{KeypointSet, Mat3, Vec3};
use crate::rotation::{axis_angle_to_matrix, check_axis_angle};

pub const JOINT_HEAD: usize = 0;
pub const JOINT_NECK: usize = 1;
pub const JOINT_JAW: usize = 2;
pub const JOINT_EYE_LEFT: usize = 3;
pub const JOINT_EYE_RIGHT: usize = 4;
pub const NUM_JOINTS: usize = 5;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = ["head", "neck", "jaw", "eye_left", "eye_right"];

pub const RIG_SCHEMA: &str = "facemotion.rig/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    #[serde(with = "vec3_array")]
    pub rest: Vec3,
    pub parent: Option<usize>,
}

/// Semantic label of a rig vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Forehead,
    Brow,
    EyeSocket,
    EyeballLeft,
    EyeballRight,
    Nose,
    Lip,
    Jaw,
    Cheek,
    Back,
    Neck,
}

/// Per-vertex linear offset basis, `N×3×B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    n_vertices: usize,
    n_coeffs: usize,
    data: Vec<f64>,
}

impl Basis {
    pub fn zeros(n_vertices: usize, n_coeffs: usize) -> Self {
        Self {
            n_vertices,
            n_coeffs,
            data: vec![0.0; n_vertices * 3 * n_coeffs],
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    #[inline]
    fn idx(&self, v: usize, c: usize, b: usize) -> usize {
        (v * 3 + c) * self.n_coeffs + b
    }

    pub fn get(&self, v: usize, c: usize, b: usize) -> f64 {
        self.data[self.idx(v, c, b)]
    }

    pub fn set(&mut self, v: usize, c: usize, b: usize, value: f64) {
        let i = self.idx(v, c, b);
        self.data[i] = value;
    }

    /// Offset of vertex `v` for basis column `b`.
    pub fn column(&self, v: usize, b: usize) -> Vec3 {
        Vec3::new(self.get(v, 0, b), self.get(v, 1, b), self.get(v, 2, b))
    }

    /// Adds `Σ_b coeffs[b] · column(v, b)` to `p`, in coefficient order.
    #[inline]
    fn accumulate(&self, v: usize, coeffs: &[f64], p: &mut Vec3) {
        for c in 0..3 {
            let row = &self.data[self.idx(v, c, 0)..self.idx(v, c, 0) + self.n_coeffs];
            let mut acc = p[c];
            for (w, b) in coeffs.iter().zip(row) {
                acc += w * b;
            }
            p[c] = acc;
        }
    }

    fn to_nested(&self) -> Vec<[Vec<f64>; 3]> {
        (0..self.n_vertices)
            .map(|v| {
                let row = |c| (0..self.n_coeffs).map(|b| self.get(v, c, b)).collect();
                [row(0), row(1), row(2)]
            })
            .collect()
    }

    fn from_nested(nested: Vec<[Vec<f64>; 3]>, what: &str) -> Result<Self> {
        let n_vertices = nested.len();
        let n_coeffs = nested.first().map(|r| r[0].len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n_vertices * 3 * n_coeffs);
        for (v, rows) in nested.into_iter().enumerate() {
            for row in rows {
                ensure!(
                    row.len() == n_coeffs,
                    Parameter,
                    "{what}: vertex {v} has {} coefficients, expected {n_coeffs}",
                    row.len()
                );
                data.extend(row);
            }
        }
        Ok(Self {
            n_vertices,
            n_coeffs,
            data,
        })
    }
}

/// The parametric rig: template mesh, bases, joints, skinning weights and the
/// ordered keypoint vertex indices.
#[derive(Clone, Debug, PartialEq)]
pub struct RigDefinition {
    pub template_vertices: Vec<Vec3>,
    pub shape_basis: Basis,
    pub expr_basis: Basis,
    pub joints: Vec<JointSpec>,
    /// `N×5`, rows nonnegative and summing to one.
    pub skin_weights: Vec<[f64; NUM_JOINTS]>,
    pub keypoint_indices: Vec<usize>,
    pub regions: Vec<Region>,
    /// Wireframe edges used by the renderer.
    pub edges: Vec<[usize; 2]>,
    /// Expression coefficients whose support is the eye-socket region; used as
    /// the eyelid proxy in expression distances.
    pub eyelid_coeffs: Vec<usize>,
}

/// Shape `β`, expression `ψ` and five axis-angle joint rotations (radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlameParams {
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    #[serde(with = "vec3_array")]
    pub theta_head: Vec3,
    #[serde(with = "vec3_array")]
    pub theta_neck: Vec3,
    #[serde(with = "vec3_array")]
    pub theta_jaw: Vec3,
    #[serde(with = "vec3_array")]
    pub theta_eye_l: Vec3,
    #[serde(with = "vec3_array")]
    pub theta_eye_r: Vec3,
}

impl FlameParams {
    pub fn zeros(n_shape: usize, n_expr: usize) -> Self {
        Self {
            beta: vec![0.0; n_shape],
            psi: vec![0.0; n_expr],
            theta_head: Vec3::zeros(),
            theta_neck: Vec3::zeros(),
            theta_jaw: Vec3::zeros(),
            theta_eye_l: Vec3::zeros(),
            theta_eye_r: Vec3::zeros(),
        }
    }

    pub fn zeros_for(rig: &RigDefinition) -> Self {
        Self::zeros(rig.n_shape(), rig.n_expr())
    }

    /// Rotations indexed by joint.
    pub fn thetas(&self) -> [Vec3; NUM_JOINTS] {
        [
            self.theta_head,
            self.theta_neck,
            self.theta_jaw,
            self.theta_eye_l,
            self.theta_eye_r,
        ]
    }

    pub fn is_unposed(&self) -> bool {
        self.thetas().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }

    pub fn validate(&self, rig: &RigDefinition) -> Result<()> {
        ensure!(
            self.beta.len() == rig.n_shape(),
            Parameter,
            "beta has {} coefficients, rig expects {}",
            self.beta.len(),
            rig.n_shape()
        );
        ensure!(
            self.psi.len() == rig.n_expr(),
            Parameter,
            "psi has {} coefficients, rig expects {}",
            self.psi.len(),
            rig.n_expr()
        );
        ensure!(
            self.beta.iter().chain(&self.psi).all(|v| v.is_finite()),
            Domain,
            "non-finite blendshape coefficient"
        );
        for (theta, name) in self.thetas().iter().zip(JOINT_NAMES) {
            check_axis_angle(theta, name)?;
        }
        Ok(())
    }
}

/// Posed vertex positions, `N×3` model units.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexSet {
    pub points: Vec<Vec3>,
}

/// Rigid map `x ↦ R x + t` (column-vector convention).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

impl RigDefinition {
    pub fn n_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn n_shape(&self) -> usize {
        self.shape_basis.n_coeffs()
    }

    pub fn n_expr(&self) -> usize {
        self.expr_basis.n_coeffs()
    }

    pub fn n_keypoints(&self) -> usize {
        self.keypoint_indices.len()
    }

    /// Checks every structural invariant of the rig.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices();
        ensure!(n > 0, Parameter, "rig has no vertices");
        ensure!(
            self.template_vertices.iter().all(|p| p.iter().all(|v| v.is_finite())),
            Domain,
            "non-finite template vertex"
        );
        ensure!(
            self.shape_basis.n_vertices() == n && self.expr_basis.n_vertices() == n,
            Parameter,
            "basis vertex count does not match template ({n})"
        );
        ensure!(self.skin_weights.len() == n, Parameter, "skin weight rows != vertex count");
        ensure!(self.regions.len() == n, Parameter, "region labels != vertex count");
        for (v, row) in self.skin_weights.iter().enumerate() {
            ensure!(
                row.iter().all(|w| *w >= 0.0 && w.is_finite()),
                Parameter,
                "negative or non-finite skin weight at vertex {v}"
            );
            let sum: f64 = row.iter().sum();
            ensure!((sum - 1.0).abs() <= 1e-9, Parameter, "skin weights of vertex {v} sum to {sum}");
            for eye in [JOINT_EYE_LEFT, JOINT_EYE_RIGHT] {
                ensure!(
                    row[eye] == 0.0 || row[eye] == 1.0,
                    Parameter,
                    "vertex {v} is not rigidly bound to its eye joint"
                );
            }
        }
        ensure!(self.joints.len() == NUM_JOINTS, Parameter, "rig must have {NUM_JOINTS} joints");
        ensure!(self.joints[0].parent.is_none(), Parameter, "joint 0 must be the root");
        for (j, joint) in self.joints.iter().enumerate().skip(1) {
            match joint.parent {
                Some(p) if p < j => {}
                _ => return Err(Error::Parameter(format!("joint {j} must have a parent with a smaller index"))),
            }
        }
        let mut seen = vec![false; n];
        for &k in &self.keypoint_indices {
            ensure!(k < n, Parameter, "keypoint index {k} out of range");
            ensure!(!seen[k], Parameter, "duplicate keypoint index {k}");
            seen[k] = true;
        }
        for e in &self.edges {
            ensure!(e[0] < n && e[1] < n, Parameter, "edge {e:?} out of range");
        }
        for &c in &self.eyelid_coeffs {
            ensure!(c < self.n_expr(), Parameter, "eyelid coefficient {c} out of range");
        }
        Ok(())
    }

    /// World transform of every joint for the given rotations.
    pub fn joint_transforms(&self, thetas: &[Vec3; NUM_JOINTS]) -> [RigidTransform; NUM_JOINTS] {
        let mut globals = [RigidTransform::identity(); NUM_JOINTS];
        for (j, joint) in self.joints.iter().enumerate() {
            let r = axis_angle_to_matrix(&thetas[j]);
            let local = RigidTransform {
                rotation: r,
                translation: joint.rest - r * joint.rest,
            };
            globals[j] = match joint.parent {
                Some(p) => globals[p].compose(&local),
                None => local,
            };
        }
        globals
    }

    /// Rest-pose vertex with shape and expression offsets applied.
    #[inline]
    fn shaped_vertex(&self, v: usize, beta: &[f64], psi: &[f64]) -> Vec3 {
        let mut p = self.template_vertices[v];
        self.shape_basis.accumulate(v, beta, &mut p);
        self.expr_basis.accumulate(v, psi, &mut p);
        p
    }

    #[inline]
    fn skin(&self, v: usize, p: &Vec3, globals: &[RigidTransform; NUM_JOINTS]) -> Vec3 {
        let mut out = Vec3::zeros();
        for (j, &w) in self.skin_weights[v].iter().enumerate() {
            if w != 0.0 {
                out += w * globals[j].apply(p);
            }
        }
        out
    }

    /// Forward model restricted to the listed vertices.
    pub fn forward_vertices(&self, params: &FlameParams, indices: &[usize]) -> Result<Vec<Vec3>> {
        params.validate(self)?;
        let n = self.n_vertices();
        ensure!(indices.iter().all(|&i| i < n), Parameter, "vertex index out of range");
        let unposed = params.is_unposed();
        let globals = if unposed {
            None
        } else {
            Some(self.joint_transforms(&params.thetas()))
        };
        Ok(indices
            .iter()
            .map(|&v| {
                let p = self.shaped_vertex(v, &params.beta, &params.psi);
                match &globals {
                    // the unposed path skips skinning so the template is reproduced bit-for-bit
                    None => p,
                    Some(g) => self.skin(v, &p, g),
                }
            })
            .collect())
    }

    /// Linear part of the blended skinning transform at each listed vertex,
    /// `Σ_j w_vj R_j`. Blendshape offsets map through it exactly.
    pub fn blended_linear(&self, params: &FlameParams, indices: &[usize]) -> Vec<Mat3> {
        let globals = self.joint_transforms(&params.thetas());
        indices
            .iter()
            .map(|&v| {
                self.skin_weights[v]
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .fold(Mat3::zeros(), |acc, (j, w)| acc + *w * globals[j].rotation)
            })
            .collect()
    }

    /// Rigid transform applied by head and neck together (the neck joint's
    /// world transform). Every keypoint without head-joint weight is carried
    /// by exactly this transform on top of its expression-only position.
    pub fn head_neck_transform(&self, params: &FlameParams) -> RigidTransform {
        let mut thetas = params.thetas();
        thetas[JOINT_JAW] = Vec3::zeros();
        thetas[JOINT_EYE_LEFT] = Vec3::zeros();
        thetas[JOINT_EYE_RIGHT] = Vec3::zeros();
        self.joint_transforms(&thetas)[JOINT_NECK]
    }
}

/// Full forward model over all vertices.
pub fn flame_forward(rig: &RigDefinition, params: &FlameParams) -> Result<VertexSet> {
    let all: Vec<usize> = (0..rig.n_vertices()).collect();
    Ok(VertexSet {
        points: rig.forward_vertices(params, &all)?,
    })
}

/// `V_c`: keypoints of the shaped mesh in zero pose and zero expression.
pub fn keypoints_canonical(rig: &RigDefinition, beta: &[f64]) -> Result<KeypointSet> {
    let mut params = FlameParams::zeros_for(rig);
    ensure!(beta.len() == rig.n_shape(), Parameter, "beta has {} coefficients, rig expects {}", beta.len(), rig.n_shape());
    params.beta = beta.to_vec();
    Ok(rig.forward_vertices(&params, &rig.keypoint_indices)?.into())
}

/// `V_exp`: shape, expression and jaw/eye rotations, with head and neck at zero.
pub fn keypoints_expression(
    rig: &RigDefinition,
    beta: &[f64],
    psi: &[f64],
    theta_jaw: Vec3,
    theta_eye_l: Vec3,
    theta_eye_r: Vec3,
) -> Result<KeypointSet> {
    let params = FlameParams {
        beta: beta.to_vec(),
        psi: psi.to_vec(),
        theta_head: Vec3::zeros(),
        theta_neck: Vec3::zeros(),
        theta_jaw,
        theta_eye_l,
        theta_eye_r,
    };
    Ok(rig.forward_vertices(&params, &rig.keypoint_indices)?.into())
}

/// `V_exp` for a full parameter set (head and neck ignored).
pub fn keypoints_expression_of(rig: &RigDefinition, params: &FlameParams) -> Result<KeypointSet> {
    keypoints_expression(rig, &params.beta, &params.psi, params.theta_jaw, params.theta_eye_l, params.theta_eye_r)
}

/// `V_kp`: every parameter enabled.
pub fn keypoints_full(rig: &RigDefinition, params: &FlameParams) -> Result<KeypointSet> {
    Ok(rig.forward_vertices(params, &rig.keypoint_indices)?.into())
}

// ---------------------------------------------------------------------------
// Synthetic rig generation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticRigConfig {
    pub seed: u64,
    pub n_vertices: usize,
    pub n_shape: usize,
    pub n_expr: usize,
    pub n_keypoints: usize,
}

impl Default for SyntheticRigConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_vertices: 600,
            n_shape: 10,
            n_expr: 10,
            n_keypoints: 49,
        }
    }
}

pub const MIN_SYNTHETIC_VERTICES: usize = 16;

const HEAD_RADII: [f64; 3] = [0.75, 1.0, 0.85];
const EYE_RADIUS: f64 = 0.12;
const EYE_CENTER: [f64; 3] = [0.28, 0.15, 0.68];

/// Keypoint quota per region for a 49-point layout; scaled for other counts.
const KEYPOINT_LAYOUT: [(Region, usize); 7] = [
    (Region::Forehead, 5),
    (Region::Brow, 10),
    (Region::EyeSocket, 8),
    (Region::EyeballLeft, 6),
    (Region::Nose, 7),
    (Region::Lip, 8),
    (Region::Jaw, 5),
];

/// Deterministic head-shaped rig. The geometry is an ellipsoidal shell with
/// labelled facial regions, two rigid eyeballs and a neck stump.
pub fn make_synthetic_rig(config: &SyntheticRigConfig) -> Result<RigDefinition> {
    let SyntheticRigConfig {
        seed,
        n_vertices: n,
        n_shape,
        n_expr,
        n_keypoints: k,
    } = *config;
    ensure!(k <= n, Parameter, "n_keypoints ({k}) exceeds n_vertices ({n})");
    ensure!(n_shape > 0 && n_expr > 0, Parameter, "basis dimensions must be positive");
    ensure!(n >= MIN_SYNTHETIC_VERTICES, Parameter, "n_vertices must be at least {MIN_SYNTHETIC_VERTICES}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_eye = (n / 40).clamp(3, 13);
    let n_neck = (n / 12).max(2);
    let n_shell = n - 2 * n_eye - n_neck;

    let mut template = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);

    // shell: Fibonacci lattice on the head ellipsoid
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..n_shell {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n_shell as f64;
        let r = (1.0 - y * y).sqrt();
        let phi = golden * i as f64;
        let unit = Vec3::new(r * phi.sin(), y, r * phi.cos());
        template.push(Vec3::new(unit.x * HEAD_RADII[0], unit.y * HEAD_RADII[1], unit.z * HEAD_RADII[2]));
        regions.push(classify_shell(&unit));
    }

    let eye_dirs = eyeball_directions(n_eye);
    for (side, region) in [(1.0, Region::EyeballLeft), (-1.0, Region::EyeballRight)] {
        let c = Vec3::new(side * EYE_CENTER[0], EYE_CENTER[1], EYE_CENTER[2]);
        for d in &eye_dirs {
            template.push(c + EYE_RADIUS * d);
            regions.push(region);
        }
    }

    let rings = n_neck.div_ceil(6).max(1);
    for i in 0..n_neck {
        let ring = i % rings;
        let slot = i / rings;
        let per_ring = n_neck.div_ceil(rings);
        let a = 2.0 * std::f64::consts::PI * (slot as f64 + 0.5 * ring as f64) / per_ring as f64;
        let y = -1.35 + 0.5 * (ring as f64 + 0.5) / rings as f64;
        template.push(Vec3::new(0.35 * a.sin(), y, -0.1 + 0.35 * a.cos()));
        regions.push(Region::Neck);
    }

    let joints = vec![
        joint("head", [0.0, -1.35, -0.1], None),
        joint("neck", [0.0, -0.85, -0.1], Some(JOINT_HEAD)),
        joint("jaw", [0.0, -0.05, 0.0], Some(JOINT_NECK)),
        joint("eye_left", EYE_CENTER, Some(JOINT_NECK)),
        joint("eye_right", [-EYE_CENTER[0], EYE_CENTER[1], EYE_CENTER[2]], Some(JOINT_NECK)),
    ];

    let skin_weights = template
        .iter()
        .zip(&regions)
        .map(|(p, region)| skin_row(p, *region))
        .collect();

    let mut shape_basis = Basis::zeros(n, n_shape);
    for b in 0..n_shape {
        // random quadratic field; no constant or linear part, so it cannot mimic a rigid motion
        let q: Vec<f64> = (0..18).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for (v, p) in template.iter().enumerate() {
            if matches!(regions[v], Region::EyeballLeft | Region::EyeballRight) {
                continue;
            }
            let terms = [p.x * p.x, p.y * p.y, p.z * p.z, p.x * p.y, p.y * p.z, p.x * p.z];
            for c in 0..3 {
                let val: f64 = terms.iter().zip(&q[c * 6..c * 6 + 6]).map(|(t, w)| t * w).sum();
                shape_basis.set(v, c, b, 0.03 * val);
            }
        }
    }

    let mut expr_basis = Basis::zeros(n, n_expr);
    let mut eyelid_coeffs = Vec::new();
    for b in 0..n_expr {
        let (center, radius) = match b % 4 {
            0 => (Vec3::new(0.0, -0.5, 0.7), 0.3),
            1 => (Vec3::new(0.0, 0.45, 0.7), 0.35),
            2 => {
                eyelid_coeffs.push(b);
                (Vec3::new(0.0, 0.15, 0.75), 0.3)
            }
            _ => (Vec3::new(0.0, -0.1, 0.8), 0.35),
        };
        let c = random_vec(&mut rng);
        let m = Mat3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        for (v, p) in template.iter().enumerate() {
            if matches!(regions[v], Region::EyeballLeft | Region::EyeballRight | Region::Neck) {
                continue;
            }
            let d = p - center;
            let bump = (-d.norm_squared() / (2.0 * radius * radius)).exp();
            let off = 0.08 * bump * (c + m * d);
            for ax in 0..3 {
                expr_basis.set(v, ax, b, off[ax]);
            }
        }
    }

    let keypoint_indices = select_keypoints(&template, &regions, k);
    let edges = nearest_edges(&template, &regions, 3);

    let rig = RigDefinition {
        template_vertices: template,
        shape_basis,
        expr_basis,
        joints,
        skin_weights,
        keypoint_indices,
        regions,
        edges,
        eyelid_coeffs,
    };
    rig.validate()?;
    Ok(rig)
}

fn joint(name: &str, rest: [f64; 3], parent: Option<usize>) -> JointSpec {
    JointSpec {
        name: name.to_string(),
        rest: Vec3::from(rest),
        parent,
    }
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Region label from a point on the unit sphere (before ellipsoid scaling).
fn classify_shell(u: &Vec3) -> Region {
    let (x, y, z) = (u.x, u.y, u.z);
    if z < 0.25 {
        if y < -0.55 && z > -0.2 {
            return Region::Jaw;
        }
        return Region::Back;
    }
    if y > 0.5 {
        Region::Forehead
    } else if y > 0.28 && x.abs() > 0.12 {
        Region::Brow
    } else if y > 0.02 && x.abs() > 0.15 {
        Region::EyeSocket
    } else if x.abs() <= 0.18 && y > -0.35 {
        Region::Nose
    } else if y > -0.62 && y <= -0.35 && x.abs() < 0.4 {
        Region::Lip
    } else if y <= -0.35 {
        Region::Jaw
    } else {
        Region::Cheek
    }
}

fn skin_row(p: &Vec3, region: Region) -> [f64; NUM_JOINTS] {
    let mut w = [0.0; NUM_JOINTS];
    match region {
        Region::EyeballLeft => w[JOINT_EYE_LEFT] = 1.0,
        Region::EyeballRight => w[JOINT_EYE_RIGHT] = 1.0,
        Region::Neck => {
            let t = ((p.y + 1.35) / 0.5).clamp(0.0, 1.0);
            w[JOINT_NECK] = t;
            w[JOINT_HEAD] = 1.0 - t;
        }
        _ => {
            // lower face follows the jaw, ramping in below the mouth corners
            let jaw = if p.z > 0.0 {
                smoothstep((-0.3 - p.y) / 0.3)
            } else {
                0.0
            };
            w[JOINT_JAW] = jaw;
            w[JOINT_NECK] = 1.0 - jaw;
        }
    }
    w
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn eyeball_directions(n: usize) -> Vec<Vec3> {
    let mut dirs = vec![Vec3::z()];
    let rings = [(35f64, 0f64), (60.0, 45.0), (85.0, 0.0)];
    'outer: for (polar, offset) in rings {
        for k in 0..4 {
            if dirs.len() == n {
                break 'outer;
            }
            let (sp, cp) = polar.to_radians().sin_cos();
            let az = (offset + 90.0 * k as f64).to_radians();
            dirs.push(Vec3::new(sp * az.cos(), sp * az.sin(), cp));
        }
    }
    dirs
}

fn region_quotas(k: usize) -> Vec<(Region, usize)> {
    let total: usize = KEYPOINT_LAYOUT.iter().map(|(_, q)| q).sum();
    let mut quotas: Vec<(Region, usize, f64)> = KEYPOINT_LAYOUT
        .iter()
        .map(|&(r, q)| {
            let exact = (k * q) as f64 / total as f64;
            (r, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.partial_cmp(&quotas[a].2).unwrap().then(a.cmp(&b)));
    for &i in order.iter().take(k - assigned) {
        quotas[i].1 += 1;
    }
    quotas.into_iter().map(|(r, q, _)| (r, q)).collect()
}

/// Farthest-point ordering of `candidates`, starting from the one closest to
/// their centroid.
fn farthest_point_order(points: &[Vec3], candidates: &[usize]) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let centroid = candidates.iter().fold(Vec3::zeros(), |a, &i| a + points[i]) / candidates.len() as f64;
    let first = *candidates
        .iter()
        .min_by(|&&a, &&b| {
            (points[a] - centroid)
                .norm_squared()
                .partial_cmp(&(points[b] - centroid).norm_squared())
                .unwrap()
        })
        .unwrap();
    let mut order = vec![first];
    let mut dist: Vec<f64> = candidates.iter().map(|&i| (points[i] - points[first]).norm_squared()).collect();
    while order.len() < candidates.len() {
        let (best, _) = dist
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let pick = candidates[best];
        order.push(pick);
        for (d, &c) in dist.iter_mut().zip(candidates) {
            *d = d.min((points[c] - points[pick]).norm_squared());
        }
    }
    order
}

fn select_keypoints(points: &[Vec3], regions: &[Region], k: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    let mut used = vec![false; points.len()];
    let of = |r: Region| -> Vec<usize> { (0..points.len()).filter(|&i| regions[i] == r).collect() };
    for (region, quota) in region_quotas(k) {
        let order = if region == Region::EyeballLeft {
            // interleave the two eyes so small quotas stay symmetric
            let (l, r) = (of(Region::EyeballLeft), of(Region::EyeballRight));
            l.iter().zip(&r).flat_map(|(a, b)| [*a, *b]).collect()
        } else {
            farthest_point_order(points, &of(region))
        };
        for i in order.into_iter().take(quota) {
            used[i] = true;
            chosen.push(i);
        }
    }
    let fallback = [
        Region::Cheek,
        Region::Jaw,
        Region::Nose,
        Region::Lip,
        Region::Brow,
        Region::EyeSocket,
        Region::Forehead,
        Region::EyeballLeft,
        Region::EyeballRight,
        Region::Back,
        Region::Neck,
    ];
    for region in fallback {
        if chosen.len() == k {
            break;
        }
        let free: Vec<usize> = of(region).into_iter().filter(|&i| !used[i]).collect();
        for i in farthest_point_order(points, &free) {
            if chosen.len() == k {
                break;
            }
            used[i] = true;
            chosen.push(i);
        }
    }
    chosen
}

fn group(region: Region) -> u8 {
    match region {
        Region::EyeballLeft => 1,
        Region::EyeballRight => 2,
        Region::Neck => 3,
        _ => 0,
    }
}

fn nearest_edges(points: &[Vec3], regions: &[Region], per_vertex: usize) -> Vec<[usize; 2]> {
    let mut edges = std::collections::BTreeSet::new();
    for i in 0..points.len() {
        let mut near: Vec<(f64, usize)> = (0..points.len())
            .filter(|&j| j != i && group(regions[j]) == group(regions[i]))
            .map(|j| ((points[i] - points[j]).norm_squared(), j))
            .collect();
        near.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in near.iter().take(per_vertex) {
            edges.insert([i.min(j), i.max(j)]);
        }
    }
    edges.into_iter().collect()
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RigDocument {
    schema: String,
    template: Vec<[f64; 3]>,
    shape_basis: Vec<[Vec<f64>; 3]>,
    expr_basis: Vec<[Vec<f64>; 3]>,
    joints: Vec<JointSpec>,
    skin_weights: Vec<[f64; NUM_JOINTS]>,
    keypoint_indices: Vec<usize>,
    regions: Vec<Region>,
    #[serde(default)]
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    eyelid_coeffs: Vec<usize>,
}

impl Serialize for RigDefinition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RigDocument {
            schema: RIG_SCHEMA.to_string(),
            template: self.template_vertices.iter().map(|p| [p.x, p.y, p.z]).collect(),
            shape_basis: self.shape_basis.to_nested(),
            expr_basis: self.expr_basis.to_nested(),
            joints: self.joints.clone(),
            skin_weights: self.skin_weights.clone(),
            keypoint_indices: self.keypoint_indices.clone(),
            regions: self.regions.clone(),
            edges: self.edges.clone(),
            eyelid_coeffs: self.eyelid_coeffs.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigDefinition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = RigDocument::deserialize(deserializer)?;
        if doc.schema != RIG_SCHEMA {
            return Err(D::Error::custom(format!("unsupported rig schema {:?}", doc.schema)));
        }
        let n = doc.template.len();
        let basis = |nested: Vec<[Vec<f64>; 3]>, what: &str| {
            if nested.len() != n {
                return Err(Error::Parameter(format!("{what} has {} vertices, template has {n}", nested.len())));
            }
            Basis::from_nested(nested, what)
        };
        let rig = RigDefinition {
            template_vertices: doc.template.into_iter().map(Vec3::from).collect(),
            shape_basis: basis(doc.shape_basis, "shape_basis").map_err(D::Error::custom)?,
            expr_basis: basis(doc.expr_basis, "expr_basis").map_err(D::Error::custom)?,
            joints: doc.joints,
            skin_weights: doc.skin_weights,
            keypoint_indices: doc.keypoint_indices,
            regions: doc.regions,
            edges: doc.edges,
            eyelid_coeffs: doc.eyelid_coeffs,
        };
        rig.validate().map_err(D::Error::custom)?;
        Ok(rig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_rig() -> RigDefinition {
        make_synthetic_rig(&SyntheticRigConfig {
            seed: 7,
            n_vertices: 200,
            ..Default::default()
        })
        .unwrap()
    }

    /// Three vertices, one per joint role, with hand-chosen weights.
    pub(crate) fn toy_rig() -> RigDefinition {
        let template = vec![
            Vec3::new(0.0, 0.5, 0.5),
            Vec3::new(0.0, -0.5, 0.6),
            Vec3::new(0.1, -0.3, 0.5),
        ];
        let mut w = vec![[0.0; NUM_JOINTS]; 3];
        w[0][JOINT_NECK] = 1.0;
        w[1][JOINT_JAW] = 1.0;
        w[2][JOINT_JAW] = 0.25;
        w[2][JOINT_NECK] = 0.75;
        let mut expr = Basis::zeros(3, 1);
        expr.set(1, 1, 0, -0.1);
        RigDefinition {
            template_vertices: template,
            shape_basis: Basis::zeros(3, 1),
            expr_basis: expr,
            joints: vec![
                joint("head", [0.0, -1.0, 0.0], None),
                joint("neck", [0.0, -0.8, 0.0], Some(0)),
                joint("jaw", [0.0, 0.0, 0.0], Some(1)),
                joint("eye_left", [0.3, 0.2, 0.6], Some(1)),
                joint("eye_right", [-0.3, 0.2, 0.6], Some(1)),
            ],
            skin_weights: w,
            keypoint_indices: vec![0, 1, 2],
            regions: vec![Region::Forehead, Region::Jaw, Region::Lip],
            edges: vec![],
            eyelid_coeffs: vec![],
        }
    }

    /// Rotation of `p` about `center` by axis-angle `aa`, via Rodrigues written out.
    fn rotate_about(p: Vec3, center: Vec3, aa: Vec3) -> Vec3 {
        let angle = aa.norm();
        if angle == 0.0 {
            return p;
        }
        let k = aa / angle;
        let v = p - center;
        let rotated = v * angle.cos() + k.cross(&v) * angle.sin() + k * k.dot(&v) * (1.0 - angle.cos());
        center + rotated
    }

    #[test]
    fn zero_params_reproduce_template_bitwise() {
        let rig = small_rig();
        let out = flame_forward(&rig, &FlameParams::zeros_for(&rig)).unwrap();
        assert_eq!(out.points, rig.template_vertices);
    }

    #[test]
    fn unit_expression_adds_first_column() {
        let rig = small_rig();
        let mut p = FlameParams::zeros_for(&rig);
        p.psi[0] = 1.0;
        let out = flame_forward(&rig, &p).unwrap();
        for v in 0..rig.n_vertices() {
            assert_eq!(out.points[v], rig.template_vertices[v] + rig.expr_basis.column(v, 0));
        }
    }

    #[test]
    fn toy_jaw_rotation_matches_per_vertex_oracle() {
        let rig = toy_rig();
        let mut p = FlameParams::zeros_for(&rig);
        p.theta_jaw = Vec3::new(0.2, 0.0, 0.0);
        let out = flame_forward(&rig, &p).unwrap();
        let jaw = rig.joints[JOINT_JAW].rest;
        let expected = [
            rig.template_vertices[0],
            rotate_about(rig.template_vertices[1], jaw, p.theta_jaw),
            0.25 * rotate_about(rig.template_vertices[2], jaw, p.theta_jaw) + 0.75 * rig.template_vertices[2],
        ];
        for (a, b) in out.points.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn canonical_selects_template_rows() {
        let rig = small_rig();
        let kc = keypoints_canonical(&rig, &vec![0.0; rig.n_shape()]).unwrap();
        for (p, &i) in kc.points.iter().zip(&rig.keypoint_indices) {
            assert_eq!(*p, rig.template_vertices[i]);
        }
        let mut beta = vec![0.0; rig.n_shape()];
        beta[0] = 1.0;
        let kc = keypoints_canonical(&rig, &beta).unwrap();
        for (p, &i) in kc.points.iter().zip(&rig.keypoint_indices) {
            assert_eq!(*p, rig.template_vertices[i] + rig.shape_basis.column(i, 0));
        }
    }

    #[test]
    fn expression_set_degenerates_to_canonical() {
        let rig = small_rig();
        let beta: Vec<f64> = (0..rig.n_shape()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let kc = keypoints_canonical(&rig, &beta).unwrap();
        let ke = keypoints_expression(&rig, &beta, &vec![0.0; rig.n_expr()], Vec3::zeros(), Vec3::zeros(), Vec3::zeros()).unwrap();
        assert_eq!(kc, ke);
    }

    #[test]
    fn jaw_rotation_moves_only_jaw_weighted_keypoints() {
        let rig = small_rig();
        let zero = vec![0.0; rig.n_expr()];
        let beta = vec![0.0; rig.n_shape()];
        let theta = Vec3::new(0.1, 0.0, 0.0);
        let ke = keypoints_expression(&rig, &beta, &zero, theta, Vec3::zeros(), Vec3::zeros()).unwrap();
        let jaw = rig.joints[JOINT_JAW].rest;
        let mut moved = 0;
        for (p, &i) in ke.points.iter().zip(&rig.keypoint_indices) {
            let w = rig.skin_weights[i][JOINT_JAW];
            let t = rig.template_vertices[i];
            let expected = w * rotate_about(t, jaw, theta) + (1.0 - w) * t;
            assert_abs_diff_eq!(*p, expected, epsilon = 1e-14);
            if w > 0.0 {
                moved += 1;
            } else {
                assert_eq!(*p, t);
            }
        }
        assert!(moved > 0, "layout should contain jaw-weighted keypoints");
    }

    #[test]
    fn eye_rotation_moves_only_eyeball_keypoints() {
        let rig = small_rig();
        let ke = keypoints_expression(
            &rig,
            &vec![0.0; rig.n_shape()],
            &vec![0.0; rig.n_expr()],
            Vec3::zeros(),
            Vec3::new(0.1, 0.2, 0.0),
            Vec3::new(-0.1, 0.05, 0.0),
        )
        .unwrap();
        for (p, &i) in ke.points.iter().zip(&rig.keypoint_indices) {
            let eyeball = matches!(rig.regions[i], Region::EyeballLeft | Region::EyeballRight);
            let moved = (p - rig.template_vertices[i]).norm();
            if eyeball {
                assert!(moved > 1e-6, "vertex {i}");
            } else {
                assert!(moved < 1e-12, "vertex {i} moved by {moved}");
            }
        }
    }

    #[test]
    fn head_rotation_quarter_turn_about_head_joint() {
        let rig = small_rig();
        let mut p = FlameParams::zeros_for(&rig);
        p.theta_head = Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let kp = keypoints_full(&rig, &p).unwrap();
        let c = rig.joints[JOINT_HEAD].rest;
        for (q, &i) in kp.points.iter().zip(&rig.keypoint_indices) {
            let v = rig.template_vertices[i] - c;
            // closed form for +90° about z: (x, y) -> (-y, x)
            let expected = c + Vec3::new(-v.y, v.x, v.z);
            assert_abs_diff_eq!(*q, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn eyes_are_rigid_and_layout_has_k_distinct() {
        let rig = make_synthetic_rig(&SyntheticRigConfig {
            seed: 1,
            n_vertices: 64,
            n_keypoints: 49,
            ..Default::default()
        })
        .unwrap();
        let mut idx = rig.keypoint_indices.clone();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 49);
        for row in &rig.skin_weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_rig_is_deterministic() {
        let cfg = SyntheticRigConfig::default();
        assert_eq!(make_synthetic_rig(&cfg).unwrap(), make_synthetic_rig(&cfg).unwrap());
    }

    #[test]
    fn layout_covers_facial_regions() {
        let rig = make_synthetic_rig(&SyntheticRigConfig::default()).unwrap();
        for (region, quota) in KEYPOINT_LAYOUT {
            let count = rig
                .keypoint_indices
                .iter()
                .filter(|&&i| {
                    rig.regions[i] == region
                        || (region == Region::EyeballLeft && rig.regions[i] == Region::EyeballRight)
                })
                .count();
            assert_eq!(count, quota, "{region:?}");
        }
        // every keypoint is carried purely by neck and below (no head-joint weight)
        for &i in &rig.keypoint_indices {
            assert_eq!(rig.skin_weights[i][JOINT_HEAD], 0.0);
        }
    }

    #[test]
    fn errors() {
        let bad = SyntheticRigConfig {
            n_vertices: 20,
            n_keypoints: 21,
            ..Default::default()
        };
        assert!(matches!(make_synthetic_rig(&bad), Err(Error::Parameter(_))));
        let rig = small_rig();
        let mut p = FlameParams::zeros_for(&rig);
        p.psi.push(0.0);
        assert!(matches!(flame_forward(&rig, &p), Err(Error::Parameter(_))));
        let mut p = FlameParams::zeros_for(&rig);
        p.beta[0] = f64::NAN;
        assert!(matches!(flame_forward(&rig, &p), Err(Error::Domain(_))));
        let mut p = FlameParams::zeros_for(&rig);
        p.theta_jaw = Vec3::new(f64::INFINITY, 0.0, 0.0);
        assert!(matches!(flame_forward(&rig, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn json_round_trip_and_schema_check() {
        let rig = small_rig();
        let s = serde_json::to_string(&rig).unwrap();
        let back: RigDefinition = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rig);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["schema"] = "other/v9".into();
        assert!(serde_json::from_value::<RigDefinition>(v).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["skin_weights"][0][0] = 5.0.into();
        assert!(serde_json::from_value::<RigDefinition>(v).is_err());
    }
}

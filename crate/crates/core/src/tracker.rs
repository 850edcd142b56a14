//! Rig-parameter tracking from keypoint observations.
//!
//! Each frame is a damped Gauss-Newton (Levenberg-Marquardt) fit of
//! [`FlameParams`] to observed keypoints. Sequences are fitted frame by frame
//! with warm starts, shape frozen after the first frame, and an optional
//! temporal smoothness penalty toward the previous frame's solution.
//!
//! Parameters are packed as `[β, ψ, θ_head, θ_neck, θ_jaw, θ_eye_l, θ_eye_r]`.
//! Rotations are updated additively in axis-angle space.
//!
//! The head and neck joints both rotate every keypoint rigidly, so from
//! keypoints alone only their composition is observable. The neck is
//! therefore held fixed unless [`TrackerConfig::free_neck`] is set.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io::KeypointSequence;
use crate::keypoints::{KeypointSet, Vec3};
use crate::rig::{FlameParams, RigDefinition, NUM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Exact blendshape columns, central differences for rotations.
    Analytic,
    /// Central differences for every column.
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub max_iterations: usize,
    /// Initial Levenberg damping.
    pub step_damping: f64,
    /// Stop once an accepted step moves the keypoints by less than this RMS.
    pub convergence_tol: f64,
    pub smoothness_lambda: f64,
    pub jacobian_mode: JacobianMode,
    /// Finite-difference step, radians or coefficient units.
    pub fd_step: f64,
    pub free_neck: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_damping: 1e-3,
            convergence_tol: 1e-9,
            smoothness_lambda: 0.1,
            jacobian_mode: JacobianMode::Analytic,
            fd_step: 1e-6,
            free_neck: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.max_iterations > 0, Parameter, "max_iterations must be positive");
        ensure!(self.step_damping > 0.0, Parameter, "step_damping must be positive");
        ensure!(self.convergence_tol > 0.0, Parameter, "convergence_tol must be positive");
        ensure!(self.smoothness_lambda >= 0.0, Parameter, "smoothness_lambda must be >= 0");
        ensure!(
            (1e-7..=1e-3).contains(&self.fd_step),
            Parameter,
            "fd_step must lie in [1e-7, 1e-3], got {}",
            self.fd_step
        );
        Ok(())
    }
}

/// Layout of the packed parameter vector for a rig.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_shape: usize,
    pub n_expr: usize,
}

impl ParamLayout {
    pub fn of(rig: &RigDefinition) -> Self {
        Self {
            n_shape: rig.n_shape(),
            n_expr: rig.n_expr(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_shape + self.n_expr + 3 * NUM_JOINTS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn beta(&self) -> std::ops::Range<usize> {
        0..self.n_shape
    }

    pub fn psi(&self) -> std::ops::Range<usize> {
        self.n_shape..self.n_shape + self.n_expr
    }

    /// Axis-angle block of joint `j`.
    pub fn joint(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.n_shape + self.n_expr + 3 * j;
        start..start + 3
    }

    pub fn pack(&self, p: &FlameParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(&p.beta);
        v.extend(&p.psi);
        for t in p.thetas() {
            v.extend(t.iter());
        }
        v
    }

    pub fn unpack(&self, v: &[f64]) -> FlameParams {
        let t = |j: usize| {
            let r = self.joint(j);
            Vec3::new(v[r.start], v[r.start + 1], v[r.start + 2])
        };
        FlameParams {
            beta: v[self.beta()].to_vec(),
            psi: v[self.psi()].to_vec(),
            theta_head: t(0),
            theta_neck: t(1),
            theta_jaw: t(2),
            theta_eye_l: t(3),
            theta_eye_r: t(4),
        }
    }
}

/// Indices of the packed parameters the optimiser may change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreeParams {
    indices: Vec<usize>,
}

impl FreeParams {
    /// Everything except the neck (unless `free_neck`) and, when `frozen_beta`,
    /// the shape coefficients.
    pub fn standard(rig: &RigDefinition, frozen_beta: bool, free_neck: bool) -> Self {
        let layout = ParamLayout::of(rig);
        let neck = layout.joint(1);
        let indices = (0..layout.len())
            .filter(|i| !(frozen_beta && layout.beta().contains(i)))
            .filter(|i| free_neck || !neck.contains(i))
            .collect();
        Self { indices }
    }

    /// An explicit subset of packed indices.
    pub fn only(rig: &RigDefinition, mut indices: Vec<usize>) -> Result<Self> {
        let n = ParamLayout::of(rig).len();
        indices.sort_unstable();
        indices.dedup();
        ensure!(!indices.is_empty(), Parameter, "no free parameters selected");
        ensure!(indices.iter().all(|&i| i < n), Parameter, "free parameter index out of range");
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Penalty `λ Σ_j (s_j (p_j − prior_j))²` over non-shape free parameters.
#[derive(Clone, Debug)]
pub struct SmoothnessPrior<'a> {
    pub previous: &'a FlameParams,
    pub lambda: f64,
}

/// Outcome of a single-frame fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFit {
    pub params: FlameParams,
    /// RMS of the per-coordinate keypoint residual.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after the initial evaluation and after each accepted step.
    pub cost_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackedSequence {
    pub params_per_frame: Vec<FlameParams>,
    pub residual_per_frame: Vec<f64>,
    pub converged_flags: Vec<bool>,
    pub iterations_per_frame: Vec<usize>,
    /// Objective values per frame, as in [`FrameFit::cost_history`].
    #[serde(default)]
    pub cost_history_per_frame: Vec<Vec<f64>>,
}

impl TrackedSequence {
    pub fn len(&self) -> usize {
        self.params_per_frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params_per_frame.is_empty()
    }

    pub fn all_converged(&self) -> bool {
        self.converged_flags.iter().all(|&c| c)
    }
}

struct Problem<'a> {
    rig: &'a RigDefinition,
    layout: ParamLayout,
    observed: &'a KeypointSet,
    /// 3 for full observations, 2 when depth is unobserved.
    dims: usize,
}

impl Problem<'_> {
    fn n_residuals(&self) -> usize {
        self.observed.len() * self.dims
    }

    fn keypoints(&self, x: &[f64]) -> Result<Vec<Vec3>> {
        self.rig.forward_vertices(&self.layout.unpack(x), &self.rig.keypoint_indices)
    }

    fn residual_of(&self, kp: &[Vec3]) -> DVector<f64> {
        let mut r = DVector::zeros(self.n_residuals());
        for (k, (p, o)) in kp.iter().zip(&self.observed.points).enumerate() {
            for a in 0..self.dims {
                r[k * self.dims + a] = p[a] - o[a];
            }
        }
        r
    }

    fn jacobian(&self, x: &[f64], free: &[usize], mode: JacobianMode, h: f64) -> Result<DMatrix<f64>> {
        let m = self.n_residuals();
        let mut jac = DMatrix::zeros(m, free.len());
        let blendshape = self.layout.n_shape + self.layout.n_expr;
        let linear = if mode == JacobianMode::Analytic && free.iter().any(|&i| i < blendshape) {
            Some(self.rig.blended_linear(&self.layout.unpack(x), &self.rig.keypoint_indices))
        } else {
            None
        };
        for (col, &i) in free.iter().enumerate() {
            match (&linear, i < blendshape) {
                (Some(lin), true) => {
                    let (basis, b) = if i < self.layout.n_shape {
                        (&self.rig.shape_basis, i)
                    } else {
                        (&self.rig.expr_basis, i - self.layout.n_shape)
                    };
                    for (k, &v) in self.rig.keypoint_indices.iter().enumerate() {
                        let d = lin[k] * basis.column(v, b);
                        for a in 0..self.dims {
                            jac[(k * self.dims + a, col)] = d[a];
                        }
                    }
                }
                _ => {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[i] += h;
                    xm[i] -= h;
                    let kp = self.keypoints(&xp)?;
                    let km = self.keypoints(&xm)?;
                    for k in 0..kp.len() {
                        for a in 0..self.dims {
                            jac[(k * self.dims + a, col)] = (kp[k][a] - km[k][a]) / (2.0 * h);
                        }
                    }
                }
            }
        }
        Ok(jac)
    }
}

fn rotations_valid(layout: &ParamLayout, x: &[f64]) -> bool {
    (0..NUM_JOINTS).all(|j| {
        let r = layout.joint(j);
        let n = (x[r.start].powi(2) + x[r.start + 1].powi(2) + x[r.start + 2].powi(2)).sqrt();
        n < std::f64::consts::PI && n.is_finite()
    })
}

/// Fits all free parameters except shape (when `frozen_beta`) to one frame.
pub fn fit_frame(
    rig: &RigDefinition,
    observed: &KeypointSet,
    init: &FlameParams,
    frozen_beta: bool,
    cfg: &TrackerConfig,
) -> Result<FrameFit> {
    let free = FreeParams::standard(rig, frozen_beta, cfg.free_neck);
    fit_frame_with(rig, observed, init, &free, None, cfg)
}

/// Single-frame fit with an explicit free set and optional smoothness prior.
pub fn fit_frame_with(
    rig: &RigDefinition,
    observed: &KeypointSet,
    init: &FlameParams,
    free: &FreeParams,
    prior: Option<SmoothnessPrior<'_>>,
    cfg: &TrackerConfig,
) -> Result<FrameFit> {
    fit_frame_dims(rig, observed, 3, init, free, prior, cfg)
}

fn fit_frame_dims(
    rig: &RigDefinition,
    observed: &KeypointSet,
    dims: usize,
    init: &FlameParams,
    free: &FreeParams,
    prior: Option<SmoothnessPrior<'_>>,
    cfg: &TrackerConfig,
) -> Result<FrameFit> {
    cfg.validate()?;
    init.validate(rig)?;
    ensure!(
        observed.len() == rig.n_keypoints(),
        Parameter,
        "observation has {} keypoints, rig has {}",
        observed.len(),
        rig.n_keypoints()
    );
    ensure!(observed.is_finite(), Domain, "observation contains non-finite values");
    let layout = ParamLayout::of(rig);
    let problem = Problem {
        rig,
        layout,
        observed,
        dims,
    };
    let free = free.indices();
    let n = free.len();
    let m = problem.n_residuals() as f64;
    let k = observed.len().max(1) as f64;

    let mut x = layout.pack(init);
    let mut kp = problem.keypoints(&x)?;
    let mut r = problem.residual_of(&kp);

    // Prior in sensitivity-normalised units: s_j = ‖J_j‖ / √K at the start.
    let prior_terms: Option<(Vec<f64>, DVector<f64>, f64)> = match &prior {
        Some(p) if p.lambda > 0.0 => {
            p.previous.validate(rig)?;
            let j0 = problem.jacobian(&x, free, cfg.jacobian_mode, cfg.fd_step)?;
            let target = layout.pack(p.previous);
            let weights = DVector::from_iterator(
                n,
                free.iter().enumerate().map(|(c, &i)| {
                    if layout.beta().contains(&i) {
                        0.0
                    } else {
                        let s = j0.column(c).norm() / k.sqrt();
                        if s > 0.0 {
                            s * s
                        } else {
                            1.0
                        }
                    }
                }),
            );
            Some((target, weights, p.lambda))
        }
        _ => None,
    };
    let cost_of = |r: &DVector<f64>, x: &[f64]| -> f64 {
        let mut c = r.norm_squared();
        if let Some((target, w, lambda)) = &prior_terms {
            for (col, &i) in free.iter().enumerate() {
                c += lambda * w[col] * (x[i] - target[i]).powi(2);
            }
        }
        c
    };

    let mut cost = cost_of(&r, &x);
    let mut history = vec![cost];
    let mut mu = cfg.step_damping;
    let mut converged = false;
    let mut iterations = 0;

    if (r.norm_squared() / m).sqrt() < 1e-12 && prior_terms.is_none() {
        converged = true;
    }

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let jac = problem.jacobian(&x, free, cfg.jacobian_mode, cfg.fd_step)?;
        let mut a = jac.tr_mul(&jac);
        let mut g = jac.tr_mul(&r);
        if let Some((target, w, lambda)) = &prior_terms {
            for (col, &i) in free.iter().enumerate() {
                a[(col, col)] += lambda * w[col];
                g[col] += lambda * w[col] * (x[i] - target[i]);
            }
        }
        let diag_floor = a.diagonal().max() * 1e-12 + f64::MIN_POSITIVE;
        let mut accepted = false;
        while mu < 1e16 {
            let mut damped = a.clone();
            for c in 0..n {
                damped[(c, c)] += mu * a[(c, c)].max(diag_floor);
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut x_new = x.clone();
            for (col, &i) in free.iter().enumerate() {
                x_new[i] += step[col];
            }
            if !rotations_valid(&layout, &x_new) {
                mu *= 10.0;
                continue;
            }
            let kp_new = problem.keypoints(&x_new)?;
            let r_new = problem.residual_of(&kp_new);
            let cost_new = cost_of(&r_new, &x_new);
            if cost_new <= cost {
                let moved: f64 = kp_new.iter().zip(&kp).map(|(a, b)| (a - b).norm_squared()).sum();
                let moved = (moved / (3.0 * k)).sqrt();
                x = x_new;
                kp = kp_new;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                if moved < cfg.convergence_tol {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // No descent direction left at machine precision: stationary.
            ensure!(g.iter().all(|v| v.is_finite()), Numeric, "non-finite gradient");
            if a.clone().cholesky().is_none() && a.diagonal().max() == 0.0 {
                return Err(Error::Rank("normal equations are singular for every damping value".into()));
            }
            converged = true;
        }
    }
    debug!("fit_frame: {iterations} iterations, cost {cost:.3e}, converged={converged}");
    Ok(FrameFit {
        params: layout.unpack(&x),
        residual: (r.norm_squared() / m).sqrt(),
        converged,
        iterations,
        cost_history: history,
    })
}

/// Fits a sequence of full 3D observations. Shape is estimated jointly on
/// frame 0 (unless `beta` is given) and frozen afterwards; every later frame
/// starts from its predecessor's solution.
pub fn fit_sequence(
    rig: &RigDefinition,
    frames: &[KeypointSet],
    beta: Option<&[f64]>,
    cfg: &TrackerConfig,
) -> Result<TrackedSequence> {
    fit_sequence_dims(rig, frames, 3, beta, cfg)
}

/// [`fit_sequence`] for either observation form of a keypoint file.
pub fn fit_keypoint_sequence(
    rig: &RigDefinition,
    seq: &KeypointSequence,
    beta: Option<&[f64]>,
    cfg: &TrackerConfig,
) -> Result<TrackedSequence> {
    match seq {
        KeypointSequence::Full(frames) => fit_sequence_dims(rig, frames, 3, beta, cfg),
        KeypointSequence::Projected(frames) => {
            let lifted: Vec<KeypointSet> = frames
                .iter()
                .map(|f| f.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect::<Vec<_>>().into())
                .collect();
            fit_sequence_dims(rig, &lifted, 2, beta, cfg)
        }
    }
}

fn fit_sequence_dims(
    rig: &RigDefinition,
    frames: &[KeypointSet],
    dims: usize,
    beta: Option<&[f64]>,
    cfg: &TrackerConfig,
) -> Result<TrackedSequence> {
    ensure!(!frames.is_empty(), Parameter, "cannot track an empty frame list");
    let mut init = FlameParams::zeros_for(rig);
    if let Some(b) = beta {
        ensure!(b.len() == rig.n_shape(), Parameter, "provided beta has {} coefficients, rig expects {}", b.len(), rig.n_shape());
        init.beta = b.to_vec();
    }
    let frozen_free = FreeParams::standard(rig, true, cfg.free_neck);
    let mut out = TrackedSequence {
        params_per_frame: Vec::with_capacity(frames.len()),
        residual_per_frame: Vec::with_capacity(frames.len()),
        converged_flags: Vec::with_capacity(frames.len()),
        iterations_per_frame: Vec::with_capacity(frames.len()),
        cost_history_per_frame: Vec::with_capacity(frames.len()),
    };
    for (t, obs) in frames.iter().enumerate() {
        let fit = if t == 0 {
            let free = FreeParams::standard(rig, beta.is_some(), cfg.free_neck);
            fit_frame_dims(rig, obs, dims, &init, &free, None, cfg)?
        } else {
            let prev = out.params_per_frame[t - 1].clone();
            let prior = (cfg.smoothness_lambda > 0.0).then_some(SmoothnessPrior {
                previous: &prev,
                lambda: cfg.smoothness_lambda,
            });
            fit_frame_dims(rig, obs, dims, &prev, &frozen_free, prior, cfg)?
        };
        if !fit.converged {
            log::warn!("frame {t}: tracker did not converge (residual {:.3e})", fit.residual);
        }
        out.params_per_frame.push(fit.params);
        out.residual_per_frame.push(fit.residual);
        out.converged_flags.push(fit.converged);
        out.iterations_per_frame.push(fit.iterations);
        out.cost_history_per_frame.push(fit.cost_history);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::perturb;
    use crate::rig::{keypoints_full, make_synthetic_rig, SyntheticRigConfig, JOINT_JAW};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rig(seed: u64) -> RigDefinition {
        make_synthetic_rig(&SyntheticRigConfig {
            seed,
            n_vertices: 300,
            ..Default::default()
        })
        .unwrap()
    }

    fn random_params(rig: &RigDefinition, rng: &mut ChaCha8Rng) -> FlameParams {
        let mut p = FlameParams::zeros_for(rig);
        p.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        p.psi.iter_mut().for_each(|b| *b = rng.random_range(-0.8..0.8));
        p.theta_head = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2));
        p.theta_jaw = Vec3::new(rng.random_range(0.0..0.2), 0.0, 0.0);
        p.theta_eye_l = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
        p.theta_eye_r = p.theta_eye_l;
        p
    }

    #[test]
    fn already_optimal_needs_no_iterations() {
        let rig = rig(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&rig, &mut rng);
        let obs = keypoints_full(&rig, &p).unwrap();
        let fit = fit_frame(&rig, &obs, &p, true, &TrackerConfig::default()).unwrap();
        assert_eq!(fit.iterations, 0);
        assert!(fit.converged);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn recovers_pose_and_expression_from_zero() {
        let rig = rig(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_params(&rig, &mut rng);
        let obs = keypoints_full(&rig, &truth).unwrap();
        let mut init = FlameParams::zeros_for(&rig);
        init.beta = truth.beta.clone();
        let fit = fit_frame(&rig, &obs, &init, true, &TrackerConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.residual < 1e-9, "residual {}", fit.residual);
        let head_err = crate::rotation::rotation_angle_between(
            &crate::rotation::axis_angle_to_matrix(&fit.params.theta_head),
            &crate::rotation::axis_angle_to_matrix(&truth.theta_head),
        );
        assert!(head_err.to_degrees() < 0.5);
        for (a, b) in fit.params.psi.iter().zip(&truth.psi) {
            assert!((a - b).abs() < 1e-2);
        }
        assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn analytic_columns_match_finite_differences() {
        let rig = rig(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&rig, &mut rng);
        let obs = keypoints_full(&rig, &p).unwrap();
        let layout = ParamLayout::of(&rig);
        let problem = Problem {
            rig: &rig,
            layout,
            observed: &obs,
            dims: 3,
        };
        let x = layout.pack(&p);
        let free: Vec<usize> = (0..layout.n_shape + layout.n_expr).collect();
        let an = problem.jacobian(&x, &free, JacobianMode::Analytic, 1e-6).unwrap();
        let fd = problem.jacobian(&x, &free, JacobianMode::FiniteDifference, 1e-6).unwrap();
        for c in 0..free.len() {
            let rel = (an.column(c) - fd.column(c)).norm() / an.column(c).norm().max(1e-12);
            assert!(rel < 1e-5, "column {c}: {rel}");
        }
    }

    #[test]
    fn two_parameter_fit_matches_grid_search() {
        let rig = rig(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut truth = FlameParams::zeros_for(&rig);
        truth.beta = random_params(&rig, &mut rng).beta;
        truth.theta_jaw.x = 0.12;
        let b = weakly_coupled_expression(&rig, &truth);
        truth.psi[b] = 0.3;
        let obs = perturb(&keypoints_full(&rig, &truth).unwrap(), 0.002, &mut rng).unwrap();
        let layout = ParamLayout::of(&rig);
        let jaw_x = layout.joint(JOINT_JAW).start;
        let free = FreeParams::only(&rig, vec![jaw_x, layout.psi().start + b]).unwrap();
        let mut init = truth.clone();
        init.theta_jaw.x = 0.0;
        init.psi[b] = 0.0;
        let fit = fit_frame_with(&rig, &obs, &init, &free, None, &TrackerConfig::default()).unwrap();

        let cost = |jx: f64, pb: f64| {
            let mut q = truth.clone();
            q.theta_jaw.x = jx;
            q.psi[b] = pb;
            let kp = keypoints_full(&rig, &q).unwrap();
            kp.sub(&obs).flat().iter().map(|v| v * v).sum::<f64>()
        };
        let step = 1e-3;
        let (mut best, mut arg) = (f64::INFINITY, (0.0, 0.0));
        for i in -50..=50 {
            for j in -50..=50 {
                let (a, c) = (0.12 + i as f64 * step, 0.3 + j as f64 * step);
                let v = cost(a, c);
                if v < best {
                    best = v;
                    arg = (a, c);
                }
            }
        }
        assert!((fit.params.theta_jaw.x - arg.0).abs() <= step);
        assert!((fit.params.psi[b] - arg.1).abs() <= step);
        assert!(cost(fit.params.theta_jaw.x, fit.params.psi[b]) <= best);
    }

    /// Expression coefficient whose keypoint response is closest to
    /// orthogonal to the jaw opening, so the 2-D cost valley is axis-aligned.
    fn weakly_coupled_expression(rig: &RigDefinition, at: &FlameParams) -> usize {
        let response = |f: &dyn Fn(&mut FlameParams)| {
            let mut q = at.clone();
            f(&mut q);
            keypoints_full(rig, &q).unwrap().sub(&keypoints_full(rig, at).unwrap()).flat()
        };
        let jaw = response(&|q| q.theta_jaw.x += 1e-4);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cols: Vec<Vec<f64>> = (0..rig.n_expr()).map(|b| response(&|q| q.psi[b] += 1e-4)).collect();
        let max = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
        (0..rig.n_expr())
            .filter(|&b| norm(&cols[b]) > 0.3 * max)
            .min_by(|&a, &b| {
                let cos = |c: &[f64]| (c.iter().zip(&jaw).map(|(x, y)| x * y).sum::<f64>() / (norm(c) * norm(&jaw))).abs();
                cos(&cols[a]).partial_cmp(&cos(&cols[b])).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn constant_sequence_repeats_frame_zero() {
        let rig = rig(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&rig, &mut rng);
        let obs = keypoints_full(&rig, &p).unwrap();
        let seq = fit_sequence(&rig, &vec![obs; 4], None, &TrackerConfig::default()).unwrap();
        for t in 1..4 {
            let a = ParamLayout::of(&rig).pack(&seq.params_per_frame[t]);
            let b = ParamLayout::of(&rig).pack(&seq.params_per_frame[0]);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        }
        assert!(seq.all_converged());
    }

    #[test]
    fn zero_lambda_equals_independent_fits() {
        let rig = rig(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<KeypointSet> = (0..3)
            .map(|_| keypoints_full(&rig, &random_params(&rig, &mut rng)).unwrap())
            .collect();
        let cfg = TrackerConfig {
            smoothness_lambda: 0.0,
            ..Default::default()
        };
        let seq = fit_sequence(&rig, &frames, None, &cfg).unwrap();
        for t in 1..3 {
            let single = fit_frame(&rig, &frames[t], &seq.params_per_frame[t - 1], true, &cfg).unwrap();
            assert_eq!(single.params, seq.params_per_frame[t]);
        }
    }

    #[test]
    fn smoothness_reduces_total_variation() {
        let rig = rig(7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = random_params(&rig, &mut rng);
        let frames: Vec<KeypointSet> = (0..8)
            .map(|_| {
                let mut p = base.clone();
                p.theta_head += Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0);
                keypoints_full(&rig, &p).unwrap()
            })
            .collect();
        let tv = |lambda: f64| {
            let cfg = TrackerConfig {
                smoothness_lambda: lambda,
                ..Default::default()
            };
            let seq = fit_sequence(&rig, &frames, Some(&base.beta), &cfg).unwrap();
            seq.params_per_frame
                .windows(2)
                .map(|w| (w[1].theta_head - w[0].theta_head).norm())
                .sum::<f64>()
        };
        assert!(tv(1e4) < tv(0.0));
    }

    #[test]
    fn noisy_residual_matches_degrees_of_freedom() {
        let rig = rig(8);
        let sigma = 1e-3;
        let free = FreeParams::standard(&rig, true, false);
        let k = rig.n_keypoints() as f64;
        let expected = sigma * ((3.0 * k - free.indices().len() as f64) / (3.0 * k)).sqrt();
        let mut mean = 0.0;
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let p = random_params(&rig, &mut rng);
            let obs = perturb(&keypoints_full(&rig, &p).unwrap(), sigma, &mut rng).unwrap();
            let fit = fit_frame(&rig, &obs, &p, true, &TrackerConfig::default()).unwrap();
            mean += fit.residual / 5.0;
        }
        assert!((mean / expected - 1.0).abs() < 0.5, "{mean} vs {expected}");
    }

    #[test]
    fn permutation_invariance() {
        let rig = rig(9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&rig, &mut rng);
        let obs = keypoints_full(&rig, &p).unwrap();
        let mut init = FlameParams::zeros_for(&rig);
        init.beta = p.beta.clone();
        let a = fit_frame(&rig, &obs, &init, true, &TrackerConfig::default()).unwrap();
        let k = rig.n_keypoints();
        let perm: Vec<usize> = (0..k).rev().collect();
        let mut rig2 = rig.clone();
        rig2.keypoint_indices = perm.iter().map(|&i| rig.keypoint_indices[i]).collect();
        let b = fit_frame(&rig2, &obs.select(&perm), &init, true, &TrackerConfig::default()).unwrap();
        let (xa, xb) = (ParamLayout::of(&rig).pack(&a.params), ParamLayout::of(&rig).pack(&b.params));
        assert!(xa.iter().zip(&xb).all(|(x, y)| (x - y).abs() < 1e-6));
    }

    #[test]
    fn projected_observations_track_in_plane_motion() {
        let rig = rig(10);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_params(&rig, &mut rng);
        let kp = keypoints_full(&rig, &p).unwrap();
        let seq = KeypointSequence::Projected(vec![kp.points.iter().map(|q| q.xy()).collect()]);
        let fit = fit_keypoint_sequence(&rig, &seq, Some(&p.beta), &TrackerConfig::default()).unwrap();
        assert!(fit.residual_per_frame[0] < 1e-6);
    }

    #[test]
    fn input_errors() {
        let rig = rig(11);
        assert!(fit_sequence(&rig, &[], None, &TrackerConfig::default()).is_err());
        let p = FlameParams::zeros_for(&rig);
        assert!(fit_frame(&rig, &KeypointSet::zeros(3), &p, true, &TrackerConfig::default()).is_err());
        let bad = TrackerConfig {
            fd_step: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

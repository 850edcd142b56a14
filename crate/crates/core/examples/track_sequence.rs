//! Synthesizes a short keypoint sequence from known parameters and recovers
//! them with the tracker.

use facemotion::rig::{keypoints_full, make_synthetic_rig, SyntheticRigConfig};
use facemotion::rotation::{axis_angle_to_matrix, rotation_angle_between};
use facemotion::tracker::{fit_sequence, TrackerConfig};
use facemotion::{FlameParams, Vec3};

fn main() -> facemotion::Result<()> {
    let rig = make_synthetic_rig(&SyntheticRigConfig::default())?;
    let mut beta = vec![0.0; rig.n_shape()];
    beta[0] = 0.4;
    beta[3] = -0.3;

    let truth: Vec<FlameParams> = (0..12)
        .map(|f| {
            let t = f as f64 / 12.0;
            let mut p = FlameParams::zeros_for(&rig);
            p.beta = beta.clone();
            p.theta_head = Vec3::new(0.1 * t, 0.4 * (3.0 * t).sin(), 0.05);
            p.psi[0] = 0.5 * t;
            p.psi[4] = -0.3 * (2.0 * t).cos();
            p.theta_jaw = Vec3::new(0.15 * t, 0.0, 0.0);
            p
        })
        .collect();
    let frames = truth.iter().map(|p| keypoints_full(&rig, p)).collect::<Result<Vec<_>, _>>()?;

    let tracked = fit_sequence(&rig, &frames, None, &TrackerConfig::default())?;
    for (f, (fit, gt)) in tracked.params_per_frame.iter().zip(&truth).enumerate() {
        let pose_err = rotation_angle_between(&axis_angle_to_matrix(&fit.theta_head), &axis_angle_to_matrix(&gt.theta_head));
        let expr_err = fit.psi.iter().zip(&gt.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "frame {f:2}: residual {:.1e}, head error {:.2e} deg, max psi error {:.1e}, {} iterations",
            tracked.residual_per_frame[f],
            pose_err.to_degrees(),
            expr_err,
            tracked.iterations_per_frame[f]
        );
    }
    println!("all converged: {}", tracked.all_converged());
    Ok(())
}

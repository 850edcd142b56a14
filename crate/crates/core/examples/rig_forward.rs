//! Builds a synthetic rig, poses it and prints the three keypoint sets.

use facemotion::rig::{keypoints_canonical, keypoints_expression_of, keypoints_full, make_synthetic_rig, SyntheticRigConfig};
use facemotion::{FlameParams, Vec3};

fn main() -> facemotion::Result<()> {
    let rig = make_synthetic_rig(&SyntheticRigConfig::default())?;
    println!(
        "rig: {} vertices, {} shape / {} expression coefficients, {} keypoints",
        rig.n_vertices(),
        rig.n_shape(),
        rig.n_expr(),
        rig.n_keypoints()
    );

    let mut params = FlameParams::zeros_for(&rig);
    params.beta[0] = 0.5;
    params.psi[1] = 0.8;
    params.theta_jaw = Vec3::new(0.15, 0.0, 0.0);
    params.theta_head = Vec3::new(0.0, 0.3, 0.05);

    let canonical = keypoints_canonical(&rig, &params.beta)?;
    let expression = keypoints_expression_of(&rig, &params)?;
    let posed = keypoints_full(&rig, &params)?;

    let deformation = expression.max_abs_diff(&canonical);
    let pose_motion = posed.max_abs_diff(&expression);
    println!("max |V_exp - V_c|   = {deformation:.4}");
    println!("max |V_kp - V_exp|  = {pose_motion:.4}");
    for k in 0..3 {
        let (c, p) = (canonical.points[k], posed.points[k]);
        println!("kp {k}: canonical ({:+.3} {:+.3} {:+.3})  posed ({:+.3} {:+.3} {:+.3})", c.x, c.y, c.z, p.x, p.y, p.z);
    }
    Ok(())
}

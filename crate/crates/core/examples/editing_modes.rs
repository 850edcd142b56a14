//! Replacement, enhancement and animation on rig-derived descriptors, with
//! a Procrustes check that replacement keeps the source head pose.

use facemotion::motion::{animate, edit_enhance, edit_replace, procrustes_fit, MotionDescriptor};
use facemotion::rig::{keypoints_full, make_synthetic_rig, SyntheticRigConfig};
use facemotion::{FlameParams, Vec3};

fn main() -> facemotion::Result<()> {
    let rig = make_synthetic_rig(&SyntheticRigConfig::default())?;

    let mut source = FlameParams::zeros_for(&rig);
    source.theta_head = Vec3::new(0.1, -0.35, 0.0);
    source.psi[0] = 0.3;

    let mut driving = FlameParams::zeros_for(&rig);
    driving.theta_head = Vec3::new(-0.2, 0.4, 0.1);
    driving.psi[2] = -0.7;
    driving.theta_jaw = Vec3::new(0.2, 0.0, 0.0);

    let md_s = MotionDescriptor::from_rig(&rig, &source)?;
    let md_d = MotionDescriptor::from_rig(&rig, &driving)?;

    let (_, replaced) = edit_replace(&md_s, &md_d.delta)?;
    let fit = procrustes_fit(&md_s.x_c.add(&md_d.delta), &replaced)?;
    println!(
        "replace: pose error {:.2e} rad, scale {:.6}, residual {:.2e}",
        fit.rotation_error(&md_s.rotation),
        fit.scale.x,
        fit.residual
    );

    let neutral = MotionDescriptor::from_rig(&rig, &FlameParams::zeros_for(&rig))?;
    let (x_s, enhanced) = edit_enhance(&md_s, &md_d.delta, &neutral.delta)?;
    println!("enhance: keypoints moved by up to {:.4}", enhanced.max_abs_diff(&x_s));
    let (_, unchanged) = edit_enhance(&md_s, &md_d.delta, &md_d.delta)?;
    println!("enhance with a constant driving track: change {:.1e}", unchanged.max_abs_diff(&x_s));

    let (_, animated) = animate(&md_s, &md_d)?;
    println!(
        "animate: distance to the driving keypoints {:.1e} (same identity)",
        animated.max_abs_diff(&keypoints_full(&rig, &driving)?)
    );
    Ok(())
}

//! The two keypoint conventions side by side, and how much pose the
//! rotate-then-deform convention pushes into the deformation.

use facemotion::keypoints::{KeypointSet, Mat3};
use facemotion::motion::{delta_leakage, transform_liveportrait, transform_recast, MotionDescriptor};
use facemotion::rotation::rot_z;
use facemotion::Vec3;

fn main() -> facemotion::Result<()> {
    // a single keypoint rotated a quarter turn about z
    let x_c = KeypointSet::new(vec![Vec3::new(1.0, 0.0, 0.0)]);
    let delta = KeypointSet::new(vec![Vec3::new(0.0, 1.0, 0.0)]);
    let md = MotionDescriptor::new(x_c.clone(), rot_z(std::f64::consts::FRAC_PI_2), delta.clone(), 2.0, Vec3::new(0.0, 0.0, 1.0));

    let lp = transform_liveportrait(&md)?.points[0];
    let rc = transform_recast(&md)?.points[0];
    println!("rotate then deform: ({:+.3} {:+.3} {:+.3})", lp.x, lp.y, lp.z);
    println!("deform then rotate: ({:+.3} {:+.3} {:+.3})", rc.x, rc.y, rc.z);

    let (d_lp, d_rc) = delta_leakage(&x_c, &delta, &md.rotation)?;
    println!("deformation each convention needs to hit the same target:");
    println!("  rotate then deform: {:?}", d_lp.points[0].as_slice());
    println!("  deform then rotate: {:?}", d_rc.points[0].as_slice());

    for deg in [0.0, 1.0, 10.0, 45.0, 90.0] {
        let r: Mat3 = rot_z(f64::to_radians(deg));
        let (lp, rc) = delta_leakage(&x_c, &delta, &r)?;
        println!(
            "{deg:>5.1} deg: leakage {:.4} vs {:.1e}",
            lp.max_abs_diff(&delta),
            rc.max_abs_diff(&delta)
        );
    }
    Ok(())
}

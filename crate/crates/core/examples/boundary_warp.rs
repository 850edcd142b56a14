//! Renders a frame, edits its expression, and warps it with and without
//! confining the warp to the facial region. Writes PNGs to the directory
//! given as the first argument (default: a temp directory).

use facemotion::image::Image;
use facemotion::losses::masked_l1;
use facemotion::pipeline::{edit_keypoints, warp_edit_frame, EditMode, WarpSettings};
use facemotion::region::{default_sigma, render_keypoint_frame, Camera, RenderStyle, DEFAULT_EXPANSION};
use facemotion::rig::{make_synthetic_rig, SyntheticRigConfig};
use facemotion::{FlameParams, Vec3};

fn main() -> facemotion::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("facemotion-boundary-warp"));
    let (h, w) = (128, 128);
    let rig = make_synthetic_rig(&SyntheticRigConfig::default())?;
    let camera = Camera::framing(h, w);

    let mut source = FlameParams::zeros_for(&rig);
    source.theta_head = Vec3::new(0.0, 0.25, 0.0);
    let mut driving = source.clone();
    driving.psi[0] = 1.0;
    driving.psi[3] = -0.8;
    driving.theta_jaw = Vec3::new(0.2, 0.0, 0.0);

    let frame: Image = render_keypoint_frame(&rig, &source, &camera, h, w, &RenderStyle::default())?;
    let (x_s, x_d) = edit_keypoints(EditMode::Replace, &rig, &source, &driving, &driving)?;
    let (src_px, dst_px) = (camera.project_all(&x_s.points), camera.project_all(&x_d.points));

    for bam in [false, true] {
        let settings = WarpSettings {
            bam,
            sigma: default_sigma(h, w),
            expansion: DEFAULT_EXPANSION,
            feather: 0.0,
        };
        let edited = warp_edit_frame(&frame, &src_px, &dst_px, &settings)?;
        let outside = masked_l1(&edited.image, &frame, &edited.nonfacial)?;
        let inside = masked_l1(&edited.image, &frame, &edited.facial)?;
        println!("bam={bam}: facial change {inside:.5}, non-facial change {outside:.5}");
        edited.image.write(out.join(format!("edited_bam_{bam}.png")))?;
        edited.facial.write(out.join("facial_mask.pbm"))?;
    }
    frame.write(out.join("source.png"))?;
    println!("images written to {}", out.display());
    Ok(())
}

//! Wing loss, the six-term rig supervision loss and region-masked L1.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{Image, Mask};
use crate::keypoints::KeypointSet;
use crate::motion::{transform_recast, MotionDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WingConfig {
    pub w: f64,
    pub epsilon: f64,
}

impl Default for WingConfig {
    fn default() -> Self {
        Self { w: 10.0, epsilon: 2.0 }
    }
}

impl WingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.w > 0.0 && self.epsilon > 0.0 && self.w.is_finite() && self.epsilon.is_finite(),
            Parameter,
            "wing config needs w > 0 and epsilon > 0, got w={} epsilon={}",
            self.w,
            self.epsilon
        );
        Ok(())
    }

    /// Offset joining the two branches continuously at `|x| = w`.
    pub fn c(&self) -> f64 {
        self.w - self.w * (1.0 + self.w / self.epsilon).ln()
    }

    /// Per-element loss.
    pub fn value(&self, x: f64) -> f64 {
        let a = x.abs();
        if a < self.w {
            self.w * (1.0 + a / self.epsilon).ln()
        } else {
            a - self.c()
        }
    }

    /// Derivative of [`WingConfig::value`]; 0 at `x = 0`.
    pub fn derivative(&self, x: f64) -> f64 {
        let a = x.abs();
        let mag = if a < self.w { self.w / (self.epsilon + a) } else { 1.0 };
        if x > 0.0 {
            mag
        } else if x < 0.0 {
            -mag
        } else {
            0.0
        }
    }
}

/// Mean Wing loss over `residuals`; 0 for an empty slice.
pub fn wing(residuals: &[f64], cfg: &WingConfig) -> Result<f64> {
    cfg.validate()?;
    if residuals.is_empty() {
        return Ok(0.0);
    }
    Ok(residuals.iter().map(|&x| cfg.value(x)).sum::<f64>() / residuals.len() as f64)
}

/// Gradient of [`wing`] with respect to each residual.
pub fn wing_grad(residuals: &[f64], cfg: &WingConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = residuals.len().max(1) as f64;
    Ok(residuals.iter().map(|&x| cfg.derivative(x) / n).collect())
}

/// Wing loss between two point sets on per-coordinate residuals.
pub fn wing_points(a: &KeypointSet, b: &KeypointSet, cfg: &WingConfig) -> Result<f64> {
    a.same_len(b, "wing_points")?;
    wing(&a.sub(b).flat(), cfg)
}

/// Descriptors for a source and a driving frame together with the rig's
/// keypoint sets for both.
#[derive(Clone, Debug)]
pub struct FlameLossInputs {
    pub md_s: MotionDescriptor,
    pub md_d: MotionDescriptor,
    pub v_c_s: KeypointSet,
    pub v_c_d: KeypointSet,
    pub v_exp_s: KeypointSet,
    pub v_exp_d: KeypointSet,
    pub v_kp_s: KeypointSet,
    pub v_kp_d: KeypointSet,
}

/// Per-term weights, ordered as in [`FlameLossReport::terms`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlameLossWeights(pub [f64; 6]);

impl Default for FlameLossWeights {
    fn default() -> Self {
        Self([1.0; 6])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlameLossReport {
    /// Canonical (source, driving), canonical plus deformation (source,
    /// driving), fully transformed (source, driving).
    pub terms: [f64; 6],
    pub total: f64,
}

pub const FLAME_TERM_NAMES: [&str; 6] = ["canon_s", "canon_d", "exp_s", "exp_d", "kp_s", "kp_d"];

pub fn flame_loss(inputs: &FlameLossInputs, cfg: &WingConfig) -> Result<f64> {
    Ok(flame_loss_terms(inputs, cfg, &FlameLossWeights::default())?.total)
}

pub fn flame_loss_terms(inputs: &FlameLossInputs, cfg: &WingConfig, weights: &FlameLossWeights) -> Result<FlameLossReport> {
    cfg.validate()?;
    let k = inputs.md_s.k();
    for (set, name) in [
        (&inputs.md_d.x_c, "md_d"),
        (&inputs.v_c_s, "v_c_s"),
        (&inputs.v_c_d, "v_c_d"),
        (&inputs.v_exp_s, "v_exp_s"),
        (&inputs.v_exp_d, "v_exp_d"),
        (&inputs.v_kp_s, "v_kp_s"),
        (&inputs.v_kp_d, "v_kp_d"),
    ] {
        ensure!(set.len() == k, Parameter, "flame_loss: {name} has {} keypoints, expected {k}", set.len());
    }
    let x_s = transform_recast(&inputs.md_s)?;
    // the driving full term uses driving-only quantities
    let x_d_self = transform_recast(&inputs.md_d)?;
    let terms = [
        wing_points(&inputs.md_s.x_c, &inputs.v_c_s, cfg)?,
        wing_points(&inputs.md_d.x_c, &inputs.v_c_d, cfg)?,
        wing_points(&inputs.md_s.x_c.add(&inputs.md_s.delta), &inputs.v_exp_s, cfg)?,
        wing_points(&inputs.md_d.x_c.add(&inputs.md_d.delta), &inputs.v_exp_d, cfg)?,
        wing_points(&x_s, &inputs.v_kp_s, cfg)?,
        wing_points(&x_d_self, &inputs.v_kp_d, cfg)?,
    ];
    let total = terms.iter().zip(weights.0).map(|(t, w)| t * w).sum();
    Ok(FlameLossReport { terms, total })
}

/// Mean absolute difference over the pixels where `mask` is set, averaged
/// across channels. 0 for an empty mask.
pub fn masked_l1(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    a.same_shape(b, "masked_l1")?;
    mask.check_dims(a.height(), a.width(), "masked_l1")?;
    let ch = a.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..a.height() {
        for c in 0..a.width() {
            if mask.get(r, c) {
                for k in 0..ch {
                    sum += (a.get(r, c, k) - b.get(r, c, k)).abs();
                }
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / (count * ch) as f64 })
}

/// Distance between two images in some feature space. Stands in for
/// perceptual, adversarial or identity terms.
pub trait FeatureDistance {
    fn distance(&self, a: &Image, b: &Image, mask: &Mask) -> Result<f64>;
}

/// Features are the masked pixels themselves; distance is their mean
/// squared difference.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelFeatures;

impl FeatureDistance for PixelFeatures {
    fn distance(&self, a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
        a.same_shape(b, "feature distance")?;
        mask.check_dims(a.height(), a.width(), "feature distance")?;
        let ch = a.channels();
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..a.height() {
            for c in 0..a.width() {
                if mask.get(r, c) {
                    for k in 0..ch {
                        let d = a.get(r, c, k) - b.get(r, c, k);
                        sum += d * d;
                    }
                    count += ch;
                }
            }
        }
        Ok(if count == 0 { 0.0 } else { sum / count as f64 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionLossWeights {
    pub l1: f64,
    pub feature: f64,
}

impl Default for RegionLossWeights {
    fn default() -> Self {
        Self { l1: 1.0, feature: 1.0 }
    }
}

/// Region loss: masked L1 plus weighted feature distance on the same region.
pub fn region_loss(
    output: &Image,
    target: &Image,
    mask: &Mask,
    features: &dyn FeatureDistance,
    weights: &RegionLossWeights,
) -> Result<f64> {
    Ok(weights.l1 * masked_l1(output, target, mask)? + weights.feature * features.distance(output, target, mask)?)
}

/// Boundary-alignment objective for an edited frame: the facial region is
/// compared with the edit target and the non-facial region with the
/// unedited source. Returns `(facial, nonfacial)`.
pub fn boundary_losses(
    output: &Image,
    edit_target: &Image,
    source: &Image,
    facial: &Mask,
    features: &dyn FeatureDistance,
    weights: &RegionLossWeights,
) -> Result<(f64, f64)> {
    let nonfacial = facial.complement();
    Ok((
        region_loss(output, edit_target, facial, features, weights)?,
        region_loss(output, source, &nonfacial, features, weights)?,
    ))
}

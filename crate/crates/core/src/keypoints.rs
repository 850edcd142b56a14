//! Ordered 3D point lists.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// `K×3` point list. Also used for per-keypoint deformations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct KeypointSet {
    pub points: Vec<Vec3>,
}

impl From<Vec<[f64; 3]>> for KeypointSet {
    fn from(rows: Vec<[f64; 3]>) -> Self {
        Self {
            points: rows.into_iter().map(Vec3::from).collect(),
        }
    }
}

impl From<KeypointSet> for Vec<[f64; 3]> {
    fn from(set: KeypointSet) -> Self {
        set.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

impl From<Vec<Vec3>> for KeypointSet {
    fn from(points: Vec<Vec3>) -> Self {
        Self { points }
    }
}

impl KeypointSet {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            points: vec![Vec3::zeros(); k],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn same_len(&self, other: &KeypointSet, what: &str) -> Result<()> {
        ensure!(
            self.len() == other.len(),
            Parameter,
            "{what}: keypoint count mismatch ({} vs {})",
            self.len(),
            other.len()
        );
        Ok(())
    }

    pub fn add(&self, other: &KeypointSet) -> KeypointSet {
        debug_assert_eq!(self.len(), other.len());
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| a + b)
            .collect::<Vec<_>>()
            .into()
    }

    pub fn sub(&self, other: &KeypointSet) -> KeypointSet {
        debug_assert_eq!(self.len(), other.len());
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>()
            .into()
    }

    /// Row-vector product `x · R` applied to every point.
    pub fn right_mul(&self, rotation: &Mat3) -> KeypointSet {
        self.points
            .iter()
            .map(|p| row_mul(p, rotation))
            .collect::<Vec<_>>()
            .into()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &KeypointSet) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .flat_map(|(a, b)| (a - b).iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Flattened coordinates `[x0, y0, z0, x1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn select(&self, indices: &[usize]) -> KeypointSet {
        indices
            .iter()
            .map(|&i| self.points[i])
            .collect::<Vec<_>>()
            .into()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.len().max(1) as f64;
        self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n
    }
}

/// `x · R` for a row vector `x`.
#[inline]
pub fn row_mul(x: &Vec3, r: &Mat3) -> Vec3 {
    r.tr_mul(x)
}

/// Adds i.i.d. Gaussian noise to every coordinate. Models the keypoint
/// jitter used as a training-time augmentation; off unless called.
pub fn perturb<R: Rng + ?Sized>(set: &KeypointSet, sigma: f64, rng: &mut R) -> Result<KeypointSet> {
    ensure!(sigma >= 0.0 && sigma.is_finite(), Parameter, "noise sigma must be >= 0, got {sigma}");
    if sigma == 0.0 {
        return Ok(set.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    Ok(set
        .points
        .iter()
        .map(|p| p + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect::<Vec<_>>()
        .into())
}

/// Default standard deviation for [`perturb`], in model units.
pub const DEFAULT_NOISE_SIGMA: f64 = 1e-3;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn serde_as_nested_arrays() {
        let set = KeypointSet::new(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)]);
        let s = serde_json::to_string(&set).unwrap();
        assert_eq!(s, "[[1.0,2.0,3.0],[-1.0,0.5,0.0]]");
        let back: KeypointSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn row_mul_is_transpose_product() {
        let r = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        // row (1,0,0) picks out the first row of R
        assert_eq!(row_mul(&Vec3::x(), &r), Vec3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn perturb_is_seed_deterministic() {
        let set = KeypointSet::zeros(5);
        let a = perturb(&set, DEFAULT_NOISE_SIGMA, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = perturb(&set, DEFAULT_NOISE_SIGMA, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&set) > 0.0);
        assert!(perturb(&set, -1.0, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }
}

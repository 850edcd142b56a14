//! Image, parameter and distribution metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::keypoints::Vec3;
use crate::rig::{FlameParams, RigDefinition, JOINT_EYE_LEFT, JOINT_EYE_RIGHT};

/// Returned by [`psnr`] when the images are (numerically) identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b, "mse")?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for unit peak, in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Mean absolute pixel difference.
pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b, "l1")?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalised 1D Gaussian taps; the 2D window is their outer product.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable valid-mode filtering of `plane` (row-major `h×w`).
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            horiz[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * plane[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * horiz[(r + k) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity over all fully contained 11×11 Gaussian
/// windows (σ = 1.5, K1 = 0.01, K2 = 0.03, L = 1), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b, "ssim")?;
    ensure!(
        a.height() >= SSIM_WINDOW && a.width() >= SSIM_WINDOW,
        Parameter,
        "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
        a.height(),
        a.width()
    );
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    let taps = ssim_taps();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for k in 0..ch {
        let pa: Vec<f64> = (0..h * w).map(|i| a.get(i / w, i % w, k)).collect();
        let pb: Vec<f64> = (0..h * w).map(|i| b.get(i / w, i % w, k)).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let (mu_a, oh, ow) = filter_valid(&pa, h, w, &taps);
        let (mu_b, _, _) = filter_valid(&pb, h, w, &taps);
        let (aa, _, _) = filter_valid(&prod(&pa, &pa), h, w, &taps);
        let (bb, _, _) = filter_valid(&prod(&pb, &pb), h, w, &taps);
        let (ab, _, _) = filter_valid(&prod(&pa, &pb), h, w, &taps);
        let mut sum = 0.0;
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / (oh * ow) as f64;
    }
    let s = total / ch as f64;
    // identical inputs give exactly 1 up to rounding; report it as such
    Ok(if a == b { 1.0 } else { s })
}

/// Angle between two direction vectors, degrees in `[0, 180]`.
pub fn mae_angular(b_g: &Vec3, b_d: &Vec3) -> Result<f64> {
    let (ng, nd) = (b_g.norm(), b_d.norm());
    ensure!(
        ng > 0.0 && nd > 0.0 && ng.is_finite() && nd.is_finite(),
        Domain,
        "angular error needs nonzero finite vectors"
    );
    Ok((b_g.dot(b_d) / (ng * nd)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Mean angular error over paired direction sequences.
pub fn mean_angular_error(g: &[Vec3], d: &[Vec3]) -> Result<f64> {
    ensure!(g.len() == d.len() && !g.is_empty(), Shape, "direction sequences must be nonempty and equally long");
    let mut sum = 0.0;
    for (a, b) in g.iter().zip(d) {
        sum += mae_angular(a, b)?;
    }
    Ok(sum / g.len() as f64)
}

/// Expression descriptor: `ψ`, jaw rotation, then the eyelid sub-block of `ψ`.
pub fn expression_vector(rig: &RigDefinition, p: &FlameParams) -> Vec<f64> {
    let mut v = p.psi.clone();
    v.extend(p.theta_jaw.iter());
    v.extend(rig.eyelid_coeffs.iter().map(|&i| p.psi[i]));
    v
}

/// Pose descriptor: head then neck axis-angle.
pub fn pose_vector(p: &FlameParams) -> Vec<f64> {
    p.theta_head.iter().chain(p.theta_neck.iter()).copied().collect()
}

/// World-space gaze direction of each eye (the eyeball's +z axis).
pub fn gaze_directions(rig: &RigDefinition, p: &FlameParams) -> [Vec3; 2] {
    let g = rig.joint_transforms(&p.thetas());
    [g[JOINT_EYE_LEFT].rotation * Vec3::z(), g[JOINT_EYE_RIGHT].rotation * Vec3::z()]
}

fn mean_l1_distance(g: &[Vec<f64>], d: &[Vec<f64>], what: &str) -> Result<f64> {
    ensure!(g.len() == d.len(), Shape, "{what}: {} vs {} frames", g.len(), d.len());
    ensure!(!g.is_empty(), Shape, "{what}: empty sequences");
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in g.iter().zip(d) {
        ensure!(a.len() == b.len(), Shape, "{what}: coefficient count mismatch ({} vs {})", a.len(), b.len());
        sum += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        n += a.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Average expression distance: mean absolute coefficient difference.
pub fn aed(params_g: &[Vec<f64>], params_d: &[Vec<f64>]) -> Result<f64> {
    mean_l1_distance(params_g, params_d, "aed")
}

/// Average pose distance: mean absolute pose-parameter difference.
pub fn apd(pose_g: &[Vec<f64>], pose_d: &[Vec<f64>]) -> Result<f64> {
    mean_l1_distance(pose_g, pose_d, "apd")
}

/// `M×D` feature samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    vectors: DMatrix<f64>,
}

impl FeatureSet {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(rows.len() >= 2, Parameter, "feature set needs at least 2 samples, got {}", rows.len());
        let d = rows[0].len();
        ensure!(d > 0, Parameter, "feature dimension must be positive");
        ensure!(rows.iter().all(|r| r.len() == d), Shape, "feature rows differ in length");
        ensure!(rows.iter().flatten().all(|v| v.is_finite()), Domain, "non-finite feature value");
        Ok(Self {
            vectors: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| self.vectors.column(j).mean())
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut centred = self.vectors.clone();
        for mut row in centred.row_iter_mut() {
            row -= mu.transpose();
        }
        centred.tr_mul(&centred) / (self.len() as f64 - 1.0)
    }
}

/// Symmetric PSD square root by eigendecomposition; eigenvalues above
/// `-1e-9·‖M‖` are clamped to zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure!(m.is_square(), Shape, "matrix_sqrt_psd: matrix is not square");
    let scale = m.abs().max().max(1.0);
    ensure!(
        (m - m.transpose()).abs().max() <= 1e-9 * scale,
        Parameter,
        "matrix_sqrt_psd: matrix is not symmetric"
    );
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    ensure!(
        eig.eigenvalues.iter().all(|&l| l >= -1e-9 * scale),
        Numeric,
        "matrix_sqrt_psd: matrix is not positive semi-definite"
    );
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians fitted to two feature sets,
/// `‖μg − μr‖² + Tr(Σg + Σr − 2 (Σr^½ Σg Σr^½)^½)`.
pub fn frechet_distance(g: &FeatureSet, r: &FeatureSet) -> Result<f64> {
    ensure!(g.dim() == r.dim(), Shape, "feature dimension mismatch ({} vs {})", g.dim(), r.dim());
    let (mu_g, mu_r) = (g.mean(), r.mean());
    let (cov_g, cov_r) = (g.covariance(), r.covariance());
    let root_r = matrix_sqrt_psd(&cov_r)?;
    let inner = &root_r * &cov_g * &root_r;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?;
    let d = (mu_g - mu_r).norm_squared() + cov_g.trace() + cov_r.trace() - 2.0 * cross.trace();
    ensure!(d >= -1e-8 * (1.0 + cov_g.trace() + cov_r.trace()), Numeric, "negative Fréchet distance {d}");
    Ok(d.max(0.0))
}

/// Maps an image to a feature vector for distribution metrics.
pub trait FeatureExtractor {
    fn features(&self, img: &Image) -> Vec<f64>;
}

/// Gray image averaged over an `n×n` grid.
#[derive(Clone, Copy, Debug)]
pub struct PooledGray {
    pub grid: usize,
}

impl Default for PooledGray {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

impl FeatureExtractor for PooledGray {
    fn features(&self, img: &Image) -> Vec<f64> {
        img.average_pool(self.grid)
    }
}

pub fn feature_set(images: &[Image], extractor: &dyn FeatureExtractor) -> Result<FeatureSet> {
    FeatureSet::new(&images.iter().map(|i| extractor.features(i)).collect::<Vec<_>>())
}

/// Table of per-frame metric values plus a mean row and named scalars.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn push_row(&mut self, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len(), "metric row width");
        self.rows.push(values);
    }

    /// Column means in column order.
    pub fn means(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        (0..self.columns.len())
            .map(|j| self.rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect()
    }

    /// `frame,<columns...>` header, one line per frame, then a `mean` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        let line = |label: &str, vals: &[f64], out: &mut String| {
            out.push_str(label);
            for v in vals {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        };
        for (i, row) in self.rows.iter().enumerate() {
            line(&i.to_string(), row, &mut out);
        }
        line("mean", &self.means(), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = Image::new(16, 16, 1, 0.0).unwrap();
        let b = Image::new(16, 16, 1, 0.5).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 10.0 * 4f64.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 6.0206, epsilon = 1e-3);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = Image::new(128, 128, 1, 0.5).unwrap();
        let normal = Normal::new(0.0, 0.1).unwrap();
        let noisy = Image::from_fn(128, 128, 1, |_, _, _| 0.5 + normal.sample(&mut rng)).unwrap();
        assert!((psnr(&base, &noisy).unwrap() - 20.0).abs() < 0.5);
        assert!(psnr(&a, &Image::new(4, 4, 1, 0.0).unwrap()).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = Image::new(64, 64, 1, 0.5).unwrap();
        let unit: Vec<f64> = (0..64 * 64).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let mut last = f64::INFINITY;
        for s in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let noisy = Image::from_raw(64, 64, 1, unit.iter().map(|u| 0.5 + s * u).collect()).unwrap();
            let p = psnr(&base, &noisy).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    /// Direct evaluation of every window with explicit 2D weights.
    fn ssim_naive(a: &Image, b: &Image) -> f64 {
        let taps = ssim_taps();
        let (c1, c2) = (1e-4, 9e-4);
        let mut sum = 0.0;
        let mut count = 0.0;
        for r in 0..=a.height() - 11 {
            for c in 0..=a.width() - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = taps[i] * taps[j];
                        let (x, y) = (a.get(r + i, c + j, 0), b.get(r + i, c + j, 0));
                        ma += w * x;
                        mb += w * y;
                        saa += w * x * x;
                        sbb += w * y * y;
                        sab += w * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        sum / count
    }

    #[test]
    fn ssim_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 20, 24);
        let b = random_image(&mut rng, 20, 24);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), ssim_naive(&a, &b), epsilon = 1e-12);
        let neg = Image::from_fn(20, 24, 1, |r, c, _| 1.0 - a.get(r, c, 0)).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 0.0);
        assert!(ssim(&Image::new(8, 8, 1, 0.0).unwrap(), &Image::new(8, 8, 1, 0.0).unwrap()).is_err());
    }

    #[test]
    fn angular_cases() {
        assert_abs_diff_eq!(mae_angular(&Vec3::x(), &(2.0 * Vec3::x())).unwrap(), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(mae_angular(&Vec3::x(), &Vec3::y()).unwrap(), 90.0, epsilon = 1e-6);
        assert_abs_diff_eq!(mae_angular(&Vec3::new(1.0, 1.0, 0.0), &Vec3::x()).unwrap(), 45.0, epsilon = 1e-6);
        assert!(mae_angular(&Vec3::zeros(), &Vec3::x()).is_err());
    }

    #[test]
    fn aed_apd_cases() {
        let g = vec![vec![0.1, 0.2, 0.3], vec![0.0, -0.5, 1.0]];
        assert_eq!(aed(&g, &g).unwrap(), 0.0);
        let shifted: Vec<Vec<f64>> = g.iter().map(|r| r.iter().map(|v| v + 0.1).collect()).collect();
        assert_abs_diff_eq!(aed(&g, &shifted).unwrap(), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(apd(&g, &shifted).unwrap(), 0.1, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let mut sum = 0.0;
        for f in 0..5 {
            for k in 0..4 {
                sum += (a[f][k] - b[f][k]).abs();
            }
        }
        assert_abs_diff_eq!(aed(&a, &b).unwrap(), sum / 20.0, epsilon = 1e-14);
        assert!(aed(&a, &b[..4]).is_err());
    }

    #[test]
    fn sqrt_cases() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_abs_diff_eq!(matrix_sqrt_psd(&i).unwrap(), i, epsilon = 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_sqrt_psd(&d).unwrap();
        assert_abs_diff_eq!(s, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])), epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5);
        let m = a.transpose() * &a;
        let r = matrix_sqrt_psd(&m).unwrap();
        assert!((&r * &r - &m).abs().max() <= 1e-8 * m.norm());
        let mut asym = m.clone();
        asym[(0, 1)] += 0.1;
        assert!(matrix_sqrt_psd(&asym).is_err());
    }

    /// Trace of `(Σr Σg)^½` from the eigenvalues of the (non-symmetric)
    /// product, which are real and nonnegative for PSD factors.
    fn frechet_oracle(g: &[Vec<f64>], r: &[Vec<f64>]) -> f64 {
        let d = g[0].len();
        let stats = |x: &[Vec<f64>]| {
            let m = x.len() as f64;
            let mu: Vec<f64> = (0..d).map(|j| x.iter().map(|v| v[j]).sum::<f64>() / m).collect();
            let mut cov = DMatrix::<f64>::zeros(d, d);
            for v in x {
                for i in 0..d {
                    for j in 0..d {
                        cov[(i, j)] += (v[i] - mu[i]) * (v[j] - mu[j]) / (m - 1.0);
                    }
                }
            }
            (mu, cov)
        };
        let (mg, cg) = stats(g);
        let (mr, cr) = stats(r);
        let prod = &cr * &cg;
        let tr_sqrt: f64 = prod.complex_eigenvalues().iter().map(|l| l.sqrt().re).sum();
        let dmu: f64 = mg.iter().zip(&mr).map(|(a, b)| (a - b) * (a - b)).sum();
        dmu + cg.trace() + cr.trace() - 2.0 * tr_sqrt
    }

    fn gaussian_rows(rng: &mut ChaCha8Rng, m: usize, shift: f64) -> Vec<Vec<f64>> {
        let n = Normal::new(0.0, 1.0).unwrap();
        (0..m)
            .map(|_| {
                let z: Vec<f64> = (0..3).map(|_| n.sample(rng)).collect();
                vec![z[0] + shift, 0.5 * z[0] + z[1], 0.2 * z[1] + 2.0 * z[2] - shift]
            })
            .collect()
    }

    #[test]
    fn frechet_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = gaussian_rows(&mut rng, 200, 0.0);
        let r = gaussian_rows(&mut rng, 150, 0.7);
        let (fg, fr) = (FeatureSet::new(&g).unwrap(), FeatureSet::new(&r).unwrap());
        assert!(frechet_distance(&fg, &fg).unwrap() < 1e-8);
        let d = frechet_distance(&fg, &fr).unwrap();
        assert!((d - frechet_distance(&fr, &fg).unwrap()).abs() < 1e-8);
        assert_abs_diff_eq!(d, frechet_oracle(&g, &r), epsilon = 1e-6);

        let a: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0].iter().map(|v| vec![*v]).collect();
        let b: Vec<Vec<f64>> = [3.5, 4.5, 5.5, 6.5].iter().map(|v| vec![*v]).collect();
        let d = frechet_distance(&FeatureSet::new(&a).unwrap(), &FeatureSet::new(&b).unwrap()).unwrap();
        assert_abs_diff_eq!(d, 2.5 * 2.5, epsilon = 1e-12);
        assert!(FeatureSet::new(&a[..1]).is_err());
        let three = FeatureSet::new(&g).unwrap();
        assert!(frechet_distance(&three, &FeatureSet::new(&a).unwrap()).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let mut rep = MetricReport::new(&["psnr", "l1"]);
        rep.push_row(vec![10.0, 0.5]);
        rep.push_row(vec![20.0, 0.25]);
        let csv = rep.to_csv();
        assert_eq!(csv, "frame,psnr,l1\n0,10,0.5\n1,20,0.25\nmean,15,0.375\n");
    }

    proptest! {
        #[test]
        fn ssim_self_is_one(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 12, 13);
            prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn angular_scale_invariance(x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.1..5.0f64, c in 0.01..100.0f64) {
            let v = Vec3::new(x, y, z);
            prop_assert!(mae_angular(&v, &(c * v)).unwrap() < 1e-5);
        }

        #[test]
        fn aed_triangle_inequality(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seq = || -> Vec<Vec<f64>> { (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
            let (a, b, c) = (seq(), seq(), seq());
            prop_assert!(aed(&a, &c).unwrap() <= aed(&a, &b).unwrap() + aed(&b, &c).unwrap() + 1e-12);
            prop_assert!(apd(&a, &c).unwrap() <= apd(&a, &b).unwrap() + apd(&b, &c).unwrap() + 1e-12);
        }

        #[test]
        fn frechet_symmetric(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = FeatureSet::new(&gaussian_rows(&mut rng, 30, 0.0)).unwrap();
            let r = FeatureSet::new(&gaussian_rows(&mut rng, 40, 0.3)).unwrap();
            prop_assert!((frechet_distance(&g, &r).unwrap() - frechet_distance(&r, &g).unwrap()).abs() < 1e-8);
        }
    }
}

//! Image, parameter and distribution metrics on small synthetic inputs.

use facemotion::image::Image;
use facemotion::metrics::{aed, frechet_distance, mae_angular, psnr, ssim, FeatureSet};
use facemotion::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> facemotion::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.05).unwrap();

    let clean = Image::from_fn(64, 64, 1, |r, c, _| 0.5 + 0.3 * ((r as f64) / 9.0).sin() * ((c as f64) / 7.0).cos())?;
    let noisy = Image::from_fn(64, 64, 1, |r, c, _| clean.get(r, c, 0) + noise.sample(&mut rng))?;
    println!("PSNR self {:.1} dB, noisy {:.2} dB", psnr(&clean, &clean)?, psnr(&clean, &noisy)?);
    println!("SSIM self {:.4}, noisy {:.4}", ssim(&clean, &clean)?, ssim(&clean, &noisy)?);

    let a = Vec3::new(1.0, 0.0, 0.0);
    for b in [Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 2.0, 0.0)] {
        println!("angle to {:?}: {:.3} deg", b.as_slice(), mae_angular(&a, &b)?);
    }

    let g = vec![vec![0.1, 0.2], vec![0.0, 0.4]];
    let d = vec![vec![0.2, 0.2], vec![0.0, 0.1]];
    println!("AED {:.3}", aed(&g, &d)?);

    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut draw = |shift: f64| -> Vec<Vec<f64>> {
        (0..300).map(|_| (0..3).map(|_| unit.sample(&mut rng) + shift).collect()).collect()
    };
    let (x, y, z) = (draw(0.0), draw(0.0), draw(0.5));
    let (fx, fy, fz) = (FeatureSet::new(&x)?, FeatureSet::new(&y)?, FeatureSet::new(&z)?);
    println!("Frechet same law {:.4}, shifted by 0.5 {:.4}", frechet_distance(&fx, &fy)?, frechet_distance(&fx, &fz)?);
    Ok(())
}

//! Deterministic synthetic scenes and noise, used by the benchmark harness,
//! the dataset generator, and the test suites.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Band-limited random image in [0, 1]: a sum of low-frequency plane waves.
/// Deterministic in the seed.
pub fn smooth_image(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img: Array2<f64> = Array2::zeros((n, n));
    for _ in 0..10 {
        let fx = rng.gen_range(-4.0..4.0);
        let fy = rng.gen_range(-4.0..4.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let amp = rng.gen_range(0.2..1.0);
        for y in 0..n {
            for x in 0..n {
                img[[y, x]] +=
                    amp * (2.0 * PI * (fx * x as f64 + fy * y as f64) / n as f64 + phase).cos();
            }
        }
    }
    normalize_to_unit(&mut img);
    img
}

/// Piecewise-constant phantom (random disks and rectangles over a dim
/// background) in [0, 1]. Edge-rich, which is what deblurring metrics care
/// about. Deterministic in the seed.
pub fn phantom(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Array2::from_elem((n, n), 0.05);
    for _ in 0..6 {
        let cx = rng.gen_range(0.2..0.8) * n as f64;
        let cy = rng.gen_range(0.2..0.8) * n as f64;
        let radius = rng.gen_range(0.04..0.15) * n as f64;
        let level = rng.gen_range(0.3..1.0);
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 < radius * radius {
                    img[[y, x]] = level;
                }
            }
        }
    }
    for _ in 0..3 {
        let x0 = rng.gen_range(0..n - 4);
        let y0 = rng.gen_range(0..n - 4);
        let w = rng.gen_range(2..n / 4).min(n - x0);
        let h = rng.gen_range(2..n / 4).min(n - y0);
        let level = rng.gen_range(0.3..1.0);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img[[y, x]] = level;
            }
        }
    }
    img
}

/// Add white Gaussian noise scaled to the requested SNR in dB, where
/// SNR = 10 log10(mean signal power / noise variance).
pub fn add_gaussian_noise_snr(img: &Array2<f64>, snr_db: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let power = img.iter().map(|v| v * v).sum::<f64>() / img.len() as f64;
    let sigma = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
    img.map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
}

fn normalize_to_unit(img: &mut Array2<f64>) {
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    img.mapv_inplace(|v| (v - lo) / span);
}

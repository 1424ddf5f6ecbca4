use ndarray::Array2;
use rdm_core::calib::normalize_patch;
use rdm_core::synth::add_gaussian_noise_snr;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let p = 17;
    for cut_rel in [0.05, 0.1, 0.2, 0.3] {
        let mut worst: f64 = 0.0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut patch = Array2::zeros((p, p));
            patch[[8, 8]] = 30.0;
            let noisy = add_gaussian_noise_snr(&patch, 10.0, &mut rng);
            let mut normd = normalize_patch(&noisy).unwrap();
            let pmax = normd.iter().cloned().fold(0.0f64, f64::max);
            normd.mapv_inplace(|v| if v < cut_rel * pmax { 0.0 } else { v });
            let sum: f64 = normd.iter().sum();
            let (mut cx, mut cy) = (0.0, 0.0);
            for ((y, x), &v) in normd.indexed_iter() {
                cx += v * x as f64;
                cy += v * y as f64;
            }
            cx /= sum;
            cy /= sum;
            worst = worst.max(((cx - 8.0f64).powi(2) + (cy - 8.0f64).powi(2)).sqrt());
        }
        println!("cut {cut_rel}: worst drift {worst:.4}");
    }
}

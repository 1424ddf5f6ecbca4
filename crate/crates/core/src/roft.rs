//! Rotational Fourier analysis: the per-radius angular spectrum of an
//! image, and the filtering diagnostics it supports.
//!
//! The rotational transform of a polar-resampled image is a 1D transform
//! over the angle of every ring, with the positive-exponent kernel
//! exp(+2 pi i theta xi) (theta as a fraction of a turn). Under that view
//! a revolution-invariant system is a filter bank: the object spectrum at
//! source radius r is pointwise multiplied by the PSF spectra and mixed
//! across output radii. Two scalar diagnostics summarize a PSF:
//!
//! * bandwidth — the angular-frequency extent (99% energy) of the PSF's
//!   spectrum at its own ring, which limits angular resolution there;
//! * mix width — the radial extent (99% energy) of the PSF's spectrum,
//!   the number of output rings a source ring contaminates.

use crate::error::{RdmError, Result};
use crate::fft::{angular_spectrum_inplace, angular_synthesis_inplace};
use crate::forward::{psf_field_canvas, RingSpectrumStack};
use crate::polar::{check_same_grid, from_polar_raw, to_polar, to_polar_raw, PolarGrid, PolarImage};
use crate::seidel::PsfRadialStack;
use ndarray::Array2;
use num_complex::Complex64;

/// Rotational spectrum of an image: entry (j, xi) is ring j's component at
/// rotational frequency xi.
#[derive(Debug, Clone)]
pub struct RoftImage {
    spectrum: Array2<Complex64>,
    grid: PolarGrid,
}

impl RoftImage {
    pub fn spectrum(&self) -> &Array2<Complex64> {
        &self.spectrum
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.grid
    }
}

/// Per-radius spectral extents of one PSF.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PsfSpectralMetrics {
    /// Normalized source radius of the PSF.
    pub source_radius: f64,
    /// 99%-energy angular-frequency extent at the PSF's own ring, in
    /// cycles per turn; at most M/2.
    pub bandwidth: f64,
    /// 99%-energy radial extent of the full spectrum, in rings; at most K.
    pub mix_width: f64,
}

/// Rotational transform: angular spectrum of every ring of the polar
/// resampling of `img`.
pub fn roft(img: &Array2<f64>, grid: &PolarGrid) -> Result<RoftImage> {
    let polar = to_polar(img, grid)?;
    Ok(roft_polar(&polar))
}

/// Rotational transform of an already-polar image.
pub fn roft_polar(polar: &PolarImage) -> RoftImage {
    let grid = polar.grid().clone();
    let (m, k) = (grid.num_angles, grid.num_radii);
    let mut spectrum = Array2::from_elem((k, m), Complex64::new(0.0, 0.0));
    let mut ring = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..k {
        for (a, slot) in ring.iter_mut().enumerate() {
            *slot = Complex64::new(polar.samples()[[a, j]], 0.0);
        }
        angular_spectrum_inplace(&mut ring);
        for (xi, v) in ring.iter().enumerate() {
            spectrum[[j, xi]] = *v;
        }
    }
    RoftImage { spectrum, grid }
}

/// Inverse transform back to an n x n Cartesian image.
pub fn inverse_roft(spec: &RoftImage, n: usize) -> Result<Array2<f64>> {
    let grid = &spec.grid;
    if n != grid.image_side {
        return Err(RdmError::InvalidArgument(format!(
            "requested side {n} does not match the grid's image side {}",
            grid.image_side
        )));
    }
    let polar = inverse_roft_polar(spec);
    Ok(from_polar_raw(polar.samples(), grid))
}

/// Inverse transform to the polar grid (exact to FFT precision).
pub fn inverse_roft_polar(spec: &RoftImage) -> PolarImage {
    let grid = &spec.grid;
    let (m, k) = (grid.num_angles, grid.num_radii);
    let mut samples = Array2::zeros((m, k));
    let mut ring = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..k {
        for (xi, slot) in ring.iter_mut().enumerate() {
            *slot = spec.spectrum[[j, xi]];
        }
        angular_synthesis_inplace(&mut ring);
        for a in 0..m {
            samples[[a, j]] = ring[a].re;
        }
    }
    PolarImage::new(samples, grid.clone()).expect("inverse transform is finite")
}

/// Apply the revolution-invariant filter in the spectral domain:
/// out(i, xi) = sum_j c_j objSpec(j, xi) spectra(j, i, xi), with c_j the
/// same quadrature constants the spatial path uses. Equal to the
/// rotational transform of the ring convolution.
pub fn lri_filter_spectrum(obj_spec: &RoftImage, spectra: &RingSpectrumStack) -> Result<RoftImage> {
    check_same_grid(&obj_spec.grid, spectra.grid())?;
    let grid = obj_spec.grid.clone();
    let (m, k) = (grid.num_angles, grid.num_radii);
    let weights = grid.radial_weights();
    let mut out = Array2::from_elem((k, m), Complex64::new(0.0, 0.0));
    for i in 0..k {
        for j in 0..k {
            let w = weights[j];
            let h = spectra.data().slice(ndarray::s![j, i, ..]);
            let h = h.as_slice().expect("spectra inner axis is contiguous");
            for xi in 0..m {
                out[[i, xi]] += w * obj_spec.spectrum[[j, xi]] * h[xi];
            }
        }
    }
    Ok(RoftImage {
        spectrum: out,
        grid,
    })
}

/// Bandwidth and mix width for every PSF of a stack.
pub fn psf_metrics(stack: &PsfRadialStack, grid: &PolarGrid) -> Result<Vec<PsfSpectralMetrics>> {
    check_same_grid(stack.grid(), grid)?;
    let (m, k) = (grid.num_angles, grid.num_radii);
    let mut out = Vec::with_capacity(k);
    let mut ring = vec![Complex64::new(0.0, 0.0); m];
    for (j, psf) in stack.psfs().iter().enumerate() {
        let (canvas, canvas_grid) = psf_field_canvas(psf, grid);
        let polar = to_polar_raw(&canvas, &canvas_grid);
        // Spectrum of every output ring of this PSF.
        let mut spec = Array2::from_elem((k, m), Complex64::new(0.0, 0.0));
        for i in 0..k {
            for (a, slot) in ring.iter_mut().enumerate() {
                *slot = Complex64::new(polar[[a, i]], 0.0);
            }
            angular_spectrum_inplace(&mut ring);
            for (xi, v) in ring.iter().enumerate() {
                spec[[i, xi]] = *v;
            }
        }
        let total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
        if total <= 0.0 {
            return Err(RdmError::DegeneratePupil);
        }

        // Bandwidth: folded angular-frequency energy at the PSF's own ring.
        let own = spec.row(j);
        let own_total: f64 = own.iter().map(|v| v.norm_sqr()).sum();
        let bandwidth = if own_total > 0.0 {
            let half = m / 2;
            let folded: Vec<f64> = (0..=half)
                .map(|q| {
                    if q == 0 || (q == half && m % 2 == 0) {
                        own[q].norm_sqr()
                    } else {
                        own[q].norm_sqr() + own[m - q].norm_sqr()
                    }
                })
                .collect();
            energy_extent(&folded, 0.99)
        } else {
            0.0
        };

        // Mix width: smallest contiguous run of rings holding 99% of the
        // spectrum energy.
        let ring_energy: Vec<f64> = (0..k)
            .map(|i| spec.row(i).iter().map(|v| v.norm_sqr()).sum())
            .collect();
        let mix_width = smallest_window(&ring_energy, 0.99);

        out.push(PsfSpectralMetrics {
            source_radius: psf.source_radius(),
            bandwidth,
            mix_width,
        });
    }
    Ok(out)
}

/// Smallest prefix extent [0, b] capturing `fraction` of the energy.
fn energy_extent(energy: &[f64], fraction: f64) -> f64 {
    let total: f64 = energy.iter().sum();
    let mut acc = 0.0;
    for (q, e) in energy.iter().enumerate() {
        acc += e;
        if acc >= fraction * total {
            return q as f64;
        }
    }
    (energy.len() - 1) as f64
}

/// Length of the smallest contiguous window capturing `fraction` of the
/// total energy.
fn smallest_window(energy: &[f64], fraction: f64) -> f64 {
    let total: f64 = energy.iter().sum();
    let target = fraction * total;
    let mut best = energy.len();
    let mut acc = 0.0;
    let mut lo = 0;
    for hi in 0..energy.len() {
        acc += energy[hi];
        while acc - energy[lo] >= target {
            acc -= energy[lo];
            lo += 1;
        }
        if acc >= target {
            best = best.min(hi - lo + 1);
        }
    }
    best as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{precompute_ring_spectra, ring_convolve};
    use crate::imgops::relative_l2;
    use crate::polar::Coverage;
    use crate::seidel::{psf_at_radius, synth_radial_psfs, OpticalConfig, Psf, SeidelCoeffs};
    use crate::synth::smooth_image;
    use std::f64::consts::PI;

    fn light_cfg(n: usize) -> OpticalConfig {
        let mut cfg = OpticalConfig::desk_default(n);
        cfg.pupil_samples = 2 * n;
        cfg
    }

    #[test]
    fn rotationally_symmetric_image_has_dc_only_spectrum() {
        let n = 64;
        let grid = PolarGrid::for_image(n);
        let c = (n as f64 - 1.0) / 2.0;
        let img = Array2::from_shape_fn((n, n), |(y, x)| {
            let rho = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            (-rho * rho / 50.0).exp()
        });
        let spec = roft(&img, &grid).unwrap();
        for j in 0..grid.num_radii {
            // Beyond the inscribed disk the square frame truncates the
            // rings, so only fully interior rings are angle-constant.
            if grid.radius(j) >= c - 1.0 {
                continue;
            }
            let dc = spec.spectrum()[[j, 0]].norm();
            for xi in 1..grid.num_angles {
                // Constant over angle up to bilinear pickup of grid
                // anisotropy.
                assert!(
                    spec.spectrum()[[j, xi]].norm() < 2e-2 * dc.max(1e-12),
                    "ring {j} xi {xi}"
                );
            }
        }
    }

    #[test]
    fn angular_periodicity_concentrates_on_multiples() {
        // cos(p * phi) over an annulus puts ring energy only at xi = p and
        // xi = M - p (conjugate pair).
        let n = 64;
        let grid = PolarGrid::for_image_with(n, Coverage::Inscribed);
        let c = (n as f64 - 1.0) / 2.0;
        let p = 6usize;
        let img = Array2::from_shape_fn((n, n), |(y, x)| {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let phi = dy.atan2(dx);
            (p as f64 * phi).cos()
        });
        let spec = roft(&img, &grid).unwrap();
        let m = grid.num_angles;
        // Inspect a mid-field ring solidly inside the frame.
        let j = grid.num_radii / 2;
        let keep = spec.spectrum()[[j, p]].norm() + spec.spectrum()[[j, m - p]].norm();
        let mut rest = 0.0f64;
        for xi in 0..m {
            if xi != p && xi != m - p {
                rest = rest.max(spec.spectrum()[[j, xi]].norm());
            }
        }
        assert!(
            rest < 2e-2 * keep,
            "leakage {rest} vs signal {keep} at ring {j}"
        );
    }

    #[test]
    fn per_ring_parseval_identity() {
        let n = 48;
        let grid = PolarGrid::for_image(n);
        let img = smooth_image(n, 13);
        let polar = to_polar(&img, &grid).unwrap();
        let spec = roft_polar(&polar);
        let m = grid.num_angles as f64;
        for j in 0..grid.num_radii {
            let spatial: f64 = (0..grid.num_angles)
                .map(|a| polar.samples()[[a, j]].powi(2))
                .sum();
            let spectral: f64 = (0..grid.num_angles)
                .map(|xi| spec.spectrum()[[j, xi]].norm_sqr())
                .sum::<f64>()
                / m;
            assert!(
                (spatial - spectral).abs() <= 1e-9 * spatial.max(1e-30),
                "ring {j}: {spatial} vs {spectral}"
            );
        }
    }

    #[test]
    fn conjugate_symmetry_for_real_input() {
        let n = 32;
        let grid = PolarGrid::for_image(n);
        let spec = roft(&smooth_image(n, 17), &grid).unwrap();
        let m = grid.num_angles;
        for j in 0..grid.num_radii {
            for xi in 1..m {
                let a = spec.spectrum()[[j, xi]];
                let b = spec.spectrum()[[j, m - xi]].conj();
                assert!((a - b).norm() < 1e-9 * a.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn round_trip_on_polar_grid_is_exact() {
        let n = 32;
        let grid = PolarGrid::for_image(n);
        let polar = to_polar(&smooth_image(n, 19), &grid).unwrap();
        let back = inverse_roft_polar(&roft_polar(&polar));
        for (a, b) in polar.samples().iter().zip(back.samples().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_spectrum_gives_zero_image() {
        let grid = PolarGrid::for_image(16);
        let spec = RoftImage {
            spectrum: Array2::from_elem(
                (grid.num_radii, grid.num_angles),
                Complex64::new(0.0, 0.0),
            ),
            grid: grid.clone(),
        };
        let img = inverse_roft(&spec, 16).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cartesian_round_trip_within_polar_tolerance() {
        // inverse_roft(roft(img)) is exactly the polar round trip, so the
        // frozen polar bound applies.
        let n = 128;
        let grid = PolarGrid::for_image(n);
        let img = smooth_image(n, 11);
        let back = inverse_roft(&roft(&img, &grid).unwrap(), n).unwrap();
        assert!(relative_l2(&img, &back) < 4.0e-2);
    }

    #[test]
    fn spectral_and_spatial_paths_commute() {
        // The module's core identity: filtering in the rotational-spectrum
        // domain equals transforming the ring-convolved image.
        let n = 64;
        let grid = PolarGrid::for_image(n);
        let cfg = light_cfg(n);
        let coeffs = SeidelCoeffs::new(0.4, 0.5, 0.3, 0.2, 0.1);
        let stack = synth_radial_psfs(&coeffs, &grid, &cfg).unwrap();
        let spectra = precompute_ring_spectra(&stack, &grid).unwrap();
        for seed in [1u64, 2, 3] {
            let img = smooth_image(n, seed);
            let spatial = roft_polar(&crate::forward::ring_convolve_polar(
                &to_polar(&img, &grid).unwrap(),
                &spectra,
            ));
            let spectral =
                lri_filter_spectrum(&roft(&img, &grid).unwrap(), &spectra).unwrap();
            let num: f64 = spatial
                .spectrum()
                .iter()
                .zip(spectral.spectrum().iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            let den: f64 = spatial.spectrum().iter().map(|v| v.norm_sqr()).sum();
            let err = (num / den).sqrt();
            assert!(err < 1e-6, "seed {seed}: commutation error {err}");
        }
    }

    #[test]
    fn delta_spectra_are_identity_filter_for_matched_input() {
        // Kernel = quadrature-weighted near-identity: filtering a spectrum
        // whose rings match grid radii reproduces it approximately; the
        // exact statement (spectral equals spatial path) is covered above.
        // Here: zero object gives zero output.
        let grid = PolarGrid::for_image(32);
        let n = 32;
        let psfs: Vec<Psf> = (0..grid.num_radii)
            .map(|j| {
                let mut p = Array2::zeros((n, n));
                p[[n / 2, n / 2]] = 1.0;
                Psf::new(p, grid.normalized_radius(j)).unwrap()
            })
            .collect();
        let stack = PsfRadialStack::new(psfs, grid.clone()).unwrap();
        let spectra = precompute_ring_spectra(&stack, &grid).unwrap();
        let zero = Array2::zeros((n, n));
        let out = lri_filter_spectrum(&roft(&zero, &grid).unwrap(), &spectra).unwrap();
        assert!(out.spectrum().iter().all(|v| v.norm() == 0.0));
        // And the identity property in image space, already bounded in the
        // forward tests, transfers through the transform.
        let img = smooth_image(n, 23);
        let filtered = lri_filter_spectrum(&roft(&img, &grid).unwrap(), &spectra).unwrap();
        let back = inverse_roft(&filtered, n).unwrap();
        let ring = ring_convolve(&img, &spectra, &grid).unwrap();
        assert!(relative_l2(&ring, &back) < 1e-9);
    }

    #[test]
    fn compact_psf_has_small_mix_width_and_large_bandwidth() {
        let n = 48;
        let grid = PolarGrid::for_image(n);
        let cfg = light_cfg(n);
        let stack = synth_radial_psfs(&SeidelCoeffs::default(), &grid, &cfg).unwrap();
        let metrics = psf_metrics(&stack, &grid).unwrap();
        // Diffraction-limited PSFs stay within a few rings at mid field.
        let mid = &metrics[grid.num_radii / 2];
        assert!(mid.mix_width <= 6.0, "mix width {}", mid.mix_width);
        assert!(
            mid.bandwidth > grid.num_angles as f64 / 16.0,
            "bandwidth {}",
            mid.bandwidth
        );
    }

    #[test]
    fn radially_elongated_psf_mixes_more() {
        // Astigmatism at our convention stretches the PSF along the field
        // axis (radially): larger mix width than the aberration-free PSF
        // at the same radius.
        let n = 48;
        let grid = PolarGrid::for_image(n);
        let cfg = light_cfg(n);
        let compact = psf_metrics(
            &synth_radial_psfs(&SeidelCoeffs::default(), &grid, &cfg).unwrap(),
            &grid,
        )
        .unwrap();
        let astig = psf_metrics(
            &synth_radial_psfs(&SeidelCoeffs::new(0.0, 0.0, 2.0, 0.0, 0.0), &grid, &cfg).unwrap(),
            &grid,
        )
        .unwrap();
        let j = 3 * grid.num_radii / 4;
        assert!(
            astig[j].mix_width > compact[j].mix_width,
            "astig {} vs compact {}",
            astig[j].mix_width,
            compact[j].mix_width
        );
    }

    #[test]
    fn angularly_elongated_psf_has_smaller_bandwidth() {
        // An artificial arc-shaped PSF (energy spread along the ring)
        // passes fewer rotational frequencies than the compact one.
        let n = 49;
        let grid = PolarGrid::for_image(n);
        let r_j = grid.num_radii / 2;
        let r_px = grid.radius(r_j);
        let mut arc = Array2::zeros((n, n));
        let c = n / 2;
        // Spread over +/- 20 degrees of the ring at radius r_px, relative
        // to the patch center.
        for step in -20..=20 {
            let ang = step as f64 * PI / 180.0;
            let x = c as f64 + r_px * ang.cos() - r_px;
            let y = c as f64 + r_px * ang.sin();
            crate::imgops::bilinear_scatter(&mut arc, x + r_px, y, 1.0);
        }
        let sum: f64 = arc.iter().sum();
        arc.mapv_inplace(|v| v / sum);
        let mut psfs = Vec::new();
        for j in 0..grid.num_radii {
            let img = if j == r_j {
                arc.clone()
            } else {
                let mut d = Array2::zeros((n, n));
                d[[c, c]] = 1.0;
                d
            };
            psfs.push(Psf::new(img, grid.normalized_radius(j)).unwrap());
        }
        let stack = PsfRadialStack::new(psfs, grid.clone()).unwrap();
        let arc_metrics = psf_metrics(&stack, &grid).unwrap();

        let cfg = light_cfg(48);
        let g48 = PolarGrid::for_image(48);
        let compact = psf_metrics(
            &synth_radial_psfs(&SeidelCoeffs::default(), &g48, &cfg).unwrap(),
            &g48,
        )
        .unwrap();
        let j48 = g48.num_radii / 2;
        assert!(
            arc_metrics[r_j].bandwidth < compact[j48].bandwidth,
            "arc {} vs compact {}",
            arc_metrics[r_j].bandwidth,
            compact[j48].bandwidth
        );
    }

    #[test]
    fn mix_width_monotone_in_field_curvature() {
        // Field curvature defocuses off-axis PSFs, growing their radial
        // footprint: the measured mix width must not decrease over the
        // sweep 0 to 2 waves.
        let n = 32;
        let grid = PolarGrid::for_image(n);
        let cfg = light_cfg(n);
        let j = 3 * grid.num_radii / 4;
        let mut last = 0.0;
        for step in 0..5 {
            let wf = 0.5 * step as f64;
            let stack =
                synth_radial_psfs(&SeidelCoeffs::new(0.0, 0.0, 0.0, wf, 0.0), &grid, &cfg).unwrap();
            let metrics = psf_metrics(&stack, &grid).unwrap();
            assert!(
                metrics[j].mix_width >= last,
                "mix width decreased at wf={wf}: {} < {last}",
                metrics[j].mix_width
            );
            last = metrics[j].mix_width;
        }
    }

    #[test]
    fn psf_metrics_rejects_zero_stack() {
        let grid = PolarGrid::for_image(16);
        // A PSF with zero intensity cannot be constructed, so degenerate
        // input is exercised through a stack whose canvas lands outside
        // every ring: a 1x1 patch at radius beyond coverage is impossible
        // too. The degenerate path is covered by construction rules;
        // here we check metrics on a healthy stack stay finite.
        let cfg = light_cfg(16);
        let stack = synth_radial_psfs(&SeidelCoeffs::default(), &grid, &cfg).unwrap();
        let metrics = psf_metrics(&stack, &grid).unwrap();
        for m in metrics {
            assert!(m.bandwidth.is_finite() && m.mix_width.is_finite());
            assert!(m.bandwidth <= grid.num_angles as f64 / 2.0);
            assert!(m.mix_width <= grid.num_radii as f64);
        }
    }
}

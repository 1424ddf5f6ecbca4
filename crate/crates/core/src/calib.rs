//! Single-shot aberration calibration: detect point sources in a bead
//! image and fit the five Seidel coefficients so the synthetic PSFs match
//! the measured ones at their field positions.
//!
//! The fit minimizes sum_j || d_j - n(rot_{theta_j}(h(omega, r_j))) ||^2
//! over the coefficients, where d_j is the unit-sum-normalized measured
//! patch, h the synthetic PSF at the patch's field radius, rot the
//! rotation to the patch's field angle, and n(.) unit-sum normalization
//! (the comparison is scale invariant so bead brightness cannot bias the
//! fit). Gradients are analytic through the whole chain: the pupil-to-
//! field transform is linear and self-transpose, so one extra transform
//! per patch per iteration prices all five partials.

use crate::error::{RdmError, Result};
use crate::fft::centered_inverse2;
use crate::imgops::{
    all_finite, crop_center, crop_center_adjoint, rotate_about_center, rotate_about_center_adjoint,
};
use crate::optim::Adam;
use crate::seidel::{pupil, pupil_field, wavefront_partials, OpticalConfig, SeidelCoeffs};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Detection thresholds and patch geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Peak threshold as a fraction of the brightest background-subtracted
    /// pixel.
    pub threshold_rel: f64,
    /// Minimum separation between accepted peaks, in pixels.
    pub min_separation: f64,
    /// Side of the extracted patch; odd so the center is a pixel.
    pub patch_size: usize,
    /// Radius of the centroiding window around each peak.
    pub centroid_radius: usize,
    /// Zero out patch values below this fraction of the patch maximum
    /// after background subtraction (0 disables).
    pub denoise_rel: f64,
    /// Optical axis; defaults to the image center.
    pub optical_center: Option<(f64, f64)>,
    /// Field radius in pixels mapping to normalized radius 1; defaults to
    /// the distance from the center to the image corner.
    pub fov_radius_px: Option<f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold_rel: 0.2,
            min_separation: 8.0,
            patch_size: 63,
            centroid_radius: 5,
            denoise_rel: 0.0,
            optical_center: None,
            fov_radius_px: None,
        }
    }
}

/// One detected point source: its normalized patch and field position.
#[derive(Debug, Clone)]
pub struct SourcePatch {
    pub patch: Array2<f64>,
    /// Sub-pixel source location (x, y) in image coordinates.
    pub center: (f64, f64),
    /// Normalized field radius in [0, 1].
    pub field_radius: f64,
    /// Field angle in radians.
    pub field_angle: f64,
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub patches: Vec<SourcePatch>,
    /// Count of sources dropped because their patches overlapped a
    /// brighter one.
    pub dropped_overlapping: usize,
}

/// Find point sources: background-subtracted local maxima above threshold,
/// deduplicated by separation, centroided to sub-pixel precision, cropped
/// to patch_size, and normalized.
pub fn detect_sources(calib: &Array2<f64>, cfg: &DetectionConfig) -> Result<DetectionResult> {
    if !all_finite(calib) {
        return Err(RdmError::NonFinite("calibration image"));
    }
    if cfg.patch_size % 2 == 0 {
        return Err(RdmError::InvalidArgument(
            "patch_size must be odd so the source sits on a pixel".into(),
        ));
    }
    let (rows, cols) = calib.dim();
    let bg = median(calib.iter().cloned().collect());
    let d = calib.map(|&v| (v - bg).max(0.0));
    let max_d = d.iter().cloned().fold(0.0f64, f64::max);
    if max_d <= 0.0 {
        return Err(RdmError::EmptyCalibration);
    }
    let threshold = cfg.threshold_rel * max_d;

    // Local maxima over the 8-neighborhood, above threshold.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for y in 1..rows - 1 {
        for x in 1..cols - 1 {
            let v = d[[y, x]];
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let nv = d[[(y as i64 + dy) as usize, (x as i64 + dx) as usize]];
                    if nv > v || (nv == v && (dy, dx) < (0, 0)) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((v, y, x));
            }
        }
    }
    if candidates.is_empty() {
        return Err(RdmError::EmptyCalibration);
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));

    // Greedy separation dedup, brightest first.
    let mut peaks: Vec<(f64, usize, usize)> = Vec::new();
    for (v, y, x) in candidates {
        let far_enough = peaks.iter().all(|&(_, py, px)| {
            let dy = py as f64 - y as f64;
            let dx = px as f64 - x as f64;
            (dx * dx + dy * dy).sqrt() >= cfg.min_separation
        });
        if far_enough {
            peaks.push((v, y, x));
        }
    }

    // Patch-overlap pruning: the dimmer of two overlapping patches goes.
    let half = (cfg.patch_size / 2) as f64;
    let mut kept: Vec<(f64, usize, usize)> = Vec::new();
    let mut dropped_overlapping = 0;
    for (v, y, x) in peaks {
        let overlaps = kept.iter().any(|&(_, ky, kx)| {
            (ky as f64 - y as f64).abs() < half && (kx as f64 - x as f64).abs() < half
        });
        if overlaps {
            dropped_overlapping += 1;
        } else {
            kept.push((v, y, x));
        }
    }

    let center = cfg
        .optical_center
        .unwrap_or(((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0));
    let fov_px = cfg.fov_radius_px.unwrap_or_else(|| {
        let hx = (cols as f64 - 1.0) / 2.0;
        let hy = (rows as f64 - 1.0) / 2.0;
        (hx * hx + hy * hy).sqrt()
    });

    let mut patches = Vec::with_capacity(kept.len());
    for (_, py, px) in kept {
        // Center of mass inside a small window around the peak.
        let r = cfg.centroid_radius as i64;
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = py as i64 + dy;
                let xx = px as i64 + dx;
                if yy < 0 || yy >= rows as i64 || xx < 0 || xx >= cols as i64 {
                    continue;
                }
                let w = d[[yy as usize, xx as usize]];
                sx += w * xx as f64;
                sy += w * yy as f64;
                sw += w;
            }
        }
        if sw <= 0.0 {
            continue;
        }
        let cx = sx / sw;
        let cy = sy / sw;

        // Extract the patch around the rounded centroid, zero padded at
        // the image border.
        let p = cfg.patch_size;
        let cpx = cx.round() as i64;
        let cpy = cy.round() as i64;
        let h = (p / 2) as i64;
        let mut patch = Array2::zeros((p, p));
        for yy in 0..p as i64 {
            for xx in 0..p as i64 {
                let sy_i = cpy - h + yy;
                let sx_i = cpx - h + xx;
                if sy_i >= 0 && sy_i < rows as i64 && sx_i >= 0 && sx_i < cols as i64 {
                    patch[[yy as usize, xx as usize]] = calib[[sy_i as usize, sx_i as usize]];
                }
            }
        }
        let mut patch = normalize_patch(&patch)?;
        if cfg.denoise_rel > 0.0 {
            let pmax = patch.iter().cloned().fold(0.0f64, f64::max);
            let cut = cfg.denoise_rel * pmax;
            patch.mapv_inplace(|v| if v < cut { 0.0 } else { v });
            let sum: f64 = patch.iter().sum();
            if sum <= 0.0 {
                return Err(RdmError::DegeneratePatch);
            }
            patch.mapv_inplace(|v| v / sum);
        }

        let dx = cx - center.0;
        let dy = cy - center.1;
        let r_px = (dx * dx + dy * dy).sqrt();
        patches.push(SourcePatch {
            patch,
            center: (cx, cy),
            field_radius: (r_px / fov_px).min(1.0),
            field_angle: dy.atan2(dx),
        });
    }
    if patches.is_empty() {
        return Err(RdmError::EmptyCalibration);
    }
    Ok(DetectionResult {
        patches,
        dropped_overlapping,
    })
}

/// Subtract the median background, clamp negatives to zero, and scale to
/// unit sum.
pub fn normalize_patch(patch: &Array2<f64>) -> Result<Array2<f64>> {
    if !all_finite(patch) {
        return Err(RdmError::NonFinite("patch"));
    }
    let bg = median(patch.iter().cloned().collect());
    let mut out = patch.map(|&v| (v - bg).max(0.0));
    let sum: f64 = out.iter().sum();
    if sum <= 0.0 {
        return Err(RdmError::DegeneratePatch);
    }
    out.mapv_inplace(|v| v / sum);
    Ok(out)
}

fn median(mut values: Vec<f64>) -> f64 {
    let mid = values.len() / 2;
    values.sort_by(f64::total_cmp);
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Optimizer settings for the coefficient fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    pub step: f64,
    pub max_iters: usize,
    /// Relative loss-change tolerance.
    pub stop_tol: f64,
    /// Number of random restarts; the best final loss wins.
    pub restarts: usize,
    /// Uniform initialization range for each coefficient, in waves.
    pub init_range: (f64, f64),
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            step: 0.05,
            max_iters: 300,
            stop_tol: 1e-7,
            restarts: 3,
            init_range: (0.0, 2.0),
            seed: 0,
        }
    }
}

/// Result of a coefficient fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub coeffs: SeidelCoeffs,
    pub per_iteration_loss: Vec<f64>,
    pub per_patch_residual: Vec<f64>,
    pub converged: bool,
    /// True when every source sat on the axis, leaving the field-dependent
    /// coefficients unconstrained (only sphere was fitted).
    pub off_axis_unconstrained: bool,
}

/// Fit the five Seidel coefficients to a set of detected patches by
/// adaptive-moment descent on the scale-invariant matching loss, with
/// random restarts.
pub fn fit_seidel(
    patches: &[SourcePatch],
    cfg: &OpticalConfig,
    settings: &FitSettings,
) -> Result<FitReport> {
    if patches.is_empty() {
        return Err(RdmError::EmptyCalibration);
    }
    cfg.validate()?;
    let p = patches[0].patch.nrows();
    if p != cfg.psf_side {
        return Err(RdmError::InvalidArgument(format!(
            "patch side {p} does not match cfg.psf_side {}",
            cfg.psf_side
        )));
    }
    for sp in patches {
        if sp.patch.dim() != (p, p) {
            return Err(RdmError::InvalidArgument("patch sizes differ".into()));
        }
    }
    // With every source on the axis the off-axis terms vanish from the
    // model; fit only sphere and flag the rest.
    let off_axis_unconstrained = patches.iter().all(|sp| sp.field_radius < 1e-2);

    // Normalized data patches.
    let data: Vec<Array2<f64>> = patches
        .iter()
        .map(|sp| {
            let sum: f64 = sp.patch.iter().sum();
            sp.patch.map(|&v| v / sum)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut best: Option<FitReport> = None;
    for _ in 0..settings.restarts.max(1) {
        let mut omega = [0.0f64; 5];
        for w in omega.iter_mut() {
            *w = rng.gen_range(settings.init_range.0..settings.init_range.1);
        }
        if off_axis_unconstrained {
            omega[1] = 0.0;
            omega[2] = 0.0;
            omega[3] = 0.0;
            omega[4] = 0.0;
        }
        let report = fit_once(
            &omega,
            patches,
            &data,
            cfg,
            settings,
            off_axis_unconstrained,
        )?;
        let min_loss = |r: &FitReport| {
            r.per_iteration_loss
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        };
        let better = match &best {
            None => true,
            Some(b) => min_loss(&report) < min_loss(b),
        };
        if better {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fit_once(
    init: &[f64; 5],
    patches: &[SourcePatch],
    data: &[Array2<f64>],
    cfg: &OpticalConfig,
    settings: &FitSettings,
    off_axis_unconstrained: bool,
) -> Result<FitReport> {
    let mut omega = *init;
    let mut opt = Adam::new(5, settings.step);
    let mut trace = Vec::with_capacity(settings.max_iters + 1);
    let mut converged = false;
    let mut residuals = vec![0.0; patches.len()];
    // The adaptive steps limit-cycle near flat minima at the step scale,
    // so the reported coefficients are the best-loss iterate, not the last.
    let mut best_omega = omega;
    let mut best_residuals = residuals.clone();
    let mut best_loss = f64::INFINITY;

    for iter in 0..=settings.max_iters {
        let coeffs = SeidelCoeffs::from_array(omega);
        let mut loss = 0.0;
        let mut grad = [0.0f64; 5];
        for (j, sp) in patches.iter().enumerate() {
            let (l, g, res) = patch_loss_grad(&coeffs, sp, &data[j], cfg)?;
            loss += l;
            residuals[j] = res;
            for k in 0..5 {
                grad[k] += g[k];
            }
        }
        if !loss.is_finite() {
            return Err(RdmError::FitDiverged {
                iteration: iter,
                loss_trace: trace,
            });
        }
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_omega = omega;
            best_residuals.copy_from_slice(&residuals);
        }
        if iter > 0 {
            let prev = trace[iter - 1];
            if (prev - loss).abs() <= settings.stop_tol * prev.abs().max(1e-30) {
                converged = true;
                break;
            }
        }
        if iter == settings.max_iters {
            break;
        }
        if off_axis_unconstrained {
            for g in grad.iter_mut().skip(1) {
                *g = 0.0;
            }
        }
        opt.update(&mut omega, &grad);
    }

    Ok(FitReport {
        coeffs: SeidelCoeffs::from_array(best_omega),
        per_iteration_loss: trace,
        per_patch_residual: best_residuals,
        converged,
        off_axis_unconstrained,
    })
}

/// Loss, coefficient gradient, and residual norm for one patch.
///
/// Forward chain: pupil -> centered transform -> squared magnitude ->
/// crop -> rotate to the patch angle -> unit-sum normalize -> L2 against
/// the data. The backward pass walks the exact transposes; the centered
/// transform is its own plain transpose, so the pupil-domain pairing
/// needs a single extra transform.
fn patch_loss_grad(
    coeffs: &SeidelCoeffs,
    sp: &SourcePatch,
    data: &Array2<f64>,
    cfg: &OpticalConfig,
) -> Result<(f64, [f64; 5], f64)> {
    let l = cfg.pupil_samples;
    let q = cfg.fft_size();
    let side = cfg.psf_side;
    let p = pupil(coeffs, sp.field_radius, cfg)?;
    let field = pupil_field(&p, cfg)?;
    let full = Array2::from_shape_fn((q, q), |(y, x)| field[[y, x]].norm_sqr());
    let h = crop_center(&full, side);
    let rot = if sp.field_angle == 0.0 {
        h.clone()
    } else {
        rotate_about_center(&h, sp.field_angle)
    };
    let sum: f64 = rot.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(RdmError::DegeneratePupil);
    }
    let normalized = rot.map(|&v| v / sum);

    let mut loss = 0.0;
    let mut g_norm = Array2::zeros((side, side));
    for ((y, x), nv) in normalized.indexed_iter() {
        let r = nv - data[[y, x]];
        loss += r * r;
        g_norm[[y, x]] = 2.0 * r;
    }
    let residual_norm = loss.sqrt();

    // d loss / d rot through the unit-sum normalization.
    let dot: f64 = g_norm
        .iter()
        .zip(rot.iter())
        .map(|(g, r)| g * r)
        .sum::<f64>()
        / (sum * sum);
    let g_rot = Array2::from_shape_fn((side, side), |(y, x)| g_norm[[y, x]] / sum - dot);

    // Transpose of rotation and crop.
    let g_h = if sp.field_angle == 0.0 {
        g_rot
    } else {
        rotate_about_center_adjoint(&g_rot, sp.field_angle)
    };
    let g_full = crop_center_adjoint(&g_h, q);

    // d|U|^2 pairing: A = g_full .* conj(U); the centered transform is its
    // own transpose, so the pupil-domain sensitivity is its transform.
    let a = Array2::from_shape_fn((q, q), |(y, x)| {
        field[[y, x]].conj() * g_full[[y, x]]
    });
    let w_sens = centered_inverse2(&a);

    let partials = wavefront_partials(sp.field_radius, l);
    let off = (q - l) / 2;
    let mut grad = [0.0f64; 5];
    for ti in 0..l {
        for si in 0..l {
            let pv = p[[ti, si]];
            if pv.re == 0.0 && pv.im == 0.0 {
                continue;
            }
            let pairing = pv * w_sens[[ti + off, si + off]];
            // d p / d omega_k = p * i * 2 pi * B_k; take 2 Re of the pairing.
            let base = 2.0 * (Complex64::new(0.0, 2.0 * PI) * pairing).re;
            for (k, partial) in partials.iter().enumerate() {
                grad[k] += base * partial[[ti, si]];
            }
        }
    }
    Ok((loss, grad, residual_norm))
}

//! Pupil functions and synthetic PSFs from the five primary Seidel
//! aberration coefficients.
//!
//! A rotationally symmetric system is characterized by a generalized pupil
//! function whose phase is the fourth-order wavefront polynomial
//!
//! ```text
//! w(s, t; r) = ws (s^2+t^2)^2 + wc (s^2+t^2) s r + wa s^2 r^2
//!            + wf (s^2+t^2) r^2 + wd s r^3      [waves]
//! ```
//!
//! with (s, t) pupil coordinates on [-1, 1]^2 and r the normalized field
//! radius of the source. The PSF is the squared magnitude of the centered
//! inverse Fourier transform of the pupil, zero-padded so the PSF sample
//! pitch equals the camera pixel pitch, cropped to `psf_side`, and
//! normalized to unit sum. Canonical PSFs are generated for a source on
//! the +x field axis; off-axis PSFs at angle theta are rotations of those.

use crate::error::{RdmError, Result};
use crate::fft::centered_inverse2;
use crate::imgops::all_finite;
use crate::polar::PolarGrid;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The five primary aberration coefficients, in waves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeidelCoeffs {
    pub sphere: f64,
    pub coma: f64,
    pub astigmatism: f64,
    pub field_curvature: f64,
    pub distortion: f64,
}

impl SeidelCoeffs {
    pub fn new(sphere: f64, coma: f64, astigmatism: f64, field_curvature: f64, distortion: f64) -> Self {
        SeidelCoeffs {
            sphere,
            coma,
            astigmatism,
            field_curvature,
            distortion,
        }
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.sphere,
            self.coma,
            self.astigmatism,
            self.field_curvature,
            self.distortion,
        ]
    }

    /// Euclidean norm of the field-dependent coefficients (everything except
    /// sphere). This is the aberration magnitude that controls how strongly
    /// the PSF varies across the field.
    pub fn off_axis_norm(&self) -> f64 {
        (self.coma * self.coma
            + self.astigmatism * self.astigmatism
            + self.field_curvature * self.field_curvature
            + self.distortion * self.distortion)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Physical and sampling parameters of the pupil-to-PSF mapping.
/// Lengths are in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    pub wavelength: f64,
    pub pupil_radius: f64,
    pub pupil_to_image_distance: f64,
    /// Pupil samples per axis (L). Even and >= psf_side.
    pub pupil_samples: usize,
    /// Side of the generated PSF patch, in pixels.
    pub psf_side: usize,
    pub pixel_pitch: f64,
    /// Object-plane radius corresponding to normalized field radius 1
    /// (by default the distance from the optical axis to the image corner).
    pub fov_radius: f64,
}

impl OpticalConfig {
    /// Desk-scale defaults for an n x n image: PSF patches as large as the
    /// image, pupil sampled at 4x the patch side, and physical parameters
    /// chosen so the FFT pad ratio lambda d / (2 R pitch) is exactly 2
    /// (Nyquist-sampled diffraction PSF).
    pub fn desk_default(n: usize) -> Self {
        let pitch = 1.25e-6;
        OpticalConfig {
            wavelength: 0.5e-6,
            pupil_radius: 1.0e-3,
            pupil_to_image_distance: 10.0e-3,
            pupil_samples: 4 * n,
            psf_side: n,
            pixel_pitch: pitch,
            fov_radius: (n as f64 - 1.0) / 2.0 * std::f64::consts::SQRT_2 * pitch,
        }
    }

    /// Lighter sampling (L = psf_side) for large brute-force runs; same
    /// physics, coarser pupil grid.
    pub fn desk_light(n: usize) -> Self {
        let mut cfg = Self::desk_default(n);
        cfg.pupil_samples = n;
        cfg
    }

    /// Pad ratio of the pupil FFT implied by the physical parameters.
    pub fn pad_ratio(&self) -> f64 {
        self.wavelength * self.pupil_to_image_distance / (2.0 * self.pupil_radius * self.pixel_pitch)
    }

    /// FFT grid side: the padded size that makes the PSF sample pitch equal
    /// the pixel pitch, rounded to the nearest even integer.
    pub fn fft_size(&self) -> usize {
        let q = (self.pad_ratio() * self.pupil_samples as f64).round() as usize;
        q + q % 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.wavelength,
            self.pupil_radius,
            self.pupil_to_image_distance,
            self.pixel_pitch,
            self.fov_radius,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(RdmError::InvalidArgument(
                "optical config requires positive finite physical quantities".into(),
            ));
        }
        if self.pupil_samples % 2 != 0 || self.pupil_samples < self.psf_side {
            return Err(RdmError::InvalidArgument(format!(
                "pupil_samples must be even and >= psf_side ({} vs {})",
                self.pupil_samples, self.psf_side
            )));
        }
        if self.psf_side == 0 {
            return Err(RdmError::InvalidArgument("psf_side must be positive".into()));
        }
        if self.fft_size() < self.pupil_samples {
            return Err(RdmError::InvalidArgument(format!(
                "pad ratio {} < 1: the PSF would be undersampled at this pixel pitch",
                self.pad_ratio()
            )));
        }
        Ok(())
    }
}

/// A synthetic PSF patch: nonnegative, unit-sum intensity with the ideal
/// image point at pixel (psf_side/2, psf_side/2).
#[derive(Debug, Clone)]
pub struct Psf {
    intensity: Array2<f64>,
    source_radius: f64,
}

impl Psf {
    pub fn new(intensity: Array2<f64>, source_radius: f64) -> Result<Self> {
        if !all_finite(&intensity) {
            return Err(RdmError::NonFinite("psf intensity"));
        }
        if intensity.iter().any(|&v| v < 0.0) {
            return Err(RdmError::InvalidArgument("psf intensity must be nonnegative".into()));
        }
        if intensity.iter().sum::<f64>() <= 0.0 {
            return Err(RdmError::DegeneratePupil);
        }
        if !(0.0..=1.0).contains(&source_radius) {
            return Err(RdmError::InvalidArgument(format!(
                "source radius {source_radius} outside [0, 1]"
            )));
        }
        Ok(Psf {
            intensity,
            source_radius,
        })
    }

    pub fn intensity(&self) -> &Array2<f64> {
        &self.intensity
    }

    pub fn source_radius(&self) -> f64 {
        self.source_radius
    }

    pub fn side(&self) -> usize {
        self.intensity.nrows()
    }
}

/// Canonical PSFs for every radius of a polar grid, all on the +x field axis.
#[derive(Debug, Clone)]
pub struct PsfRadialStack {
    psfs: Vec<Psf>,
    grid: PolarGrid,
}

impl PsfRadialStack {
    pub fn new(psfs: Vec<Psf>, grid: PolarGrid) -> Result<Self> {
        if psfs.len() != grid.num_radii {
            return Err(RdmError::InvalidArgument(format!(
                "stack has {} PSFs for a grid with {} radii",
                psfs.len(),
                grid.num_radii
            )));
        }
        for (j, pair) in psfs.windows(2).enumerate() {
            if pair[1].source_radius() <= pair[0].source_radius() {
                return Err(RdmError::InvalidArgument(format!(
                    "stack radii must be strictly increasing (index {j})"
                )));
            }
        }
        for (j, psf) in psfs.iter().enumerate() {
            if (psf.source_radius() - grid.normalized_radius(j)).abs() > 1e-9 {
                return Err(RdmError::InvalidArgument(format!(
                    "PSF {j} radius {} does not match grid radius {}",
                    psf.source_radius(),
                    grid.normalized_radius(j)
                )));
            }
        }
        Ok(PsfRadialStack { psfs, grid })
    }

    pub fn psfs(&self) -> &[Psf] {
        &self.psfs
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.grid
    }
}

/// Wavefront aberration in waves over an l x l pupil grid for a source at
/// normalized field radius `r`.
pub fn wavefront(coeffs: &SeidelCoeffs, r: f64, l: usize) -> Result<Array2<f64>> {
    check_radius(r)?;
    if !coeffs.is_finite() {
        return Err(RdmError::NonFinite("seidel coefficients"));
    }
    let mut w = Array2::zeros((l, l));
    for (ti, row) in pupil_axis(l).iter().enumerate() {
        let t = *row;
        for (si, col) in pupil_axis(l).iter().enumerate() {
            let s = *col;
            let u = s * s + t * t;
            w[[ti, si]] = coeffs.sphere * u * u
                + coeffs.coma * u * s * r
                + coeffs.astigmatism * s * s * r * r
                + coeffs.field_curvature * u * r * r
                + coeffs.distortion * s * r * r * r;
        }
    }
    Ok(w)
}

/// Partial derivatives of the wavefront with respect to each coefficient,
/// in the order (sphere, coma, astigmatism, field curvature, distortion).
pub(crate) fn wavefront_partials(r: f64, l: usize) -> [Array2<f64>; 5] {
    let axis = pupil_axis(l);
    let mut out: [Array2<f64>; 5] = std::array::from_fn(|_| Array2::zeros((l, l)));
    for (ti, &t) in axis.iter().enumerate() {
        for (si, &s) in axis.iter().enumerate() {
            let u = s * s + t * t;
            out[0][[ti, si]] = u * u;
            out[1][[ti, si]] = u * s * r;
            out[2][[ti, si]] = s * s * r * r;
            out[3][[ti, si]] = u * r * r;
            out[4][[ti, si]] = s * r * r * r;
        }
    }
    out
}

/// Pupil coordinates: l samples spanning [-1, 1] inclusive, mirror-exact
/// about the patch center so even aberrations give exactly symmetric PSFs.
fn pupil_axis(l: usize) -> Vec<f64> {
    (0..l).map(|k| -1.0 + 2.0 * k as f64 / (l as f64 - 1.0)).collect()
}

/// Generalized pupil function: unit amplitude inside the unit disk, zero
/// outside, with phase 2*pi times the wavefront (waves to radians).
pub fn pupil(coeffs: &SeidelCoeffs, r: f64, cfg: &OpticalConfig) -> Result<Array2<Complex64>> {
    cfg.validate()?;
    let l = cfg.pupil_samples;
    let w = wavefront(coeffs, r, l)?;
    let axis = pupil_axis(l);
    let mut p = Array2::from_elem((l, l), Complex64::new(0.0, 0.0));
    for (ti, &t) in axis.iter().enumerate() {
        for (si, &s) in axis.iter().enumerate() {
            if s * s + t * t <= 1.0 {
                p[[ti, si]] = Complex64::from_polar(1.0, 2.0 * PI * w[[ti, si]]);
            }
        }
    }
    Ok(p)
}

/// Complex image-plane field of a pupil: the pupil zero-embedded into the
/// padded FFT grid and transformed with the centered inverse transform.
/// The ideal image point lies at pixel (Q/2, Q/2) of the result.
pub(crate) fn pupil_field(p: &Array2<Complex64>, cfg: &OpticalConfig) -> Result<Array2<Complex64>> {
    let l = cfg.pupil_samples;
    if p.dim() != (l, l) {
        return Err(RdmError::InvalidArgument(format!(
            "pupil {:?} does not match pupil_samples {l}",
            p.dim()
        )));
    }
    if p.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(RdmError::NonFinite("pupil"));
    }
    if p.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(RdmError::DegeneratePupil);
    }
    let q = cfg.fft_size();
    let off = (q - l) / 2;
    let mut padded = Array2::from_elem((q, q), Complex64::new(0.0, 0.0));
    for y in 0..l {
        for x in 0..l {
            padded[[y + off, x + off]] = p[[y, x]];
        }
    }
    Ok(centered_inverse2(&padded))
}

/// Intensity PSF of a pupil: squared magnitude of the image-plane field,
/// cropped to `psf_side` and normalized to unit sum.
pub fn psf_from_pupil(p: &Array2<Complex64>, cfg: &OpticalConfig, source_radius: f64) -> Result<Psf> {
    cfg.validate()?;
    check_radius(source_radius)?;
    let field = pupil_field(p, cfg)?;
    let q = field.nrows();
    let side = cfg.psf_side;
    let off = q / 2 - side / 2;
    let mut intensity = Array2::zeros((side, side));
    for y in 0..side {
        for x in 0..side {
            intensity[[y, x]] = field[[y + off, x + off]].norm_sqr();
        }
    }
    let sum: f64 = intensity.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(RdmError::DegeneratePupil);
    }
    intensity.mapv_inplace(|v| v / sum);
    Psf::new(intensity, source_radius)
}

/// Pupil synthesis and transform in one step.
pub fn psf_at_radius(coeffs: &SeidelCoeffs, r: f64, cfg: &OpticalConfig) -> Result<Psf> {
    let p = pupil(coeffs, r, cfg)?;
    psf_from_pupil(&p, cfg, r)
}

/// One canonical PSF per grid radius, generated along the +x field axis.
pub fn synth_radial_psfs(
    coeffs: &SeidelCoeffs,
    grid: &PolarGrid,
    cfg: &OpticalConfig,
) -> Result<PsfRadialStack> {
    cfg.validate()?;
    let mut psfs = Vec::with_capacity(grid.num_radii);
    for j in 0..grid.num_radii {
        psfs.push(psf_at_radius(coeffs, grid.normalized_radius(j), cfg)?);
    }
    PsfRadialStack::new(psfs, grid.clone())
}

fn check_radius(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(RdmError::InvalidArgument(format!(
            "normalized field radius {r} outside [0, 1]"
        )));
    }
    Ok(())
}

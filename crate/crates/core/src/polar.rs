//! Resampling between Cartesian images and (angle x radius) polar grids.
//!
//! The polar grid is the substrate for every ring-wise algorithm in this
//! crate: rings of a resampled image are circularly convolved per radius,
//! so the fidelity of `to_polar`/`from_polar` bounds the fidelity of the
//! whole forward model. Both directions are bilinear gathers, which keeps
//! them linear in the intensities and gives each an exact transpose
//! (`to_polar_adjoint`/`from_polar_adjoint`) — required by the adjoint of
//! the blur operator during deconvolution.

use crate::error::{RdmError, Result};
use crate::imgops::{all_finite, bilinear, bilinear_scatter};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Whether a grid built for an n x n image reaches the image corners or
/// only the inscribed disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coverage {
    /// max radius = half diagonal; every pixel of the image lies on the grid.
    Corners,
    /// max radius = (n-1)/2; pixels beyond the inscribed disk are dropped.
    Inscribed,
}

/// Uniform polar sampling grid: `num_angles` (M) angles over [0, 2pi) by
/// `num_radii` (K) radii over [0, max_radius], tied to an `image_side` x
/// `image_side` pixel frame with the optical axis at `center` (x, y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub num_angles: usize,
    pub num_radii: usize,
    pub max_radius: f64,
    pub center: (f64, f64),
    pub image_side: usize,
}

impl PolarGrid {
    pub fn new(
        num_angles: usize,
        num_radii: usize,
        max_radius: f64,
        center: (f64, f64),
        image_side: usize,
    ) -> Result<Self> {
        if num_angles < 4 {
            return Err(RdmError::InvalidGrid(format!(
                "need at least 4 angles, got {num_angles}"
            )));
        }
        if num_radii < 1 {
            return Err(RdmError::InvalidGrid("need at least 1 radius".into()));
        }
        if !(max_radius.is_finite() && max_radius > 0.0) {
            return Err(RdmError::InvalidGrid(format!("bad max_radius {max_radius}")));
        }
        let n = image_side as f64;
        if !(center.0.is_finite() && center.1.is_finite())
            || center.0 < 0.0
            || center.0 > n - 1.0
            || center.1 < 0.0
            || center.1 > n - 1.0
        {
            return Err(RdmError::InvalidGrid(format!(
                "center {center:?} outside the {image_side}x{image_side} image"
            )));
        }
        Ok(PolarGrid {
            num_angles,
            num_radii,
            max_radius,
            center,
            image_side,
        })
    }

    /// Default grid for an n x n image: corner coverage, radii spaced about
    /// one pixel apart (K = ceil(n * sqrt(2) / 2)), and the angle count the
    /// smallest power of two >= 4K so the outermost arc step stays near one
    /// pixel while ring FFTs stay fast.
    pub fn for_image(n: usize) -> Self {
        Self::for_image_with(n, Coverage::Corners)
    }

    pub fn for_image_with(n: usize, coverage: Coverage) -> Self {
        assert!(n >= 2, "image too small for a polar grid");
        let half = (n as f64 - 1.0) / 2.0;
        let (max_radius, num_radii) = match coverage {
            Coverage::Corners => (half * std::f64::consts::SQRT_2, ((n as f64) * std::f64::consts::SQRT_2 / 2.0).ceil() as usize),
            Coverage::Inscribed => (half, (n as f64 / 2.0).ceil() as usize),
        };
        let num_angles = (4 * num_radii).next_power_of_two().max(4);
        PolarGrid {
            num_angles,
            num_radii,
            max_radius,
            center: (half, half),
            image_side: n,
        }
    }

    pub fn radial_spacing(&self) -> f64 {
        if self.num_radii > 1 {
            self.max_radius / (self.num_radii - 1) as f64
        } else {
            self.max_radius
        }
    }

    pub fn angular_spacing(&self) -> f64 {
        2.0 * PI / self.num_angles as f64
    }

    pub fn radius(&self, j: usize) -> f64 {
        j as f64 * self.radial_spacing()
    }

    pub fn angle(&self, i: usize) -> f64 {
        i as f64 * self.angular_spacing()
    }

    /// Source radius of ring j as a fraction of the grid's maximum radius.
    pub fn normalized_radius(&self, j: usize) -> f64 {
        (self.radius(j) / self.max_radius).min(1.0)
    }

    /// Quadrature constants c_j for the radial integral of the ring
    /// superposition: the polar area element r dr dtheta discretized per
    /// ring. Interior rings take the midpoint weight r_j * dr * dtheta;
    /// the r = 0 ring takes its disc's exact contribution dr^2/8 * dtheta
    /// so the center is neither dropped nor double counted. With these
    /// constants a stack of unit point responses reproduces the identity.
    pub fn radial_weights(&self) -> Vec<f64> {
        let dr = self.radial_spacing();
        let dth = self.angular_spacing();
        (0..self.num_radii)
            .map(|j| {
                if j == 0 {
                    dth * dr * dr / 8.0
                } else {
                    dth * self.radius(j) * dr
                }
            })
            .collect()
    }
}

/// An image sampled on a polar grid: `samples[[i, j]]` is angle i, radius j.
#[derive(Debug, Clone)]
pub struct PolarImage {
    samples: Array2<f64>,
    grid: PolarGrid,
}

impl PolarImage {
    pub fn new(samples: Array2<f64>, grid: PolarGrid) -> Result<Self> {
        if samples.dim() != (grid.num_angles, grid.num_radii) {
            return Err(RdmError::InvalidArgument(format!(
                "polar samples {:?} do not match grid {}x{}",
                samples.dim(),
                grid.num_angles,
                grid.num_radii
            )));
        }
        if !all_finite(&samples) {
            return Err(RdmError::NonFinite("polar samples"));
        }
        Ok(PolarImage { samples, grid })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.grid
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }
}

/// Resample a Cartesian image onto the polar grid. Sample (i, j) reads the
/// image bilinearly at center + r_j (cos theta_i, sin theta_i); positions
/// outside the image footprint contribute zero.
pub fn to_polar(img: &Array2<f64>, grid: &PolarGrid) -> Result<PolarImage> {
    validate_image(img, grid)?;
    let samples = to_polar_raw(img, grid);
    Ok(PolarImage {
        samples,
        grid: grid.clone(),
    })
}

pub(crate) fn to_polar_raw(img: &Array2<f64>, grid: &PolarGrid) -> Array2<f64> {
    let (cx, cy) = grid.center;
    let mut samples = Array2::zeros((grid.num_angles, grid.num_radii));
    for i in 0..grid.num_angles {
        let (sin_t, cos_t) = grid.angle(i).sin_cos();
        for j in 0..grid.num_radii {
            let r = grid.radius(j);
            samples[[i, j]] = bilinear(img, cx + r * cos_t, cy + r * sin_t);
        }
    }
    samples
}

/// Transpose of [`to_polar`]: scatter polar samples back into an image of
/// side `grid.image_side` with the same bilinear weights.
pub fn to_polar_adjoint(pimg: &PolarImage, grid: &PolarGrid) -> Result<Array2<f64>> {
    check_same_grid(pimg.grid(), grid)?;
    let n = grid.image_side;
    let (cx, cy) = grid.center;
    let mut img = Array2::zeros((n, n));
    for i in 0..grid.num_angles {
        let (sin_t, cos_t) = grid.angle(i).sin_cos();
        for j in 0..grid.num_radii {
            let v = pimg.samples[[i, j]];
            if v == 0.0 {
                continue;
            }
            let r = grid.radius(j);
            bilinear_scatter(&mut img, cx + r * cos_t, cy + r * sin_t, v);
        }
    }
    Ok(img)
}

/// Resample a polar image back onto an n x n Cartesian frame. Each pixel
/// reads the polar samples bilinearly at its own (rho, phi), periodic in
/// the angle; pixels beyond max_radius are zero.
pub fn from_polar(pimg: &PolarImage, n: usize) -> Result<Array2<f64>> {
    let grid = &pimg.grid;
    if n != grid.image_side {
        return Err(RdmError::InvalidArgument(format!(
            "requested side {n} does not match the grid's image side {}",
            grid.image_side
        )));
    }
    Ok(from_polar_raw(&pimg.samples, grid))
}

pub(crate) fn from_polar_raw(samples: &Array2<f64>, grid: &PolarGrid) -> Array2<f64> {
    let n = grid.image_side;
    let (cx, cy) = grid.center;
    let m = grid.num_angles;
    let k = grid.num_radii;
    let dth = grid.angular_spacing();
    let dr = grid.radial_spacing();
    let mut img = Array2::zeros((n, n));
    for y in 0..n {
        for x in 0..n {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let rho = (dx * dx + dy * dy).sqrt();
            if rho > grid.max_radius + 1e-9 {
                continue;
            }
            let mut phi = dy.atan2(dx);
            if phi < 0.0 {
                phi += 2.0 * PI;
            }
            let a = phi / dth;
            let j = (rho / dr).min((k - 1) as f64);
            let a0 = a.floor() as usize % m;
            let a1 = (a0 + 1) % m;
            let fa = a - a.floor();
            let j0 = j.floor() as usize;
            let (j0, j1, fj) = if j0 >= k - 1 {
                (k - 1, k - 1, 0.0)
            } else {
                (j0, j0 + 1, j - j0 as f64)
            };
            img[[y, x]] = (1.0 - fa) * ((1.0 - fj) * samples[[a0, j0]] + fj * samples[[a0, j1]])
                + fa * ((1.0 - fj) * samples[[a1, j0]] + fj * samples[[a1, j1]]);
        }
    }
    img
}

/// Transpose of [`from_polar`]: scatter image pixels into polar bins.
pub fn from_polar_adjoint(img: &Array2<f64>, grid: &PolarGrid) -> Result<PolarImage> {
    validate_image_shape(img, grid)?;
    let n = grid.image_side;
    let (cx, cy) = grid.center;
    let m = grid.num_angles;
    let k = grid.num_radii;
    let dth = grid.angular_spacing();
    let dr = grid.radial_spacing();
    let mut samples = Array2::zeros((m, k));
    for y in 0..n {
        for x in 0..n {
            let v = img[[y, x]];
            if v == 0.0 {
                continue;
            }
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let rho = (dx * dx + dy * dy).sqrt();
            if rho > grid.max_radius + 1e-9 {
                continue;
            }
            let mut phi = dy.atan2(dx);
            if phi < 0.0 {
                phi += 2.0 * PI;
            }
            let a = phi / dth;
            let j = (rho / dr).min((k - 1) as f64);
            let a0 = a.floor() as usize % m;
            let a1 = (a0 + 1) % m;
            let fa = a - a.floor();
            let j0 = j.floor() as usize;
            let (j0, j1, fj) = if j0 >= k - 1 {
                (k - 1, k - 1, 0.0)
            } else {
                (j0, j0 + 1, j - j0 as f64)
            };
            samples[[a0, j0]] += (1.0 - fa) * (1.0 - fj) * v;
            samples[[a0, j1]] += (1.0 - fa) * fj * v;
            samples[[a1, j0]] += fa * (1.0 - fj) * v;
            samples[[a1, j1]] += fa * fj * v;
        }
    }
    Ok(PolarImage {
        samples,
        grid: grid.clone(),
    })
}

fn validate_image_shape(img: &Array2<f64>, grid: &PolarGrid) -> Result<()> {
    let n = grid.image_side;
    if img.dim() != (n, n) {
        return Err(RdmError::InvalidArgument(format!(
            "image {:?} does not match the grid's {n}x{n} frame",
            img.dim()
        )));
    }
    Ok(())
}

fn validate_image(img: &Array2<f64>, grid: &PolarGrid) -> Result<()> {
    validate_image_shape(img, grid)?;
    if !all_finite(img) {
        return Err(RdmError::NonFinite("image"));
    }
    Ok(())
}

pub(crate) fn check_same_grid(a: &PolarGrid, b: &PolarGrid) -> Result<()> {
    if a != b {
        return Err(RdmError::InvalidArgument(
            "polar grids do not match".into(),
        ));
    }
    Ok(())
}

//! FFT plumbing shared by the polar-spectral and Fourier-optics code.
//!
//! Two transform conventions coexist here and are kept strictly apart:
//!
//! * Image-plane 2D transforms use the usual negative-exponent forward DFT
//!   with a normalized inverse (`fft2`/`ifft2`).
//! * The angular transform along polar rings uses the positive-exponent
//!   kernel `exp(+2*pi*i*m*xi/M)`, unnormalized. That is the convention the
//!   rotational spectra are defined in, so ring spectra and rotational
//!   Fourier output agree without mirror bookkeeping. `angular_spectrum`
//!   computes it; `angular_synthesis` is its normalized inverse.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Unnormalized positive-exponent transform of one ring: S(xi) = sum_m x_m exp(+2*pi*i*m*xi/M).
pub fn angular_spectrum(ring: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = ring.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(buf.len(), FftDirection::Inverse).process(&mut buf);
    buf
}

/// In-place unnormalized positive-exponent transform of a complex ring.
pub fn angular_spectrum_inplace(buf: &mut [Complex64]) {
    plan(buf.len(), FftDirection::Inverse).process(buf);
}

/// Inverse of [`angular_spectrum`]: x_m = (1/M) sum_xi S(xi) exp(-2*pi*i*m*xi/M).
pub fn angular_synthesis_inplace(buf: &mut [Complex64]) {
    let m = buf.len();
    plan(m, FftDirection::Forward).process(buf);
    let scale = 1.0 / m as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Hermitian adjoint of [`angular_spectrum_inplace`]: the unnormalized
/// negative-exponent transform.
pub fn angular_adjoint_inplace(buf: &mut [Complex64]) {
    plan(buf.len(), FftDirection::Forward).process(buf);
}

fn fft_rows_inplace(a: &mut Array2<Complex64>, direction: FftDirection) {
    let cols = a.ncols();
    let fft = plan(cols, direction);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for mut row in a.rows_mut() {
        let slice = row.as_slice_mut().expect("rows of a standard-layout array are contiguous");
        fft.process_with_scratch(slice, &mut scratch);
    }
}

fn transpose(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = a.dim();
    Array2::from_shape_fn((cols, rows), |(i, j)| a[[j, i]])
}

fn fft2_inplace(a: &mut Array2<Complex64>, direction: FftDirection) {
    fft_rows_inplace(a, direction);
    let mut t = transpose(a);
    fft_rows_inplace(&mut t, direction);
    *a = transpose(&t);
}

/// Unnormalized forward 2D DFT (negative exponent).
pub fn fft2(a: &mut Array2<Complex64>) {
    fft2_inplace(a, FftDirection::Forward);
}

/// Normalized inverse 2D DFT.
pub fn ifft2(a: &mut Array2<Complex64>) {
    fft2_inplace(a, FftDirection::Inverse);
    let scale = 1.0 / (a.nrows() * a.ncols()) as f64;
    a.mapv_inplace(|v| v * scale);
}

/// Swap quadrants so index (n/2, n/2) moves to (0, 0).
pub fn ifftshift2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = a.dim();
    let (sr, sc) = (rows / 2, cols / 2);
    Array2::from_shape_fn((rows, cols), |(i, j)| a[[(i + sr) % rows, (j + sc) % cols]])
}

/// Swap quadrants so index (0, 0) moves to (n/2, n/2). Inverse of [`ifftshift2`]
/// for even sizes; differs for odd ones.
pub fn fftshift2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = a.dim();
    let (sr, sc) = (rows.div_ceil(2), cols.div_ceil(2));
    Array2::from_shape_fn((rows, cols), |(i, j)| a[[(i + sr) % rows, (j + sc) % cols]])
}

/// Centered normalized inverse 2D transform: fftshift . ifft2 . ifftshift.
///
/// Maps a spectrum centered on pixel (n/2, n/2) to a field centered the same
/// way. As a matrix over C^(n*n) it is symmetric (equal to its plain
/// transpose), which the calibration gradient relies on.
pub fn centered_inverse2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let mut buf = ifftshift2(a);
    ifft2(&mut buf);
    fftshift2(&buf)
}

//! Pixel-level primitives: bilinear sampling, rotation, patch placement,
//! cropping, and the image metrics used throughout the tests.
//!
//! Coordinates are (x, y) with x the column index and y the row index;
//! arrays are indexed `[[y, x]]`. All interpolation is bilinear with
//! zero outside the array footprint, which keeps every operation here
//! linear in the intensities and gives each one an exact transpose.

use ndarray::Array2;

/// Bilinear sample at (x, y); zero outside the footprint.
pub fn bilinear(img: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (rows, cols) = img.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let yy = y0 + dy;
        if yy < 0 || yy >= rows as i64 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let xx = x0 + dx;
            if xx < 0 || xx >= cols as i64 {
                continue;
            }
            acc += wy * wx * img[[yy as usize, xx as usize]];
        }
    }
    acc
}

/// Transpose of [`bilinear`]: scatter `value` into the four neighbors of (x, y).
pub fn bilinear_scatter(img: &mut Array2<f64>, x: f64, y: f64, value: f64) {
    let (rows, cols) = img.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let yy = y0 + dy;
        if yy < 0 || yy >= rows as i64 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let xx = x0 + dx;
            if xx < 0 || xx >= cols as i64 {
                continue;
            }
            img[[yy as usize, xx as usize]] += wy * wx * value;
        }
    }
}

/// Rotate a square patch by `theta` about its center pixel (n/2, n/2),
/// gathering with bilinear interpolation. Positive `theta` turns content
/// the same way as increasing polar angle.
pub fn rotate_about_center(patch: &Array2<f64>, theta: f64) -> Array2<f64> {
    if theta == 0.0 {
        return patch.clone();
    }
    let n = patch.nrows();
    debug_assert_eq!(n, patch.ncols());
    let c = (n / 2) as f64;
    let (sin_t, cos_t) = theta.sin_cos();
    Array2::from_shape_fn((n, n), |(y, x)| {
        let dx = x as f64 - c;
        let dy = y as f64 - c;
        // Inverse rotation of the output coordinate.
        let sx = c + dx * cos_t + dy * sin_t;
        let sy = c - dx * sin_t + dy * cos_t;
        bilinear(patch, sx, sy)
    })
}

/// Transpose of [`rotate_about_center`] as a linear map on intensities.
pub fn rotate_about_center_adjoint(patch: &Array2<f64>, theta: f64) -> Array2<f64> {
    if theta == 0.0 {
        return patch.clone();
    }
    let n = patch.nrows();
    let c = (n / 2) as f64;
    let (sin_t, cos_t) = theta.sin_cos();
    let mut out = Array2::zeros((n, n));
    for y in 0..n {
        for x in 0..n {
            let v = patch[[y, x]];
            if v == 0.0 {
                continue;
            }
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let sx = c + dx * cos_t + dy * sin_t;
            let sy = c - dx * sin_t + dy * cos_t;
            bilinear_scatter(&mut out, sx, sy, v);
        }
    }
    out
}

/// Add `weight * patch` into `canvas` with the patch center pixel (p/2, p/2)
/// landing at the (possibly fractional) canvas position `pos` = (x, y).
/// Content falling outside the canvas is discarded.
pub fn accumulate_patch(canvas: &mut Array2<f64>, patch: &Array2<f64>, pos: (f64, f64), weight: f64) {
    let (rows, cols) = canvas.dim();
    let p = patch.nrows();
    let c = (p / 2) as f64;
    // Canvas pixel (x, y) reads patch at (x - pos.0 + c, y - pos.1 + c).
    let x_lo = (pos.0 - c).floor().max(0.0) as usize;
    let y_lo = (pos.1 - c).floor().max(0.0) as usize;
    let x_hi = ((pos.0 - c + p as f64).ceil() as i64).min(cols as i64).max(0) as usize;
    let y_hi = ((pos.1 - c + p as f64).ceil() as i64).min(rows as i64).max(0) as usize;
    let fx = pos.0 - c;
    let fy = pos.1 - c;
    // Fast path: integer placement needs no interpolation.
    if fx.fract() == 0.0 && fy.fract() == 0.0 {
        let ox = fx as i64;
        let oy = fy as i64;
        for y in y_lo..y_hi {
            let py = y as i64 - oy;
            if py < 0 || py >= p as i64 {
                continue;
            }
            for x in x_lo..x_hi {
                let px = x as i64 - ox;
                if px < 0 || px >= p as i64 {
                    continue;
                }
                canvas[[y, x]] += weight * patch[[py as usize, px as usize]];
            }
        }
        return;
    }
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let v = bilinear(patch, x as f64 - fx, y as f64 - fy);
            if v != 0.0 {
                canvas[[y, x]] += weight * v;
            }
        }
    }
}

/// Rotate an image by `theta` about an arbitrary center, bilinear gather,
/// zero outside the footprint.
pub fn rotate_image_about(img: &Array2<f64>, theta: f64, center: (f64, f64)) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let (cx, cy) = center;
    let (sin_t, cos_t) = theta.sin_cos();
    Array2::from_shape_fn((rows, cols), |(y, x)| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + dx * cos_t + dy * sin_t;
        let sy = cy - dx * sin_t + dy * cos_t;
        bilinear(img, sx, sy)
    })
}

/// Central crop of size `side`; the input center pixel (n/2, n/2) maps to
/// the output center pixel (side/2, side/2).
pub fn crop_center(a: &Array2<f64>, side: usize) -> Array2<f64> {
    let n = a.nrows();
    assert!(side <= n, "crop larger than source");
    let off = n / 2 - side / 2;
    Array2::from_shape_fn((side, side), |(y, x)| a[[y + off, x + off]])
}

/// Transpose of [`crop_center`]: zero-embed a `side`-sized patch back into
/// an n-sized array.
pub fn crop_center_adjoint(a: &Array2<f64>, n: usize) -> Array2<f64> {
    let side = a.nrows();
    let off = n / 2 - side / 2;
    let mut out = Array2::zeros((n, n));
    for y in 0..side {
        for x in 0..side {
            out[[y + off, x + off]] = a[[y, x]];
        }
    }
    out
}

pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// PSNR in dB against a peak of 1.0 (images are normalized intensities).
pub fn psnr(reference: &Array2<f64>, estimate: &Array2<f64>) -> f64 {
    let m = mse(reference, estimate);
    if m == 0.0 {
        return f64::INFINITY;
    }
    -10.0 * m.log10()
}

/// Relative L2 distance ||a - b|| / ||a||.
pub fn relative_l2(reference: &Array2<f64>, estimate: &Array2<f64>) -> f64 {
    let num: f64 = reference
        .iter()
        .zip(estimate.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let den: f64 = reference.iter().map(|x| x * x).sum();
    (num / den).sqrt()
}

/// Trim `margin` pixels from every side; standard before computing metrics
/// on deblurred output.
pub fn trim_border(a: &Array2<f64>, margin: usize) -> Array2<f64> {
    let (rows, cols) = a.dim();
    assert!(rows > 2 * margin && cols > 2 * margin);
    Array2::from_shape_fn((rows - 2 * margin, cols - 2 * margin), |(y, x)| {
        a[[y + margin, x + margin]]
    })
}

pub fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| rng.gen::<f64>())
    }

    #[test]
    fn bilinear_exact_on_grid() {
        let img = random_image(8, 1);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(bilinear(&img, x as f64, y as f64), img[[y, x]]);
            }
        }
    }

    #[test]
    fn bilinear_zero_outside() {
        let img = random_image(8, 2);
        assert_eq!(bilinear(&img, -2.0, 3.0), 0.0);
        assert_eq!(bilinear(&img, 3.0, 9.5), 0.0);
    }

    #[test]
    fn rotation_adjoint_dot_product() {
        let theta = 0.7;
        for seed in 0..5 {
            let a = random_image(16, seed);
            let b = random_image(16, seed + 100);
            let ra = rotate_about_center(&a, theta);
            let atb = rotate_about_center_adjoint(&b, theta);
            let lhs: f64 = ra.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            let rhs: f64 = a.iter().zip(atb.iter()).map(|(x, y)| x * y).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn rotation_by_quarter_turn_matches_index_permutation() {
        // For a patch with odd symmetric content about the center pixel, a
        // 90-degree rotation lands exactly on grid points.
        let n = 9;
        let a = random_image(n, 3);
        let r = rotate_about_center(&a, std::f64::consts::FRAC_PI_2);
        let c = (n / 2) as i64;
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                // Source of (x, y) under inverse rotation: (c + dy, c - dx).
                let sx = c + (y - c);
                let sy = c - (x - c);
                if (0..n as i64).contains(&sx) && (0..n as i64).contains(&sy) {
                    let want = a[[sy as usize, sx as usize]];
                    let got = r[[y as usize, x as usize]];
                    assert!((want - got).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn accumulate_patch_integer_placement() {
        let mut canvas = Array2::zeros((10, 10));
        let patch = random_image(4, 4);
        accumulate_patch(&mut canvas, &patch, (5.0, 6.0), 2.0);
        // patch center (2,2) lands at (5,6)
        assert_eq!(canvas[[6, 5]], 2.0 * patch[[2, 2]]);
        assert_eq!(canvas[[4, 3]], 2.0 * patch[[0, 0]]);
        let total: f64 = canvas.iter().sum();
        let expect: f64 = 2.0 * patch.iter().sum::<f64>();
        assert!((total - expect).abs() < 1e-12);
    }

    #[test]
    fn accumulate_patch_fractional_preserves_mass_inside() {
        let mut canvas = Array2::zeros((16, 16));
        let patch = random_image(4, 5);
        accumulate_patch(&mut canvas, &patch, (7.25, 8.5), 1.0);
        let total: f64 = canvas.iter().sum();
        let expect: f64 = patch.iter().sum();
        assert!((total - expect).abs() < 1e-12);
    }

    #[test]
    fn crop_and_adjoint_are_transposes() {
        let a = random_image(12, 6);
        let b = random_image(6, 7);
        let ca = crop_center(&a, 6);
        let eb = crop_center_adjoint(&b, 12);
        let lhs: f64 = ca.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(eb.iter()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = random_image(8, 8);
        assert!(psnr(&a, &a).is_infinite());
    }
}

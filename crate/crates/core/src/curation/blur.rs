//! Separable Gaussian smoothing with symmetric (half-sample) reflection at
//! the borders. For a symmetric kernel that padding preserves total mass.

use super::{CurationError, Heatmap};
use crate::raster::{reflect_index, Grid};

/// Sampled Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`,
/// normalized to sum to one.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / denom).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Blurred raster before any normalization.
pub fn blur_raw(grid: &Grid<f64>, sigma: f64) -> Result<Grid<f64>, CurationError> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(CurationError::InvalidSigma(sigma));
    }
    let (w, h) = grid.dims();
    if w == 0 || h == 0 {
        return Ok(grid.clone());
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * grid.get(reflect_index(x as isize + k as isize - r, w), y);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp.get(x, reflect_index(y as isize + k as isize - r, h));
            }
            out.set(x, y, acc);
        }
    }
    Ok(out)
}

/// Gaussian blur followed by max-to-one normalization.
pub fn gaussian_blur(grid: &Grid<f64>, sigma: f64) -> Result<Heatmap, CurationError> {
    Ok(Heatmap::max_one(blur_raw(grid, sigma)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 2-D convolution with an explicit outer-product kernel and the
    /// same reflection rule; independent of the separable passes above.
    fn direct_blur(grid: &Grid<f64>, sigma: f64) -> Grid<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let mut kernel = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                kernel.push((
                    dx,
                    dy,
                    (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp(),
                ));
            }
        }
        let norm: f64 = kernel.iter().map(|k| k.2).sum();
        let (w, h) = grid.dims();
        Grid::from_fn(w, h, |x, y| {
            kernel
                .iter()
                .map(|&(dx, dy, k)| {
                    k / norm
                        * grid.get(
                            reflect_index(x as isize + dx, w),
                            reflect_index(y as isize + dy, h),
                        )
                })
                .sum()
        })
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.3, 1.0, 2.5, 4.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for i in 0..k.len() {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn separable_matches_direct_convolution() {
        let g = Grid::from_fn(13, 9, |x, y| ((x * 7 + y * 3) % 5) as f64);
        for sigma in [0.7, 1.5, 3.0] {
            let a = blur_raw(&g, sigma).unwrap();
            let b = direct_blur(&g, sigma);
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((p - q).abs() < 1e-12, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn central_point_peaks_in_place_and_is_symmetric() {
        let mut g = Grid::filled(15, 15, 0.0);
        g.set(7, 7, 1.0);
        let h = gaussian_blur(&g, 2.0).unwrap();
        let grid = h.grid();
        assert_eq!(*grid.get(7, 7), 1.0);
        for d in 1..7 {
            let v = *grid.get(7 + d, 7);
            assert!((grid.get(7 - d, 7) - v).abs() < 1e-15);
            assert!((grid.get(7, 7 + d) - v).abs() < 1e-15);
            assert!((grid.get(7, 7 - d) - v).abs() < 1e-15);
            assert!(v < 1.0);
        }
    }

    #[test]
    fn zero_grid_stays_zero() {
        let h = gaussian_blur(&Grid::filled(6, 4, 0.0), 1.0).unwrap();
        assert!(h.grid().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_equal_points_both_reach_one() {
        let mut g = Grid::filled(32, 17, 0.0);
        g.set(8, 8, 1.0);
        g.set(23, 8, 1.0);
        let oracle = direct_blur(&g, 2.0);
        let peak = oracle.max();
        let h = gaussian_blur(&g, 2.0).unwrap();
        assert!((h.grid().get(8, 8) - 1.0).abs() < 1e-12);
        assert!((h.grid().get(23, 8) - 1.0).abs() < 1e-12);
        assert!((oracle.get(8, 8) / peak - 1.0).abs() < 1e-12);
        assert!((oracle.get(23, 8) / peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_is_preserved_even_at_borders() {
        let g = Grid::from_fn(10, 7, |x, y| if (x + y) % 4 == 0 { 1.0 } else { 0.0 });
        for sigma in [0.5, 2.0, 5.0] {
            let b = blur_raw(&g, sigma).unwrap();
            assert!((b.sum() - g.sum()).abs() <= 1e-9 * g.sum());
        }
    }

    #[test]
    fn bad_sigma() {
        let g = Grid::filled(3, 3, 0.0);
        assert!(matches!(
            blur_raw(&g, 0.0),
            Err(CurationError::InvalidSigma(_))
        ));
        assert!(matches!(
            blur_raw(&g, -1.0),
            Err(CurationError::InvalidSigma(_))
        ));
        assert!(matches!(
            blur_raw(&g, f64::NAN),
            Err(CurationError::InvalidSigma(_))
        ));
    }
}

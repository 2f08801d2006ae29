//! Row-major 2-D rasters plus PNG helpers.

use std::path::Path;

use image::{ImageBuffer, Luma};

/// A dense row-major raster. `x` is the column, `y` the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type BinaryMask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "grid data length does not match dimensions"
        );
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn in_bounds(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Iterates `(x, y, &value)` in row-major order.
    pub fn iter_xy(&self) -> impl Iterator<Item = (usize, usize, &T)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % w, i / w, v))
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when every set cell of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

impl Grid<f64> {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }
}

/// Reads an 8- or 16-bit grayscale PNG (other color types are converted to
/// luma) into `[0, 1]` intensities.
pub fn read_gray_png(path: &Path) -> Result<Grid<f64>, image::ImageError> {
    let img = image::open(path)?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    let data = luma
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0)
        .collect();
    Ok(Grid::from_vec(w as usize, h as usize, data))
}

/// Reads an 8-bit grayscale PNG as a binary mask: pixel > 127 is inside.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask, image::ImageError> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v > 127).collect();
    Ok(Grid::from_vec(w as usize, h as usize, data))
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<(), image::ImageError> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.as_slice()
            .iter()
            .map(|&b| if b { 255 } else { 0 })
            .collect(),
    )
    .expect("buffer sized from grid");
    buf.save(path)
}

/// Writes `[0, 1]` values as an 8-bit grayscale PNG.
pub fn write_gray8_png(path: &Path, grid: &Grid<f64>) -> Result<(), image::ImageError> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        grid.width() as u32,
        grid.height() as u32,
        grid.as_slice()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    )
    .expect("buffer sized from grid");
    buf.save(path)
}

/// Writes `[0, 1]` values as a 16-bit grayscale PNG, value = round(65535 v).
pub fn write_gray16_png(path: &Path, grid: &Grid<f64>) -> Result<(), image::ImageError> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        grid.width() as u32,
        grid.height() as u32,
        grid.as_slice().iter().map(|&v| quantize16(v)).collect(),
    )
    .expect("buffer sized from grid");
    buf.save(path)
}

pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}


/// Half-sample symmetric reflection of index `i` into `0..n`
/// (`d c b a | a b c d | d c b a`). Panics if `n == 0`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Bilinear resampling with half-pixel centers; samples outside the source
/// are clamped to the border.
pub fn resize_bilinear(src: &Grid<f64>, width: usize, height: usize) -> Grid<f64> {
    let (sw, sh) = src.dims();
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    Grid::from_fn(width, height, |x, y| {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let top = src.get(x0, y0) * (1.0 - ax) + src.get(x1, y0) * ax;
        let bottom = src.get(x0, y1) * (1.0 - ax) + src.get(x1, y1) * ax;
        top * (1.0 - ay) + bottom * ay
    })
}

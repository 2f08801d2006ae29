use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::raster::{BinaryMask, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MaxOne,
    Raw,
}

/// A non-negative attention raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    grid: Grid<f64>,
    normalization: Normalization,
}

impl Heatmap {
    /// Divides by the maximum when it is positive. An all-zero raster stays
    /// all zero.
    pub fn max_one(mut grid: Grid<f64>) -> Self {
        let max = grid.max();
        if max > 0.0 {
            grid.as_mut_slice().iter_mut().for_each(|v| *v /= max);
        }
        Heatmap {
            grid,
            normalization: Normalization::MaxOne,
        }
    }

    pub fn raw(grid: Grid<f64>) -> Self {
        Heatmap {
            grid,
            normalization: Normalization::Raw,
        }
    }

    /// Wraps values that are already in `[0, 1]` without rescaling.
    pub fn from_unit(grid: Grid<f64>) -> Result<Self, CurationError> {
        if grid.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CurationError::OutOfRange);
        }
        Ok(Heatmap {
            grid,
            normalization: Normalization::MaxOne,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Heatmap {
            grid: Grid::filled(width, height, 0.0),
            normalization: Normalization::MaxOne,
        }
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn is_zero(&self) -> bool {
        self.grid.as_slice().iter().all(|&v| v == 0.0)
    }

    /// Number of cells strictly above `threshold`.
    pub fn area(&self, threshold: f64) -> usize {
        self.grid
            .as_slice()
            .iter()
            .filter(|&&v| v > threshold)
            .count()
    }

    /// Cells `>= threshold` after max-to-one normalization.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        let max = self.grid.max();
        let scale = if self.normalization == Normalization::Raw && max > 0.0 {
            1.0 / max
        } else {
            1.0
        };
        self.grid.map(|&v| v * scale >= threshold)
    }

    /// Area-averages `patch x patch` blocks, then re-normalizes to max one.
    /// Dimensions must be multiples of `patch`.
    pub fn downsample(&self, patch: usize) -> Result<Heatmap, CurationError> {
        let (w, h) = self.dims();
        if patch == 0 || w % patch != 0 || h % patch != 0 {
            return Err(CurationError::DimensionMismatch {
                expected: (w / patch.max(1) * patch, h / patch.max(1) * patch),
                found: (w, h),
            });
        }
        let area = (patch * patch) as f64;
        let coarse = Grid::from_fn(w / patch, h / patch, |px, py| {
            let mut acc = 0.0;
            for y in py * patch..(py + 1) * patch {
                for x in px * patch..(px + 1) * patch {
                    acc += self.grid.get(x, y);
                }
            }
            acc / area
        });
        Ok(Heatmap::max_one(coarse))
    }
}

/// Inclusive pixel box; `x` is the column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

/// Tight box around cells strictly above `threshold`.
pub fn bbox_above(h: &Heatmap, threshold: f64) -> Option<BBox> {
    h.grid()
        .iter_xy()
        .filter(|(_, _, &v)| v > threshold)
        .fold(None, |acc, (x, y, _)| {
            Some(match acc {
                None => BBox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
                Some(b) => BBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x),
                    y1: b.y1.max(y),
                },
            })
        })
}

/// Tight box around the non-zero cells; `None` for an all-zero heatmap.
pub fn heatmap_bbox(h: &Heatmap) -> Option<BBox> {
    bbox_above(h, 0.0)
}

/// Heatmap support area relative to the region mask, its own bounding box
/// and the full image. Undefined denominators give `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRatios {
    pub mask: Option<f64>,
    pub bbox: Option<f64>,
    pub image: f64,
}

pub fn area_ratios(
    h: &Heatmap,
    mask: &BinaryMask,
    bbox: Option<BBox>,
    threshold: f64,
) -> Result<AreaRatios, CurationError> {
    if h.dims() != mask.dims() {
        return Err(CurationError::DimensionMismatch {
            expected: mask.dims(),
            found: h.dims(),
        });
    }
    let area = h.area(threshold) as f64;
    let mask_area = mask.count();
    let (w, hh) = h.dims();
    Ok(AreaRatios {
        mask: (mask_area > 0).then(|| area / mask_area as f64),
        bbox: bbox.map(|b| area / b.area() as f64),
        image: if w * hh > 0 {
            area / (w * hh) as f64
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_cells(w: usize, h: usize, cells: &[(usize, usize)]) -> Heatmap {
        let mut g = Grid::filled(w, h, 0.0);
        for &(x, y) in cells {
            g.set(x, y, 0.5);
        }
        Heatmap::max_one(g)
    }

    #[test]
    fn bbox_examples() {
        let h = from_cells(10, 10, &[(2, 3), (5, 7)]);
        assert_eq!(
            heatmap_bbox(&h),
            Some(BBox {
                x0: 2,
                y0: 3,
                x1: 5,
                y1: 7
            })
        );
        assert_eq!(heatmap_bbox(&Heatmap::zeros(4, 4)), None);
        let h = from_cells(10, 10, &[(4, 4)]);
        assert_eq!(
            heatmap_bbox(&h),
            Some(BBox {
                x0: 4,
                y0: 4,
                x1: 4,
                y1: 4
            })
        );
    }

    #[test]
    fn ratio_example_by_enumeration() {
        // heatmap area 10 inside a 10x10 image, a 20-cell mask, tight 10-cell box
        let cells: Vec<(usize, usize)> = (0..10).map(|x| (x, 0)).collect();
        let h = from_cells(10, 10, &cells);
        let mask = BinaryMask::from_fn(10, 10, |_, y| y < 2);
        let bb = heatmap_bbox(&h);
        assert_eq!(bb.unwrap().area(), 10);
        let r = area_ratios(&h, &mask, bb, 0.0).unwrap();
        assert_eq!(
            r,
            AreaRatios {
                mask: Some(0.5),
                bbox: Some(1.0),
                image: 0.1
            }
        );
    }

    #[test]
    fn zero_and_full_heatmaps() {
        let mask = BinaryMask::from_fn(4, 4, |x, _| x < 1);
        let z = Heatmap::zeros(4, 4);
        let r = area_ratios(&z, &mask, heatmap_bbox(&z), 0.0).unwrap();
        assert_eq!(
            r,
            AreaRatios {
                mask: Some(0.0),
                bbox: None,
                image: 0.0
            }
        );

        let full = Heatmap::max_one(Grid::filled(4, 4, 0.3));
        let r = area_ratios(&full, &mask, heatmap_bbox(&full), 0.0).unwrap();
        assert_eq!(
            r,
            AreaRatios {
                mask: Some(4.0),
                bbox: Some(1.0),
                image: 1.0
            }
        );

        let empty_mask = BinaryMask::filled(4, 4, false);
        assert_eq!(
            area_ratios(&full, &empty_mask, None, 0.0).unwrap().mask,
            None
        );
        assert!(area_ratios(&full, &BinaryMask::filled(3, 4, true), None, 0.0).is_err());
    }

    #[test]
    fn downsample_area_average() {
        let mut g = Grid::filled(4, 4, 0.0);
        g.set(0, 0, 1.0);
        g.set(3, 3, 1.0);
        g.set(2, 3, 1.0);
        let d = Heatmap::max_one(g).downsample(2).unwrap();
        assert_eq!(d.grid().as_slice(), &[0.5, 0.0, 0.0, 1.0]);
        assert!(Heatmap::zeros(5, 4).downsample(2).is_err());
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let h = Heatmap::from_unit(Grid::from_vec(3, 1, vec![0.49, 0.5, 1.0])).unwrap();
        assert_eq!(h.binarize(0.5).as_slice(), &[false, true, true]);
        let raw = Heatmap::raw(Grid::from_vec(2, 1, vec![1.0, 4.0]));
        assert_eq!(raw.binarize(0.5).as_slice(), &[false, true]);
    }
}

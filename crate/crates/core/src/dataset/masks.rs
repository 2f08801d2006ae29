use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::DatasetError;
use crate::raster::{read_mask_png, BinaryMask};
use crate::region::RegionId;

/// Seven binary anatomy masks sharing one raster size.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMaskSet {
    masks: [BinaryMask; 7],
}

impl RegionMaskSet {
    /// Builds the set from masks given in `RegionId` code order.
    pub fn new(masks: [BinaryMask; 7]) -> Result<Self, DatasetError> {
        let expected = masks[0].dims();
        for (region, m) in RegionId::ALL.iter().zip(&masks) {
            if m.dims() != expected {
                return Err(DatasetError::DimensionMismatch {
                    region: *region,
                    expected,
                    found: m.dims(),
                });
            }
        }
        let set = RegionMaskSet { masks };
        for (zone, parent) in set.subset_violations() {
            log::warn!("mask for {zone} is not contained in its parent {parent}");
        }
        Ok(set)
    }

    pub fn from_map(mut map: BTreeMap<RegionId, BinaryMask>) -> Result<Self, DatasetError> {
        let mut take = |r: RegionId| map.remove(&r).ok_or(DatasetError::MissingRegion(r));
        let masks = [
            take(RegionId::Heart)?,
            take(RegionId::LeftLung)?,
            take(RegionId::RightLung)?,
            take(RegionId::UpperLeftLung)?,
            take(RegionId::UpperRightLung)?,
            take(RegionId::LowerLeftLung)?,
            take(RegionId::LowerRightLung)?,
        ];
        Self::new(masks)
    }

    /// Every region covers the whole `width x height` raster.
    pub fn full(width: usize, height: usize) -> Self {
        RegionMaskSet {
            masks: std::array::from_fn(|_| BinaryMask::filled(width, height, true)),
        }
    }

    pub fn get(&self, region: RegionId) -> &BinaryMask {
        &self.masks[region.index()]
    }

    /// `(width, height)`
    pub fn dims(&self) -> (usize, usize) {
        self.masks[0].dims()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RegionId, &BinaryMask)> {
        RegionId::ALL.iter().copied().zip(self.masks.iter())
    }

    /// Zones that leak outside their parent lung mask, as `(zone, parent)`.
    pub fn subset_violations(&self) -> Vec<(RegionId, RegionId)> {
        RegionId::ALL
            .iter()
            .filter_map(|&r| r.parent().map(|p| (r, p)))
            .filter(|&(r, p)| !self.get(r).is_subset_of(self.get(p)))
            .collect()
    }
}

/// Loads one 8-bit grayscale PNG per region (pixel > 127 is inside).
pub fn load_masks(paths: &BTreeMap<RegionId, PathBuf>) -> Result<RegionMaskSet, DatasetError> {
    let mut map = BTreeMap::new();
    for region in RegionId::ALL {
        let path = paths
            .get(&region)
            .ok_or(DatasetError::MissingRegion(region))?;
        map.insert(region, load_one(path)?);
    }
    RegionMaskSet::from_map(map)
}

fn load_one(path: &Path) -> Result<BinaryMask, DatasetError> {
    read_mask_png(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::write_mask_png;

    fn write_set(
        dir: &Path,
        dims: impl Fn(RegionId) -> (usize, usize),
    ) -> BTreeMap<RegionId, PathBuf> {
        RegionId::ALL
            .iter()
            .map(|&r| {
                let (w, h) = dims(r);
                let p = dir.join(format!("{}.png", r.key()));
                write_mask_png(&p, &BinaryMask::from_fn(w, h, |x, _| x < w / 2)).unwrap();
                (r, p)
            })
            .collect()
    }

    #[test]
    fn loads_seven_masks() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_set(dir.path(), |_| (64, 64));
        let set = load_masks(&paths).unwrap();
        assert_eq!(set.dims(), (64, 64));
        assert_eq!(set.iter().count(), 7);
        assert_eq!(set.get(RegionId::Heart).count(), 32 * 64);
    }

    #[test]
    fn missing_heart() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = write_set(dir.path(), |_| (8, 8));
        paths.remove(&RegionId::Heart);
        assert!(matches!(
            load_masks(&paths),
            Err(DatasetError::MissingRegion(RegionId::Heart))
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_set(dir.path(), |r| {
            if r == RegionId::RightLung {
                (64, 64)
            } else {
                (32, 32)
            }
        });
        let err = load_masks(&paths).unwrap_err();
        assert!(
            matches!(
                err,
                DatasetError::DimensionMismatch {
                    region: RegionId::RightLung,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn unreadable_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = write_set(dir.path(), |_| (8, 8));
        let bogus = dir.path().join("bogus.png");
        std::fs::write(&bogus, b"not a png").unwrap();
        paths.insert(RegionId::LowerLeftLung, bogus);
        assert!(matches!(
            load_masks(&paths),
            Err(DatasetError::Image { .. })
        ));
    }

    #[test]
    fn detects_zone_outside_parent() {
        let mut masks: [BinaryMask; 7] = std::array::from_fn(|_| BinaryMask::filled(4, 4, false));
        masks[RegionId::UpperLeftLung.index()].set(1, 1, true);
        let set = RegionMaskSet::new(masks).unwrap();
        assert_eq!(
            set.subset_violations(),
            vec![(RegionId::UpperLeftLung, RegionId::LeftLung)]
        );
    }
}

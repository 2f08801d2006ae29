//! The seven anatomical regions a chest radiograph is read in.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the seven anatomy zones: the heart plus six lung zones.
///
/// The discriminant is the stable serialization code (0-6) and also the
/// canonical ordering used everywhere a per-region list is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionId {
    Heart = 0,
    LeftLung = 1,
    RightLung = 2,
    UpperLeftLung = 3,
    UpperRightLung = 4,
    LowerLeftLung = 5,
    LowerRightLung = 6,
}

impl RegionId {
    pub const COUNT: usize = 7;

    pub const ALL: [RegionId; 7] = [
        RegionId::Heart,
        RegionId::LeftLung,
        RegionId::RightLung,
        RegionId::UpperLeftLung,
        RegionId::UpperRightLung,
        RegionId::LowerLeftLung,
        RegionId::LowerRightLung,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<RegionId> {
        Self::ALL.get(code as usize).copied()
    }

    /// Human-readable area name used inside template sentences.
    pub fn area_name(self) -> &'static str {
        match self {
            RegionId::Heart => "heart",
            RegionId::LeftLung => "left lung",
            RegionId::RightLung => "right lung",
            RegionId::UpperLeftLung => "upper left lung",
            RegionId::UpperRightLung => "upper right lung",
            RegionId::LowerLeftLung => "lower left lung",
            RegionId::LowerRightLung => "lower right lung",
        }
    }

    /// Short phrase naming the region, used to seed intention tokens.
    pub fn intention_phrase(self) -> &'static str {
        match self {
            RegionId::Heart => "heart",
            RegionId::LeftLung => "left",
            RegionId::RightLung => "right",
            RegionId::UpperLeftLung => "upper left",
            RegionId::UpperRightLung => "upper right",
            RegionId::LowerLeftLung => "lower left",
            RegionId::LowerRightLung => "lower right",
        }
    }

    /// snake_case key, identical to the serde representation.
    pub fn key(self) -> &'static str {
        match self {
            RegionId::Heart => "heart",
            RegionId::LeftLung => "left_lung",
            RegionId::RightLung => "right_lung",
            RegionId::UpperLeftLung => "upper_left_lung",
            RegionId::UpperRightLung => "upper_right_lung",
            RegionId::LowerLeftLung => "lower_left_lung",
            RegionId::LowerRightLung => "lower_right_lung",
        }
    }

    /// The whole lung a zone belongs to, if this is an upper/lower zone.
    pub fn parent(self) -> Option<RegionId> {
        match self {
            RegionId::UpperLeftLung | RegionId::LowerLeftLung => Some(RegionId::LeftLung),
            RegionId::UpperRightLung | RegionId::LowerRightLung => Some(RegionId::RightLung),
            _ => None,
        }
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown region `{0}`")]
pub struct UnknownRegion(pub String);

impl FromStr for RegionId {
    type Err = UnknownRegion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        if let Ok(code) = norm.parse::<u8>() {
            return RegionId::from_code(code).ok_or_else(|| UnknownRegion(s.to_string()));
        }
        RegionId::ALL
            .iter()
            .copied()
            .find(|r| r.key() == norm)
            .ok_or_else(|| UnknownRegion(s.to_string()))
    }
}

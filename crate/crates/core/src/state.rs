use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

/// Insulation damage below this length counts as healthy.
pub const SMALL_FAULT_MIN_EXTENT_M: f64 = 0.005;
/// Insulation damage at or above this length counts as a large fault.
pub const LARGE_FAULT_MIN_EXTENT_M: f64 = 0.03;

/// Mutually exclusive cable condition. Used both for the actual state and
/// for the state a measurement method reports.
///
/// Ordered by severity: `Healthy < SmallFault < LargeFault`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CableState {
    Healthy,
    SmallFault,
    LargeFault,
}

impl CableState {
    pub const ALL: [CableState; 3] = [
        CableState::Healthy,
        CableState::SmallFault,
        CableState::LargeFault,
    ];

    /// Position in the (H, F_s, F_l) ordering used by every 3-vector and 3x3 table.
    pub fn index(self) -> usize {
        match self {
            CableState::Healthy => 0,
            CableState::SmallFault => 1,
            CableState::LargeFault => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Severity class implied by the physical damage length.
    pub fn from_extent(extent_m: f64) -> Self {
        if extent_m >= LARGE_FAULT_MIN_EXTENT_M {
            CableState::LargeFault
        } else if extent_m >= SMALL_FAULT_MIN_EXTENT_M {
            CableState::SmallFault
        } else {
            CableState::Healthy
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            CableState::Healthy => "H",
            CableState::SmallFault => "F_s",
            CableState::LargeFault => "F_l",
        }
    }
}

impl fmt::Display for CableState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CableState::Healthy => "healthy",
            CableState::SmallFault => "small_fault",
            CableState::LargeFault => "large_fault",
        };
        f.write_str(s)
    }
}

impl FromStr for CableState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h" | "healthy" => Ok(CableState::Healthy),
            "f_s" | "fs" | "small" | "small_fault" => Ok(CableState::SmallFault),
            "f_l" | "fl" | "large" | "large_fault" => Ok(CableState::LargeFault),
            other => Err(invalid(format!("unknown cable state {other:?}"))),
        }
    }
}

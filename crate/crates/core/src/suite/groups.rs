//! Group assignment rules.

use std::fmt;

use serde::{Deserialize, Serialize};

/// F0 values outside this range are treated as pitch-tracking outliers.
pub const F0_VALID_HZ: (f64, f64) = (50.0, 350.0);
pub const LOW_PITCH_MAX_HZ: f64 = 145.0;
pub const MEDIUM_PITCH_MAX_HZ: f64 = 190.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PitchGroup {
    Low,
    Medium,
    High,
}

impl PitchGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            PitchGroup::Low => "low",
            PitchGroup::Medium => "medium",
            PitchGroup::High => "high",
        }
    }

    pub fn valid_f0(f0_hz: f64) -> bool {
        (F0_VALID_HZ.0..=F0_VALID_HZ.1).contains(&f0_hz)
    }
}

impl fmt::Display for PitchGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pitch group for an average F0; `None` outside the valid F0 range.
pub fn pitch_group_assign(mean_f0_hz: f64) -> Option<PitchGroup> {
    if !PitchGroup::valid_f0(mean_f0_hz) {
        return None;
    }
    Some(if mean_f0_hz <= LOW_PITCH_MAX_HZ {
        PitchGroup::Low
    } else if mean_f0_hz <= MEDIUM_PITCH_MAX_HZ {
        PitchGroup::Medium
    } else {
        PitchGroup::High
    })
}

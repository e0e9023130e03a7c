//! Expected dimensional ranges for emotion categories.

use crate::types::Task;

pub const LOW: (f64, f64) = (0.0, 0.45);
pub const NEUTRAL: (f64, f64) = (0.3, 0.6);
pub const HIGH: (f64, f64) = (0.55, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    L,
    N,
    H,
    Blank,
}

use Level::*;

// (category, arousal, dominance, valence)
const TABLE: [(&str, Level, Level, Level); 9] = [
    ("anger", H, H, L),
    ("boredom", L, Blank, N),
    ("disgust", Blank, Blank, L),
    ("fear", H, L, L),
    ("frustration", Blank, Blank, L),
    ("happiness", Blank, N, H),
    ("neutral", N, N, N),
    ("sadness", L, L, L),
    ("surprise", H, N, Blank),
];

/// Range a dimension is expected in for samples of a category, if any.
pub fn expected_range(category: &str, dimension: Task) -> Option<(f64, f64)> {
    let row = TABLE.iter().find(|r| r.0 == category)?;
    let level = match dimension {
        Task::Arousal => row.1,
        Task::Dominance => row.2,
        Task::Valence => row.3,
        Task::Categories => return None,
    };
    match level {
        L => Some(LOW),
        N => Some(NEUTRAL),
        H => Some(HIGH),
        Blank => None,
    }
}

/// Categories with a constrained range for `dimension`.
pub fn constrained_categories(dimension: Task) -> Vec<&'static str> {
    TABLE
        .iter()
        .map(|r| r.0)
        .filter(|c| expected_range(c, dimension).is_some())
        .collect()
}

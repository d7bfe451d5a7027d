//! ITU-T delay/jitter quality bands and the five-point MOS scale.
//!
//! The published ranges share their endpoints ("0-150", "150-300"). A value
//! sitting exactly on a shared endpoint belongs to the lower (better) band:
//! 150 ms delay is Good, 300 ms is Acceptable, 20 ms jitter is Good and
//! 50 ms jitter is Acceptable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Good,
    Acceptable,
    Poor,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Good => "Good",
            Band::Acceptable => "Acceptable",
            Band::Poor => "Poor",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Good" => Ok(Band::Good),
            "Acceptable" => Ok(Band::Acceptable),
            "Poor" => Ok(Band::Poor),
            other => Err(format!("unknown band {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ClassifyError {
    #[error("{what} must be non-negative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("MOS score {0} outside [1, 5]")]
    ScoreOutOfRange(f64),
}

/// Upper inclusive limits of the Good and Acceptable bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandLimits {
    pub good_max: f64,
    pub acceptable_max: f64,
}

impl BandLimits {
    pub const DELAY_MS: BandLimits = BandLimits {
        good_max: 150.0,
        acceptable_max: 300.0,
    };
    pub const JITTER_MS: BandLimits = BandLimits {
        good_max: 20.0,
        acceptable_max: 50.0,
    };

    fn classify(&self, what: &'static str, value: f64) -> Result<Band, ClassifyError> {
        if value.is_nan() || value < 0.0 {
            return Err(ClassifyError::Negative { what, value });
        }
        Ok(if value <= self.good_max {
            Band::Good
        } else if value <= self.acceptable_max {
            Band::Acceptable
        } else {
            Band::Poor
        })
    }
}

pub fn classify_delay(delay_ms: f64) -> Result<Band, ClassifyError> {
    BandLimits::DELAY_MS.classify("delay", delay_ms)
}

pub fn classify_jitter(jitter_ms: f64) -> Result<Band, ClassifyError> {
    BandLimits::JITTER_MS.classify("jitter", jitter_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MosLabel {
    Bad,
    Poor,
    Fair,
    Good,
    Excellent,
}

impl MosLabel {
    pub fn score(self) -> u8 {
        match self {
            MosLabel::Bad => 1,
            MosLabel::Poor => 2,
            MosLabel::Fair => 3,
            MosLabel::Good => 4,
            MosLabel::Excellent => 5,
        }
    }

    pub fn listening_effort(self) -> &'static str {
        match self {
            MosLabel::Excellent => "No effort is required",
            MosLabel::Good => "No considerable effort is required",
            MosLabel::Fair => "Moderate effort is required",
            MosLabel::Poor => "Considerable effort is required",
            MosLabel::Bad => "Not understood even with considerable effort",
        }
    }
}

impl fmt::Display for MosLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MosLabel::Excellent => "Excellent",
            MosLabel::Good => "Good",
            MosLabel::Fair => "Fair",
            MosLabel::Poor => "Poor",
            MosLabel::Bad => "Bad",
        };
        f.write_str(s)
    }
}

/// Labels a MOS score by rounding half-up to the nearest integer grade.
pub fn mos_label(score: f64) -> Result<MosLabel, ClassifyError> {
    if !(1.0..=5.0).contains(&score) {
        return Err(ClassifyError::ScoreOutOfRange(score));
    }
    Ok(match (score + 0.5).floor() as u8 {
        0 | 1 => MosLabel::Bad,
        2 => MosLabel::Poor,
        3 => MosLabel::Fair,
        4 => MosLabel::Good,
        _ => MosLabel::Excellent,
    })
}

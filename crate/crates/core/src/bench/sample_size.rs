use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceLevel {
    #[serde(rename = "0.90")]
    P90,
    #[serde(rename = "0.95")]
    P95,
    #[serde(rename = "0.99")]
    P99,
}

impl ConfidenceLevel {
    pub fn z(self) -> f64 {
        match self {
            ConfidenceLevel::P90 => 1.645,
            ConfidenceLevel::P95 => 1.960,
            ConfidenceLevel::P99 => 2.576,
        }
    }

    pub fn from_f64(level: f64) -> Result<Self> {
        const TOL: f64 = 1e-9;
        if (level - 0.90).abs() < TOL {
            Ok(Self::P90)
        } else if (level - 0.95).abs() < TOL {
            Ok(Self::P95)
        } else if (level - 0.99).abs() < TOL {
            Ok(Self::P99)
        } else {
            Err(Error::invalid(format!(
                "confidence level {level} not supported; use 0.90, 0.95 or 0.99"
            )))
        }
    }
}

/// Items needed to estimate a proportion `p` within `margin` at `level`.
///
/// `n0 = z^2 p (1 - p) / e^2`; with a population of `N` the finite-population
/// correction `n0 / (1 + (n0 - 1) / N)` applies. The result is rounded up.
pub fn required_sample_size(population: Option<u64>, level: ConfidenceLevel, margin: f64, p: f64) -> Result<u64> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::invalid(format!("margin {margin} must be in (0, 1)")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("proportion {p} must be in (0, 1)")));
    }
    let z = level.z();
    let n0 = z * z * p * (1.0 - p) / (margin * margin);
    let n = match population {
        Some(0) => return Err(Error::invalid("population must be at least 1")),
        Some(big_n) => n0 / (1.0 + (n0 - 1.0) / big_n as f64),
        None => n0,
    };
    // absorb float noise before taking the ceiling
    let rounded = (n * 1e9).round() / 1e9;
    Ok(rounded.ceil() as u64)
}

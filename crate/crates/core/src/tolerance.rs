use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixed absolute/relative equality for solver objective values.
///
/// `a` matches reference `b` when `|a - b| <= atol + rtol * |b|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            atol: 1e-6,
            rtol: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn new(atol: f64, rtol: f64) -> Result<Self> {
        let tol = Self { atol, rtol };
        tol.validate()?;
        Ok(tol)
    }

    pub fn exact() -> Self {
        Self {
            atol: 0.0,
            rtol: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.atol.is_finite() && self.atol >= 0.0) {
            return Err(Error::invalid(format!(
                "absolute tolerance must be finite and >= 0, got {}",
                self.atol
            )));
        }
        if !(self.rtol.is_finite() && self.rtol >= 0.0) {
            return Err(Error::invalid(format!(
                "relative tolerance must be finite and >= 0, got {}",
                self.rtol
            )));
        }
        Ok(())
    }

    /// Whether `value` matches `reference`. The relative part scales with the reference.
    #[inline]
    pub fn matches(&self, value: f64, reference: f64) -> bool {
        (value - reference).abs() <= self.atol + self.rtol * reference.abs()
    }
}

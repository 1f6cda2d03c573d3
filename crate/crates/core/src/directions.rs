//! Random perturbation directions and their reciprocal weight vectors.
//!
//! A gradient estimate probes the objective along directions `Δ` drawn from
//! one of three distributions and weights each difference quotient by
//! `ξ = Δ⁻¹` (componentwise reciprocal), which turns the estimate into a finite
//! difference on a random basis.

use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

/// Default bound on `|ξⱼ|`.
pub const DEFAULT_RECIPROCAL_CAP: f64 = 1e6;

/// Largest dimension accepted by [`enumerate_rademacher`].
pub const MAX_ENUMERATION_DIM: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectionError {
    #[error("direction dimension must be at least 1")]
    ZeroDimension,
    #[error("reciprocal cap must be positive and finite, got {0}")]
    BadCap(f64),
    #[error("exhaustive enumeration is limited to d <= {MAX_ENUMERATION_DIM}, got d = {0}")]
    EnumerationTooLarge(usize),
    #[error("unknown direction kind `{0}` (expected nes, spsa or rdsa)")]
    UnknownKind(String),
}

/// Distribution of direction components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    /// Standard normal components (NES).
    Gaussian,
    /// Uniform over `{-1, +1}` (SPSA).
    Rademacher,
    /// Uniform over the open interval `(-1, 1)` (RDSA).
    UniformSym,
}

impl DirectionKind {
    pub const ALL: [DirectionKind; 3] = [
        DirectionKind::Gaussian,
        DirectionKind::Rademacher,
        DirectionKind::UniformSym,
    ];

    /// Short method name used on the command line and in reports.
    pub fn method_name(self) -> &'static str {
        match self {
            DirectionKind::Gaussian => "nes",
            DirectionKind::Rademacher => "spsa",
            DirectionKind::UniformSym => "rdsa",
        }
    }
}

impl fmt::Display for DirectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method_name())
    }
}

impl FromStr for DirectionKind {
    type Err = DirectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nes" | "gaussian" => Ok(DirectionKind::Gaussian),
            "spsa" | "rademacher" => Ok(DirectionKind::Rademacher),
            "rdsa" | "uniform" | "uniform_sym" => Ok(DirectionKind::UniformSym),
            _ => Err(DirectionError::UnknownKind(s.to_string())),
        }
    }
}

/// A sampled direction `Δ` together with its weight vector `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPair {
    pub delta_vec: Vec<f64>,
    pub xi_vec: Vec<f64>,
}

impl DirectionPair {
    pub fn new(kind: DirectionKind, delta_vec: Vec<f64>, cap: f64) -> Result<Self, DirectionError> {
        let xi_vec = xi_from_delta(kind, &delta_vec, cap)?;
        Ok(Self { delta_vec, xi_vec })
    }

    /// Draws a direction and computes its weights.
    pub fn sample(
        kind: DirectionKind,
        d: usize,
        cap: f64,
        rng: &mut SeededRng,
    ) -> Result<Self, DirectionError> {
        check_cap(cap)?;
        let delta_vec = sample_direction(kind, d, rng)?;
        Self::new(kind, delta_vec, cap)
    }

    pub fn dim(&self) -> usize {
        self.delta_vec.len()
    }
}

/// Draws a `d`-dimensional direction with i.i.d. components from `kind`.
pub fn sample_direction(
    kind: DirectionKind,
    d: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>, DirectionError> {
    if d == 0 {
        return Err(DirectionError::ZeroDimension);
    }
    let v = match kind {
        DirectionKind::Gaussian => (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        DirectionKind::Rademacher => (0..d)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        // Open01 excludes both endpoints, and 2u - 1 is exact in binary floating point.
        DirectionKind::UniformSym => (0..d)
            .map(|_| 2.0 * rng.sample::<f64, _>(Open01) - 1.0)
            .collect(),
    };
    Ok(v)
}

fn check_cap(cap: f64) -> Result<(), DirectionError> {
    if cap > 0.0 && cap.is_finite() {
        Ok(())
    } else {
        Err(DirectionError::BadCap(cap))
    }
}

/// Componentwise reciprocal of `delta_vec` with `|ξⱼ| <= cap`, sign preserved.
///
/// A component that is exactly zero maps to `+cap`. Rademacher directions are
/// returned unchanged since `±1` is its own reciprocal.
pub fn xi_from_delta(
    kind: DirectionKind,
    delta_vec: &[f64],
    cap: f64,
) -> Result<Vec<f64>, DirectionError> {
    if delta_vec.is_empty() {
        return Err(DirectionError::ZeroDimension);
    }
    check_cap(cap)?;
    if kind == DirectionKind::Rademacher {
        return Ok(delta_vec.to_vec());
    }
    Ok(delta_vec
        .iter()
        .map(|&v| {
            if v == 0.0 {
                cap
            } else {
                let r = 1.0 / v;
                if r.abs() > cap {
                    cap.copysign(r)
                } else {
                    r
                }
            }
        })
        .collect())
}

/// All `2^d` sign vectors in lexicographic order, with `-1 < +1`.
pub fn enumerate_rademacher(d: usize) -> Result<Vec<Vec<f64>>, DirectionError> {
    if d == 0 {
        return Err(DirectionError::ZeroDimension);
    }
    if d > MAX_ENUMERATION_DIM {
        return Err(DirectionError::EnumerationTooLarge(d));
    }
    // Bit (d-1-j) of the counter selects component j, most significant first.
    Ok((0..1u32 << d)
        .map(|code| {
            (0..d)
                .map(|j| if code >> (d - 1 - j) & 1 == 1 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect())
}

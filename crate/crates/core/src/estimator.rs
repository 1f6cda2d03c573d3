//! One- and two-sided stochastic gradient estimates.
//!
//! For directions `Δᵢ` with weights `ξᵢ = Δᵢ⁻¹`:
//!
//! ```text
//! one-sided:  (1/n) Σᵢ [(f(x + δΔᵢ) - f(x)) / δ]         · ξᵢ
//! two-sided:  (1/n) Σᵢ [(f(x + δΔᵢ) - f(x - δΔᵢ)) / 2δ]  · ξᵢ
//! ```
//!
//! The one-sided form evaluates `f(x)` once per estimate, so it costs `n + 1`
//! queries; the two-sided form costs `2n`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directions::{DirectionError, DirectionKind, DirectionPair, DEFAULT_RECIPROCAL_CAP};
use crate::oracle::{OracleError, ScalarOracle};
use crate::rng::SeededRng;

/// Default number of directions per estimate.
pub const DEFAULT_SAMPLES: usize = 50;
/// Default perturbation scale.
pub const DEFAULT_DELTA: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("estimate aborted after {spent} queries: {source}")]
    Oracle {
        spent: u64,
        #[source]
        source: OracleError,
    },
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Direction(#[from] DirectionError),
}

impl EstimateError {
    /// Queries consumed before the estimate was abandoned.
    pub fn spent(&self) -> u64 {
        match self {
            EstimateError::Oracle { spent, .. } => *spent,
            _ => 0,
        }
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, EstimateError::Oracle { source, .. } if source.is_budget())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    OneSided,
    TwoSided,
}

impl Sidedness {
    pub fn as_number(self) -> u8 {
        match self {
            Sidedness::OneSided => 1,
            Sidedness::TwoSided => 2,
        }
    }
}

impl fmt::Display for Sidedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_number())
    }
}

impl FromStr for Sidedness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "one" | "one_sided" => Ok(Sidedness::OneSided),
            "2" | "two" | "two_sided" => Ok(Sidedness::TwoSided),
            _ => Err(format!("unknown sidedness `{s}` (expected 1 or 2)")),
        }
    }
}

/// Direction distribution and sidedness, e.g. `spsa2` or `nes1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Method {
    pub kind: DirectionKind,
    pub sidedness: Sidedness,
}

impl Method {
    pub fn new(kind: DirectionKind, sidedness: Sidedness) -> Self {
        Self { kind, sidedness }
    }

    /// The grid of the reference experiment: all three 2-sided methods and 1-sided SPSA.
    pub fn reference_grid() -> Vec<Method> {
        vec![
            Method::new(DirectionKind::Gaussian, Sidedness::TwoSided),
            Method::new(DirectionKind::UniformSym, Sidedness::TwoSided),
            Method::new(DirectionKind::Rademacher, Sidedness::TwoSided),
            Method::new(DirectionKind::Rademacher, Sidedness::OneSided),
        ]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.sidedness)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s.len().saturating_sub(1);
        let (kind, side) = s.split_at(split);
        let kind = kind.parse::<DirectionKind>().map_err(|e| e.to_string())?;
        Ok(Method::new(kind, side.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: DirectionKind,
    pub sidedness: Sidedness,
    /// Directions per estimate.
    pub n: usize,
    /// Perturbation scale δ.
    pub delta: f64,
    /// Bound on `|ξⱼ|`.
    pub reciprocal_cap: f64,
    /// Evaluate probes on the rayon pool when the oracle allows it.
    #[serde(default)]
    pub parallel: bool,
}

impl EstimatorConfig {
    pub fn new(kind: DirectionKind, sidedness: Sidedness) -> Self {
        Self {
            kind,
            sidedness,
            n: DEFAULT_SAMPLES,
            delta: DEFAULT_DELTA,
            reciprocal_cap: DEFAULT_RECIPROCAL_CAP,
            parallel: false,
        }
    }

    pub fn for_method(method: Method) -> Self {
        Self::new(method.kind, method.sidedness)
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn method(&self) -> Method {
        Method::new(self.kind, self.sidedness)
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if self.n == 0 {
            return Err(EstimateError::Config("n must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(EstimateError::Config(format!(
                "delta must be positive and finite, got {}",
                self.delta
            )));
        }
        if !(self.reciprocal_cap > 0.0 && self.reciprocal_cap.is_finite()) {
            return Err(EstimateError::Config(format!(
                "reciprocal cap must be positive and finite, got {}",
                self.reciprocal_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub queries_used: u64,
}

/// Queries consumed by one estimate.
pub fn query_cost(cfg: &EstimatorConfig) -> u64 {
    query_cost_for(cfg.sidedness, cfg.n)
}

pub fn query_cost_for(sidedness: Sidedness, n: usize) -> u64 {
    match sidedness {
        Sidedness::TwoSided => 2 * n as u64,
        Sidedness::OneSided => n as u64 + 1,
    }
}

/// Estimates the gradient of `f` at `x` with `cfg.n` freshly sampled directions.
pub fn estimate_gradient(
    f: &dyn ScalarOracle,
    x: &[f64],
    cfg: &EstimatorConfig,
    rng: &mut SeededRng,
) -> Result<GradientEstimate, EstimateError> {
    cfg.validate()?;
    check_dim(f, x)?;
    let pairs = (0..cfg.n)
        .map(|_| DirectionPair::sample(cfg.kind, x.len(), cfg.reciprocal_cap, rng))
        .collect::<Result<Vec<_>, _>>()?;
    estimate_with_directions(f, x, cfg, &pairs)
}

/// Estimates the gradient using the given directions in place of sampling.
/// `cfg.n` and `cfg.kind` are ignored; the average runs over `pairs`.
pub fn estimate_with_directions(
    f: &dyn ScalarOracle,
    x: &[f64],
    cfg: &EstimatorConfig,
    pairs: &[DirectionPair],
) -> Result<GradientEstimate, EstimateError> {
    cfg.validate()?;
    check_dim(f, x)?;
    if pairs.is_empty() {
        return Err(EstimateError::Config("at least one direction is required".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.dim() != x.len() || p.xi_vec.len() != x.len()) {
        return Err(EstimateError::Config(format!(
            "direction of dimension {} for a point of dimension {}",
            p.dim(),
            x.len()
        )));
    }

    let mut spent = 0u64;
    let base = match cfg.sidedness {
        Sidedness::OneSided => Some(f.value(x).map_err(|source| EstimateError::Oracle {
            spent,
            source,
        })?),
        Sidedness::TwoSided => None,
    };
    if base.is_some() {
        spent += 1;
    }

    let cost = query_cost_for(cfg.sidedness, pairs.len()) - spent;
    let quotient =
        |pair: &DirectionPair| difference_quotient(f, x, &pair.delta_vec, cfg.delta, base);
    let quotients: Vec<Result<f64, (u64, OracleError)>> =
        if cfg.parallel && f.concurrent_safe() && f.ledger().remaining() >= cost {
            pairs.par_iter().map(quotient).collect()
        } else {
            let mut out = Vec::with_capacity(pairs.len());
            for pair in pairs {
                let q = quotient(pair);
                let failed = q.is_err();
                out.push(q);
                if failed {
                    break;
                }
            }
            out
        };

    let per_probe = match cfg.sidedness {
        Sidedness::OneSided => 1,
        Sidedness::TwoSided => 2,
    };
    let mut first_error = None;
    for q in &quotients {
        match q {
            Ok(_) => spent += per_probe,
            Err((served, e)) => {
                spent += served;
                first_error.get_or_insert_with(|| e.clone());
            }
        }
    }
    if let Some(source) = first_error {
        return Err(EstimateError::Oracle { spent, source });
    }

    // Summation runs in direction order whatever the evaluation order was.
    let mut grad = vec![0.0; x.len()];
    for (q, pair) in quotients.iter().zip(pairs) {
        let q = *q.as_ref().expect("errors returned above");
        grad.iter_mut().zip(&pair.xi_vec).for_each(|(g, xi)| *g += q * xi);
    }
    let scale = 1.0 / pairs.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(GradientEstimate {
        grad,
        queries_used: spent,
    })
}

/// Directional difference quotient along `direction`: one-sided against
/// `base = f(x)` when given, two-sided otherwise. On failure, reports how many
/// of its own queries were served.
pub fn difference_quotient(
    f: &dyn ScalarOracle,
    x: &[f64],
    direction: &[f64],
    delta: f64,
    base: Option<f64>,
) -> Result<f64, (u64, OracleError)> {
    let shifted = |sign: f64| -> Vec<f64> {
        x.iter()
            .zip(direction)
            .map(|(xi, di)| xi + sign * delta * di)
            .collect()
    };
    let plus = f.value(&shifted(1.0)).map_err(|e| (0, e))?;
    match base {
        Some(base) => Ok((plus - base) / delta),
        None => {
            let minus = f.value(&shifted(-1.0)).map_err(|e| (1, e))?;
            Ok((plus - minus) / (2.0 * delta))
        }
    }
}

fn check_dim(f: &dyn ScalarOracle, x: &[f64]) -> Result<(), EstimateError> {
    if x.len() == f.dim() {
        Ok(())
    } else {
        Err(EstimateError::Oracle {
            spent: 0,
            source: OracleError::DimensionMismatch {
                expected: f.dim(),
                got: x.len(),
            },
        })
    }
}

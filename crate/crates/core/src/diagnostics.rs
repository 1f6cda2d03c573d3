//! Accuracy of gradient estimates against objectives with known gradients.

use serde::Serialize;

use crate::directions::{enumerate_rademacher, DirectionKind, DirectionPair};
use crate::estimator::{
    difference_quotient, estimate_gradient, estimate_with_directions, EstimateError,
    EstimatorConfig, Sidedness,
};
use crate::oracle::ScalarOracle;
use crate::rng::SeededRng;
use crate::synthetic::SyntheticOracle;

/// Summary of repeated estimates at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub trials: usize,
    /// Mean cosine similarity between each estimate and the true gradient;
    /// `None` when the true gradient is zero.
    pub mean_cosine: Option<f64>,
    /// Cosine similarity between the trial-averaged estimate and the true
    /// gradient; `None` when the true gradient is zero.
    pub cosine_of_mean: Option<f64>,
    /// `‖mean of estimates - true gradient‖₂`.
    pub l2_error_of_mean: f64,
}

/// Runs `trials` independent estimates at `x` and compares them with the
/// analytic gradient.
pub fn estimator_diagnostics(
    oracle: &SyntheticOracle,
    x: &[f64],
    cfg: &EstimatorConfig,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<Diagnostics, EstimateError> {
    if trials == 0 {
        return Err(EstimateError::Config("trials must be at least 1".into()));
    }
    let truth = oracle.analytic_gradient(x);
    let truth_norm = norm(&truth);
    let mut mean = vec![0.0; x.len()];
    let mut cosine_sum = 0.0;
    for _ in 0..trials {
        let est = estimate_gradient(oracle, x, cfg, rng)?;
        cosine_sum += cosine(&est.grad, &truth);
        mean.iter_mut().zip(&est.grad).for_each(|(m, g)| *m += g);
    }
    mean.iter_mut().for_each(|m| *m /= trials as f64);
    Ok(Diagnostics {
        trials,
        mean_cosine: (truth_norm > 0.0).then(|| cosine_sum / trials as f64),
        cosine_of_mean: (truth_norm > 0.0).then(|| cosine(&mean, &truth)),
        l2_error_of_mean: distance(&mean, &truth),
    })
}

/// Exact expectation of the estimate over all `2^d` Rademacher directions.
pub fn rademacher_expectation(
    f: &dyn ScalarOracle,
    x: &[f64],
    cfg: &EstimatorConfig,
) -> Result<Vec<f64>, EstimateError> {
    let pairs = enumerate_rademacher(x.len())?
        .into_iter()
        .map(|v| DirectionPair::new(DirectionKind::Rademacher, v, cfg.reciprocal_cap))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(estimate_with_directions(f, x, cfg, &pairs)?.grad)
}

/// Mean absolute truncation error of the directional difference quotient,
/// `|q(Δ) - ∇f(x)·Δ|`, over the given directions.
///
/// This isolates the finite-difference error that `δ` controls: it is `O(δ)`
/// for one-sided quotients and `O(δ²)` for two-sided ones on smooth `f`.
pub fn quotient_bias(
    oracle: &SyntheticOracle,
    x: &[f64],
    sidedness: Sidedness,
    delta: f64,
    directions: &[Vec<f64>],
) -> Result<f64, EstimateError> {
    let grad = oracle.analytic_gradient(x);
    let base = match sidedness {
        Sidedness::OneSided => Some(oracle.value(x).map_err(|source| EstimateError::Oracle {
            spent: 0,
            source,
        })?),
        Sidedness::TwoSided => None,
    };
    let mut total = 0.0;
    for dir in directions {
        let q = difference_quotient(oracle, x, dir, delta, base)
            .map_err(|(spent, source)| EstimateError::Oracle { spent, source })?;
        total += (q - dot(&grad, dir)).abs();
    }
    Ok(total / directions.len() as f64)
}

/// Least-squares slope of `ln(bias)` against `ln(delta)`. `None` if fewer
/// than two points have positive bias.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(d, b)| *d > 0.0 && *b > 0.0)
        .map(|(d, b)| (d.ln(), b.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One row of an `estimate-check` table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub delta: f64,
    /// Mean |difference quotient - directional derivative|.
    pub quotient_bias: f64,
    /// `‖E[estimate] - ∇f‖₂` by exhaustive enumeration (Rademacher only).
    pub expectation_bias: Option<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSweep {
    pub rows: Vec<BiasRow>,
    /// Fitted log-log slope of `quotient_bias` against δ.
    pub slope: Option<f64>,
    /// Whether the bias columns were computed over every sign vector.
    pub exhaustive: bool,
}

/// Sweeps δ and measures bias and estimate quality at each value.
///
/// Quotient bias is averaged over all sign vectors for Rademacher directions
/// with `d <= 16`, and over `trials` sampled directions otherwise.
pub fn bias_sweep(
    oracle: &SyntheticOracle,
    x: &[f64],
    base: &EstimatorConfig,
    deltas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<BiasSweep, EstimateError> {
    let exhaustive = base.kind == DirectionKind::Rademacher && x.len() <= 16;
    let directions = if exhaustive {
        enumerate_rademacher(x.len())?
    } else {
        let mut rng = SeededRng::new(seed).split(&[u64::MAX]);
        (0..trials.max(1))
            .map(|_| crate::directions::sample_direction(base.kind, x.len(), &mut rng))
            .collect::<Result<Vec<_>, _>>()?
    };
    let truth = oracle.analytic_gradient(x);
    let mut rows = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let cfg = base.clone().with_delta(delta);
        cfg.validate()?;
        let expectation_bias = if exhaustive {
            Some(distance(&rademacher_expectation(oracle, x, &cfg)?, &truth))
        } else {
            None
        };
        let mut rng = SeededRng::new(seed).split(&[i as u64]);
        rows.push(BiasRow {
            delta,
            quotient_bias: quotient_bias(oracle, x, cfg.sidedness, delta, &directions)?,
            expectation_bias,
            diagnostics: estimator_diagnostics(oracle, x, &cfg, trials, &mut rng)?,
        });
    }
    let slope = loglog_slope(&rows.iter().map(|r| (r.delta, r.quotient_bias)).collect::<Vec<_>>());
    Ok(BiasSweep {
        rows,
        slope,
        exhaustive,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom > 0.0 {
        dot(a, b) / denom
    } else {
        0.0
    }
}

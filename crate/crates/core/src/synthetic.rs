//! Analytic test objectives with closed-form gradients.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{cross_entropy, OracleError, QueryLedger, ScalarOracle};
use crate::rng::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("unknown objective `{0}` (expected linear, quadratic, cubic or softmax)")]
    Unknown(String),
    #[error("objective dimension must be at least 1")]
    ZeroDimension,
    #[error("inconsistent objective parameters: {0}")]
    Inconsistent(String),
}

/// Smooth objectives on `R^d` whose gradients are known exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticObjective {
    /// `g·x`
    Linear { g: Vec<f64> },
    /// `xᵀAx + b·x`, `a` row-major `d x d`.
    Quadratic { a: Vec<f64>, b: Vec<f64> },
    /// `Σ cⱼ xⱼ³`
    Cubic { c: Vec<f64> },
    /// Cross-entropy of `softmax(Wx + b)` against `target`; `w` row-major `k x d`.
    SoftmaxRegression {
        w: Vec<f64>,
        b: Vec<f64>,
        target: usize,
    },
}

impl SyntheticObjective {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let d = self.dim();
        if d == 0 {
            return Err(ObjectiveError::ZeroDimension);
        }
        let bad = |m: &str| Err(ObjectiveError::Inconsistent(m.to_string()));
        match self {
            SyntheticObjective::Quadratic { a, .. } if a.len() != d * d => bad("A must be d x d"),
            SyntheticObjective::SoftmaxRegression { w, b, target } => {
                if b.is_empty() || w.len() % b.len() != 0 || w.is_empty() {
                    bad("W must have one row per bias entry")
                } else if *target >= b.len() {
                    bad("target out of range")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SyntheticObjective::Linear { g } => g.len(),
            SyntheticObjective::Quadratic { b, .. } => b.len(),
            SyntheticObjective::Cubic { c } => c.len(),
            SyntheticObjective::SoftmaxRegression { w, b, .. } => {
                w.len().checked_div(b.len()).unwrap_or(0)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticObjective::Linear { .. } => "linear",
            SyntheticObjective::Quadratic { .. } => "quadratic",
            SyntheticObjective::Cubic { .. } => "cubic",
            SyntheticObjective::SoftmaxRegression { .. } => "softmax",
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SyntheticObjective::Linear { g } => dot(g, x),
            SyntheticObjective::Quadratic { a, b } => {
                let d = b.len();
                let quad: f64 = a
                    .chunks_exact(d)
                    .zip(x)
                    .map(|(row, xi)| xi * dot(row, x))
                    .sum();
                quad + dot(b, x)
            }
            SyntheticObjective::Cubic { c } => c.iter().zip(x).map(|(c, v)| c * v * v * v).sum(),
            SyntheticObjective::SoftmaxRegression { target, .. } => {
                cross_entropy(&self.scores(x), *target)
            }
        }
    }

    pub fn analytic_gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SyntheticObjective::Linear { g } => g.clone(),
            SyntheticObjective::Quadratic { a, b } => {
                let d = b.len();
                (0..d)
                    .map(|i| {
                        (0..d).map(|j| (a[i * d + j] + a[j * d + i]) * x[j]).sum::<f64>() + b[i]
                    })
                    .collect()
            }
            SyntheticObjective::Cubic { c } => {
                c.iter().zip(x).map(|(c, v)| 3.0 * c * v * v).collect()
            }
            SyntheticObjective::SoftmaxRegression { w, target, .. } => {
                let z = self.scores(x);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let norm: f64 = z.iter().map(|s| (s - max).exp()).sum();
                let d = x.len();
                let mut grad = vec![0.0; d];
                for (k, row) in w.chunks_exact(d).enumerate() {
                    let p = (z[k] - max).exp() / norm;
                    let coeff = p - if k == *target { 1.0 } else { 0.0 };
                    grad.iter_mut().zip(row).for_each(|(g, wk)| *g += coeff * wk);
                }
                grad
            }
        }
    }

    /// Class scores `Wx + b` of a softmax regression; empty for other objectives.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SyntheticObjective::SoftmaxRegression { w, b, .. } => w
                .chunks_exact(x.len())
                .zip(b)
                .map(|(row, bk)| dot(row, x) + bk)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// A seeded instance of a named objective and an evaluation point.
    ///
    /// The cubic instance has positive coefficients and evaluates at a point
    /// with small positive components, where the gradient is small compared to
    /// the objective's curvature along the all-ones direction.
    pub fn preset(name: &str, d: usize, seed: u64) -> Result<(Self, Vec<f64>), ObjectiveError> {
        if d == 0 {
            return Err(ObjectiveError::ZeroDimension);
        }
        let mut rng = SeededRng::new(seed);
        let mut uniform = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|_| rng.uniform(lo, hi)).collect()
        };
        let (objective, point) = match name {
            "linear" => (SyntheticObjective::Linear { g: uniform(d, -1.0, 1.0) }, uniform(d, -1.0, 1.0)),
            "quadratic" => {
                let a = uniform(d * d, -1.0, 1.0);
                let b = uniform(d, -1.0, 1.0);
                (SyntheticObjective::Quadratic { a, b }, uniform(d, -1.0, 1.0))
            }
            "cubic" => (
                SyntheticObjective::Cubic { c: uniform(d, 0.5, 1.5) },
                uniform(d, 0.05, 0.15),
            ),
            "softmax" => {
                let classes = 3;
                let w = uniform(classes * d, -1.0, 1.0);
                let b = uniform(classes, -0.5, 0.5);
                (
                    SyntheticObjective::SoftmaxRegression { w, b, target: 0 },
                    uniform(d, 0.0, 1.0),
                )
            }
            other => return Err(ObjectiveError::Unknown(other.to_string())),
        };
        Ok((objective, point))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A metered scalar oracle over a [`SyntheticObjective`].
#[derive(Debug)]
pub struct SyntheticOracle {
    objective: SyntheticObjective,
    ledger: QueryLedger,
}

impl SyntheticOracle {
    pub fn new(objective: SyntheticObjective, budget: u64) -> Result<Self, ObjectiveError> {
        objective.validate()?;
        Ok(Self {
            objective,
            ledger: QueryLedger::new(budget),
        })
    }

    pub fn objective(&self) -> &SyntheticObjective {
        &self.objective
    }

    pub fn analytic_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.objective.analytic_gradient(x)
    }
}

impl ScalarOracle for SyntheticOracle {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn concurrent_safe(&self) -> bool {
        true
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        if x.len() != self.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        self.ledger.try_charge()?;
        Ok(self.objective.value(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let lin = SyntheticObjective::Linear { g: vec![1.0, 2.0] };
        assert_eq!(lin.value(&[3.0, -1.0]), 1.0);
        let quad = SyntheticObjective::Quadratic {
            a: vec![1.0, 2.0, 0.0, 3.0],
            b: vec![1.0, -1.0],
        };
        // [1 2; 0 3] at (1, 2): 1 + 4 + 12 = 17, plus b·x = -1.
        assert_eq!(quad.value(&[1.0, 2.0]), 16.0);
        // (A + Aᵀ)x + b = [2 2; 2 6](1,2) + (1,-1) = (7, 13)
        assert_eq!(quad.analytic_gradient(&[1.0, 2.0]), vec![7.0, 13.0]);
        let cubic = SyntheticObjective::Cubic { c: vec![2.0, -1.0] };
        assert_eq!(cubic.value(&[1.0, 2.0]), -6.0);
        assert_eq!(cubic.analytic_gradient(&[1.0, 2.0]), vec![6.0, -12.0]);
    }

    #[test]
    fn softmax_gradient_at_uniform_scores() {
        let obj = SyntheticObjective::SoftmaxRegression {
            w: vec![1.0, 0.0, 0.0, 1.0],
            b: vec![0.0, 0.0],
            target: 0,
        };
        assert!((obj.value(&[0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(obj.analytic_gradient(&[0.0, 0.0]), vec![-0.5, 0.5]);
        assert_eq!(obj.dim(), 2);
    }

    #[test]
    fn presets_are_seeded() {
        for name in ["linear", "quadratic", "cubic", "softmax"] {
            let a = SyntheticObjective::preset(name, 4, 9).unwrap();
            assert_eq!(a, SyntheticObjective::preset(name, 4, 9).unwrap());
            assert_eq!(a.0.dim(), 4);
            a.0.validate().unwrap();
        }
        assert!(SyntheticObjective::preset("mlp", 4, 9).is_err());
        assert!(SyntheticObjective::preset("cubic", 0, 9).is_err());
    }

    #[test]
    fn oracle_meters_queries() {
        let oracle = SyntheticOracle::new(SyntheticObjective::Linear { g: vec![1.0] }, 2).unwrap();
        oracle.value(&[1.0]).unwrap();
        oracle.value(&[1.0]).unwrap();
        assert!(oracle.value(&[1.0]).unwrap_err().is_budget());
        assert!(matches!(oracle.value(&[1.0, 2.0]), Err(OracleError::DimensionMismatch { .. })));
        assert_eq!(oracle.ledger().used(), 2);
    }

    #[test]
    fn inconsistent_parameters_rejected() {
        let bad = SyntheticObjective::Quadratic { a: vec![1.0], b: vec![1.0, 2.0] };
        assert!(SyntheticOracle::new(bad, 10).is_err());
        let bad = SyntheticObjective::SoftmaxRegression { w: vec![1.0, 2.0], b: vec![0.0, 0.0], target: 2 };
        assert!(bad.validate().is_err());
    }
}

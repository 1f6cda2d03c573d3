//! Targeted L∞ projected gradient descent driven by estimated gradients.
//!
//! Each iteration estimates the gradient of the targeted cross-entropy at the
//! current iterate, takes a signed step of size `α`, projects back onto the
//! ε-ball around the clean input and the input domain, and spends one query
//! checking whether the prediction has reached the target.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::estimator::{estimate_gradient, query_cost, EstimateError, EstimatorConfig};
use crate::oracle::{
    least_likely_class, predicted_class, BudgetSlice, Oracle, OracleError, TargetLoss,
    DEFAULT_BUDGET,
};
use crate::rng::SeededRng;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MAX_ITERATIONS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("clean input is outside the domain [{lo}, {hi}]")]
    OutOfDomain { lo: f64, hi: f64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Estimate(EstimateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L∞ radius ε.
    pub epsilon: f64,
    /// Signed step length α.
    pub step_size: f64,
    pub estimator: EstimatorConfig,
    pub max_iterations: u64,
    /// Input domain bounds, applied after projection.
    pub clip: Option<(f64, f64)>,
    /// Queries available to this attack, target selection included.
    pub budget: u64,
}

impl AttackConfig {
    /// Defaults for classifier inputs on `[0, 1]`: ε = 0.05, α = ε/10.
    pub fn new(estimator: EstimatorConfig) -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            step_size: DEFAULT_EPSILON / 10.0,
            estimator,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            clip: Some((0.0, 1.0)),
            budget: DEFAULT_BUDGET,
        }
    }

    /// Sets ε and resets α to ε/10.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self.step_size = epsilon / 10.0;
        self
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::Config(m));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if self.epsilon > 0.0 && !(self.step_size > 0.0 && self.step_size <= self.epsilon) {
            return bad(format!(
                "step size must lie in (0, epsilon = {}], got {}",
                self.epsilon, self.step_size
            ));
        }
        if let Some((lo, hi)) = self.clip {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return bad(format!("empty domain [{lo}, {hi}]"));
            }
        }
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        self.estimator
            .validate()
            .map_err(|e| AttackError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// The query budget ran out.
    Budget,
    /// `max_iterations` steps without reaching the target.
    IterationCap,
    /// ε = 0 and the clean prediction is not the target.
    ZeroRadius,
}

/// Where an attack's queries went.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBreakdown {
    pub target_selection: u64,
    pub estimation: u64,
    pub success_checks: u64,
}

impl QueryBreakdown {
    pub fn total(&self) -> u64 {
        self.target_selection + self.estimation + self.success_checks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub success: bool,
    pub queries: u64,
    pub iterations: u64,
    pub x_adv: Vec<f64>,
    pub linf_dist: f64,
    pub target: usize,
    pub failure_reason: Option<FailureReason>,
    pub breakdown: QueryBreakdown,
}

/// Rounding allowance on `‖x - x0‖∞ <= ε`: the clamp bounds `x0 ± ε` are
/// themselves rounded.
pub const BALL_SLACK: f64 = 1e-12;

/// Clamps `x` componentwise into `[x0 - ε, x0 + ε]`.
pub fn project_linf(x: &[f64], x0: &[f64], epsilon: f64) -> Vec<f64> {
    x.iter()
        .zip(x0)
        .map(|(&v, &c)| v.clamp(c - epsilon, c + epsilon))
        .collect()
}

pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One signed descent step, projected onto the ball and clipped to the domain.
pub fn pgd_step(x: &[f64], grad: &[f64], x0: &[f64], cfg: &AttackConfig) -> Vec<f64> {
    let moved: Vec<f64> = x
        .iter()
        .zip(grad)
        .map(|(&v, &g)| v - cfg.step_size * sign(g))
        .collect();
    let mut next = project_linf(&moved, x0, cfg.epsilon);
    if let Some((lo, hi)) = cfg.clip {
        next.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
    next
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs a targeted attack from `x0`. Picks the least likely class as target
/// when `target` is `None`.
pub fn run_attack(
    oracle: &dyn Oracle,
    x0: &[f64],
    cfg: &AttackConfig,
    rng: &mut SeededRng,
    target: Option<usize>,
) -> Result<AttackOutcome, AttackError> {
    cfg.validate()?;
    if x0.len() != oracle.input_dim() {
        return Err(OracleError::DimensionMismatch {
            expected: oracle.input_dim(),
            got: x0.len(),
        }
        .into());
    }
    if let Some((lo, hi)) = cfg.clip {
        if x0.iter().any(|v| !(lo..=hi).contains(v)) {
            return Err(AttackError::OutOfDomain { lo, hi });
        }
    }
    if let Some(t) = target {
        if t >= oracle.num_classes() {
            return Err(OracleError::BadTarget {
                target: t,
                num_classes: oracle.num_classes(),
            }
            .into());
        }
    }

    let slice = BudgetSlice::new(oracle, cfg.budget);
    let mut run = Run {
        slice: &slice,
        x0,
        x: x0.to_vec(),
        iterations: 0,
        breakdown: QueryBreakdown::default(),
        target: target.unwrap_or(0),
    };

    match target {
        Some(_) => {}
        None => match least_likely_class(&slice, x0) {
            Ok(t) => {
                run.breakdown.target_selection = 1;
                run.target = t;
            }
            Err(e) => return run.finish_with_error(e),
        },
    }

    if cfg.epsilon == 0.0 {
        return match predicted_class(&slice, x0) {
            Ok(pred) => {
                run.breakdown.success_checks += 1;
                let reason = (pred != run.target).then_some(FailureReason::ZeroRadius);
                Ok(run.finish(reason))
            }
            Err(e) => run.finish_with_error(e),
        };
    }

    let loss = TargetLoss::new(&slice, run.target)?;
    let cost = query_cost(&cfg.estimator);
    for _ in 0..cfg.max_iterations {
        let estimate = match estimate_gradient(&loss, &run.x, &cfg.estimator, rng) {
            Ok(est) => est,
            Err(e) => {
                run.breakdown.estimation += e.spent();
                return match e {
                    EstimateError::Oracle { source, .. } => run.finish_with_error(source),
                    other => Err(AttackError::Estimate(other)),
                };
            }
        };
        debug_assert_eq!(estimate.queries_used, cost);
        run.breakdown.estimation += estimate.queries_used;
        run.x = pgd_step(&run.x, &estimate.grad, x0, cfg);
        run.iterations += 1;
        debug_assert!(linf_distance(&run.x, x0) <= cfg.epsilon + BALL_SLACK);

        match predicted_class(&slice, &run.x) {
            Ok(pred) => {
                run.breakdown.success_checks += 1;
                if pred == run.target {
                    debug!(iterations = run.iterations, "target reached");
                    return Ok(run.finish(None));
                }
            }
            Err(e) => return run.finish_with_error(e),
        }
    }
    Ok(run.finish(Some(FailureReason::IterationCap)))
}

struct Run<'a> {
    slice: &'a BudgetSlice<'a>,
    x0: &'a [f64],
    x: Vec<f64>,
    iterations: u64,
    breakdown: QueryBreakdown,
    target: usize,
}

impl Run<'_> {
    fn finish(self, failure_reason: Option<FailureReason>) -> AttackOutcome {
        let queries = self.slice.ledger().used();
        debug_assert_eq!(queries, self.breakdown.total());
        AttackOutcome {
            success: failure_reason.is_none(),
            queries,
            iterations: self.iterations,
            linf_dist: linf_distance(&self.x, self.x0),
            x_adv: self.x,
            target: self.target,
            failure_reason,
            breakdown: self.breakdown,
        }
    }

    fn finish_with_error(self, e: OracleError) -> Result<AttackOutcome, AttackError> {
        if e.is_budget() {
            Ok(self.finish(Some(FailureReason::Budget)))
        } else {
            Err(e.into())
        }
    }
}

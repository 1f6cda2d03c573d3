//! The black-box boundary: metered logits, targeted loss and query ledgers.
//!
//! Every model evaluation goes through an [`Oracle`] and is charged to its
//! [`QueryLedger`] before the model is consulted. A charge that would exceed
//! the budget is refused and the model is never evaluated.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

/// Default per-attack query budget.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("query budget exhausted ({used} of {budget} used)")]
    BudgetExhausted { used: u64, budget: u64 },
    #[error("input has {got} components, oracle expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target class {target} out of range for {num_classes} classes")]
    BadTarget { target: usize, num_classes: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("remote oracle error: {0}")]
    Remote(String),
}

impl OracleError {
    pub fn is_budget(&self) -> bool {
        matches!(self, OracleError::BudgetExhausted { .. })
    }
}

/// Exact count of served queries against a fixed budget.
///
/// Charging is a compare-and-swap on the post-increment value, so concurrent
/// callers never push `used` past `budget` and never under-count.
#[derive(Debug)]
pub struct QueryLedger {
    used: AtomicU64,
    budget: u64,
}

impl QueryLedger {
    pub fn new(budget: u64) -> Self {
        Self::with_used(0, budget)
    }

    pub fn with_used(used: u64, budget: u64) -> Self {
        Self {
            used: AtomicU64::new(used),
            budget,
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget.saturating_sub(self.used())
    }

    /// Reserves one query, or refuses without changing the count.
    pub fn try_charge(&self) -> Result<(), OracleError> {
        let mut current = self.used.load(Ordering::SeqCst);
        loop {
            let next = current + 1;
            if next > self.budget {
                return Err(OracleError::BudgetExhausted {
                    used: current,
                    budget: self.budget,
                });
            }
            match self
                .used
                .compare_exchange(current, next, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return Ok(()),
                Err(actual) => current = actual,
            }
        }
    }

    /// Overwrites the count with an externally observed value.
    pub fn sync_to(&self, used: u64) {
        self.used.store(used, Ordering::SeqCst);
    }

    /// Returns a reserved query that was never served.
    pub fn refund(&self) {
        self.used.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Default for QueryLedger {
    fn default() -> Self {
        Self::new(DEFAULT_BUDGET)
    }
}

/// A pure classifier: the thing behind the black box.
pub trait Classifier: Send + Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Raw class scores. Must be a pure function of `x`.
    fn forward(&self, x: &[f64]) -> Vec<f64>;
}

impl<C: Classifier + ?Sized> Classifier for Arc<C> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (**self).forward(x)
    }
}

/// Metered access to class scores.
pub trait Oracle: Send + Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn ledger(&self) -> &QueryLedger;
    /// Whether `logits` may be called from several threads at once.
    fn concurrent_safe(&self) -> bool;
    /// Class scores at `x`; charges exactly one query on success.
    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, OracleError>;
}

/// Metered access to a scalar objective `f`.
pub trait ScalarOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn ledger(&self) -> &QueryLedger;
    fn concurrent_safe(&self) -> bool;
    /// `f(x)`; charges exactly one query on success.
    fn value(&self, x: &[f64]) -> Result<f64, OracleError>;
}

/// An in-process oracle over a [`Classifier`].
#[derive(Debug)]
pub struct LocalOracle<C> {
    model: C,
    ledger: QueryLedger,
}

impl<C: Classifier> LocalOracle<C> {
    pub fn new(model: C, budget: u64) -> Self {
        Self {
            model,
            ledger: QueryLedger::new(budget),
        }
    }

    pub fn model(&self) -> &C {
        &self.model
    }
}

impl<C: Classifier> Oracle for LocalOracle<C> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn concurrent_safe(&self) -> bool {
        true
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        check_dim(self.input_dim(), x)?;
        self.ledger.try_charge()?;
        Ok(self.model.forward(x))
    }
}

/// A budget carved out of another oracle: queries are charged to both the
/// slice and the underlying oracle.
pub struct BudgetSlice<'a> {
    inner: &'a dyn Oracle,
    ledger: QueryLedger,
}

impl<'a> BudgetSlice<'a> {
    pub fn new(inner: &'a dyn Oracle, budget: u64) -> Self {
        Self {
            inner,
            ledger: QueryLedger::new(budget),
        }
    }
}

impl Oracle for BudgetSlice<'_> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn concurrent_safe(&self) -> bool {
        self.inner.concurrent_safe()
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        check_dim(self.input_dim(), x)?;
        self.ledger.try_charge()?;
        self.inner.logits(x).inspect_err(|_| self.ledger.refund())
    }
}

/// Cross-entropy of `softmax(logits)` against `target`, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    max + sum.ln() - logits[target]
}

/// Index of the smallest score; ties go to the lowest index.
pub fn argmin(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s < scores[best] { i } else { best })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best })
}

/// Targeted loss at `x`. Costs one query.
pub fn loss_at_target(oracle: &dyn Oracle, x: &[f64], target: usize) -> Result<f64, OracleError> {
    check_target(oracle, target)?;
    let z = oracle.logits(x)?;
    Ok(cross_entropy(&z, target))
}

/// Least likely class at `x`. Costs one query.
pub fn least_likely_class(oracle: &dyn Oracle, x: &[f64]) -> Result<usize, OracleError> {
    Ok(argmin(&oracle.logits(x)?))
}

/// Predicted class at `x`. Costs one query.
pub fn predicted_class(oracle: &dyn Oracle, x: &[f64]) -> Result<usize, OracleError> {
    Ok(argmax(&oracle.logits(x)?))
}

fn check_dim(expected: usize, x: &[f64]) -> Result<(), OracleError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(OracleError::DimensionMismatch {
            expected,
            got: x.len(),
        })
    }
}

fn check_target(oracle: &dyn Oracle, target: usize) -> Result<(), OracleError> {
    if target < oracle.num_classes() {
        Ok(())
    } else {
        Err(OracleError::BadTarget {
            target,
            num_classes: oracle.num_classes(),
        })
    }
}

/// The targeted loss of a classifier oracle viewed as a scalar objective.
pub struct TargetLoss<'a> {
    oracle: &'a dyn Oracle,
    target: usize,
}

impl<'a> TargetLoss<'a> {
    pub fn new(oracle: &'a dyn Oracle, target: usize) -> Result<Self, OracleError> {
        check_target(oracle, target)?;
        Ok(Self { oracle, target })
    }
}

impl ScalarOracle for TargetLoss<'_> {
    fn dim(&self) -> usize {
        self.oracle.input_dim()
    }

    fn ledger(&self) -> &QueryLedger {
        self.oracle.ledger()
    }

    fn concurrent_safe(&self) -> bool {
        self.oracle.concurrent_safe()
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        Ok(cross_entropy(&self.oracle.logits(x)?, self.target))
    }
}

//! Zeroth-order gradient estimation and query-metered black-box attacks.
//!
//! The crate estimates gradients of a black-box objective from function
//! values alone, using random directions from one of three distributions and
//! one- or two-sided difference quotients, and uses those estimates to drive
//! a targeted L∞ PGD attack against a classifier that only exposes logits.
//!
//! - [`directions`]: Gaussian, Rademacher and uniform directions and `ξ = Δ⁻¹`.
//! - [`estimator`]: the gradient estimates and their query costs.
//! - [`diagnostics`]: accuracy and bias of estimates against known gradients.
//! - [`oracle`], [`mlp`], [`synthetic`]: metered black boxes.
//! - [`attack`]: projected gradient descent under a query budget.
//! - [`harness`]: experiment grids and CSV/JSON reports.
//! - [`remote`]: the oracle over TCP.

pub mod attack;
pub mod diagnostics;
pub mod directions;
pub mod estimator;
pub mod harness;
pub mod mlp;
pub mod oracle;
pub mod remote;
pub mod rng;
pub mod synthetic;

pub use attack::{run_attack, AttackConfig, AttackOutcome, FailureReason};
pub use directions::DirectionKind;
pub use estimator::{estimate_gradient, query_cost, EstimatorConfig, GradientEstimate, Method, Sidedness};
pub use oracle::{Classifier, LocalOracle, Oracle, OracleError, QueryLedger, ScalarOracle};
pub use rng::SeededRng;

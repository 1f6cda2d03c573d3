//! Reference computations shared by the integration tests.

use zog::synthetic::SyntheticObjective;

/// Central difference quotient of `f` along every axis.
pub fn central_difference(f: &SyntheticObjective, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[j] += step;
            lo[j] -= step;
            (f.value(&hi) - f.value(&lo)) / (2.0 * step)
        })
        .collect()
}

/// `‖a - b‖₂ / ‖a‖₂`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

//! Pullback audits on a uniform grid.

use serde::Serialize;

use super::{Density1d, Map1d};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PullbackReport {
    pub grid: usize,
    pub lo: f64,
    pub hi: f64,
    /// `max |φ′(x)·ω(φ(x)) − τ(x)|` over the grid.
    pub max_residual: f64,
    /// `Σ |∫_{φ(x_i)}^{φ(x_{i+1})} ω − ∫_{x_i}^{x_{i+1}} τ|`.
    pub l1_error: f64,
    pub monotonicity_violations: usize,
}

impl PullbackReport {
    pub fn merge(&mut self, other: &PullbackReport) {
        self.grid += other.grid;
        self.max_residual = self.max_residual.max(other.max_residual);
        self.l1_error += other.l1_error;
        self.monotonicity_violations += other.monotonicity_violations;
    }
}

pub fn grid_points(lo: f64, hi: f64, grid: usize) -> Vec<f64> {
    let n = grid.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Checks `φ*ω = τ` on `grid` points of `[lo, hi]`.
pub fn verify_pullback(
    phi: &dyn Map1d,
    omega: &dyn Density1d,
    tau: &dyn Density1d,
    lo: f64,
    hi: f64,
    grid: usize,
) -> PullbackReport {
    let xs = grid_points(lo, hi, grid);
    let ys: Vec<f64> = xs.iter().map(|&x| phi.apply(x)).collect();
    let mut report = PullbackReport { grid: xs.len(), lo, hi, ..Default::default() };
    for (&x, &y) in xs.iter().zip(&ys) {
        let r = (phi.derivative(x) * omega.eval(y) - tau.eval(x)).abs();
        report.max_residual = report.max_residual.max(r);
    }
    for i in 1..xs.len() {
        if !(ys[i] > ys[i - 1]) {
            report.monotonicity_violations += 1;
        }
        report.l1_error += (omega.mass(ys[i - 1], ys[i]) - tau.mass(xs[i - 1], xs[i])).abs();
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::PlDensity;

    struct Square;
    impl Map1d for Square {
        fn apply(&self, x: f64) -> f64 {
            x * x
        }
        fn derivative(&self, x: f64) -> f64 {
            2.0 * x
        }
    }

    #[test]
    fn identity_has_zero_residual() {
        let w = PlDensity::new(vec![0.0, 1.0], vec![1.0, 3.0]);
        let r = verify_pullback(&|x: f64| x, &w, &w, 0.0, 1.0, 1000);
        assert!(r.max_residual < 1e-9);
        assert_eq!(r.monotonicity_violations, 0);
        let exact = verify_pullback(&Square, &PlDensity::constant(0.0, 1.0, 1.0), &PlDensity::new(vec![0.0, 1.0], vec![0.0, 2.0]), 0.0, 1.0, 1000);
        assert!(exact.max_residual < 1e-12);
        assert!(exact.l1_error < 1e-12);
    }

    #[test]
    fn perturbed_map_is_caught() {
        let w = PlDensity::constant(0.0, 1.0, 1.0);
        let t = PlDensity::new(vec![0.0, 1.0], vec![0.0, 2.0]);
        let bad = |x: f64| x * x + 0.01 * (std::f64::consts::PI * x).sin();
        let r = verify_pullback(&bad, &w, &t, 0.0, 1.0, 1000);
        assert!(r.max_residual > 1e-3);
        assert!(r.l1_error > 1e-4);
        let folded = |x: f64| if x < 0.5 { x } else { 1.0 - x };
        assert!(verify_pullback(&folded, &w, &w, 0.0, 1.0, 100).monotonicity_violations > 0);
    }
}

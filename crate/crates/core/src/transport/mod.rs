//! Fiber diffeomorphisms for bundles whose fibers are paths and rays.

pub mod audit;
pub mod collar;
pub mod density;
pub mod metric;
pub mod moser;
pub mod pipeline;
pub mod primitive;
pub mod sampled;

use std::sync::Arc;

use thiserror::Error;

pub use audit::{verify_pullback, PullbackReport};
pub use collar::{collar_family, collar_match, Collar, CollaredDensity, CollarSettings, HalfCollar};
pub use density::{integrate, PlDensity};
pub use metric::{densities_from_masses, FiberPath, MetricFiber};
pub use moser::{moser_1d, FiberMap, MoserMap, Stage};
pub use pipeline::{paste_pieces, solve_transport, TransportSolution};
pub use primitive::{primitive_1d, Primitive};
pub use sampled::SampledMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("unsupported fiber geometry: {0}")]
    UnsupportedFiberGeometry(String),
    #[error("mass mismatch on [{lo}, {hi}]: source {source_mass}, target {target_mass}")]
    MassMismatch { lo: f64, hi: f64, source_mass: f64, target_mass: f64 },
    #[error("density not positive on [{lo}, {hi}] (min {min})")]
    NotPositive { lo: f64, hi: f64, min: f64 },
    #[error("primitive needs zero total integral, residual {residual:e}")]
    NonzeroTotal { residual: f64 },
    #[error("collar at {cut} too narrow after {attempts} attempts")]
    CollarTooNarrow { cut: f64, attempts: usize },
    #[error("bisection for t at {cut} did not converge (|theta| = {residual:e})")]
    NoRoot { cut: f64, residual: f64 },
    #[error("interface at {cut} has no matching collar")]
    UnmatchedInterface { cut: f64 },
    #[error("{0}")]
    Layout(String),
}

/// A continuous nonnegative density on an interval of the line.
pub trait Density1d: Send + Sync {
    fn eval(&self, x: f64) -> f64;
    /// Some primitive of the density.
    fn cdf(&self, x: f64) -> f64;
    fn inverse_cdf(&self, m: f64) -> f64;
    /// A lower bound for the density on `[a, b]`.
    fn lower_bound(&self, a: f64, b: f64) -> f64;

    fn mass(&self, a: f64, b: f64) -> f64 {
        self.cdf(b) - self.cdf(a)
    }
}

pub type SharedDensity = Arc<dyn Density1d>;

impl Density1d for PlDensity {
    fn eval(&self, x: f64) -> f64 {
        PlDensity::eval(self, x)
    }

    fn cdf(&self, x: f64) -> f64 {
        PlDensity::cdf(self, x)
    }

    fn inverse_cdf(&self, m: f64) -> f64 {
        PlDensity::inverse_cdf(self, m)
    }

    fn lower_bound(&self, a: f64, b: f64) -> f64 {
        let mut m = PlDensity::eval(self, a).min(PlDensity::eval(self, b));
        for (&x, &y) in self.xs.iter().zip(&self.ys) {
            if x > a && x < b {
                m = m.min(y);
            }
        }
        m
    }
}

/// Monotone real map with a derivative, as audited by [`verify_pullback`].
pub trait Map1d {
    fn apply(&self, x: f64) -> f64;

    fn derivative(&self, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (self.apply(x + h) - self.apply(x - h)) / (2.0 * h)
    }
}

impl<F: Fn(f64) -> f64> Map1d for F {
    fn apply(&self, x: f64) -> f64 {
        self(x)
    }
}

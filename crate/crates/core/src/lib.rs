//! Moser-type stability for fiber volume forms on discrete exhausted
//! bundles.
//!
//! The combinatorial layer ([`bundle`], [`release`], [`slicing`],
//! [`filtration`]) is exact and generic over [`Scalar`]; [`transport`]
//! realizes fiber maps numerically on 1-manifold fibers.

pub mod bundle;
pub mod cli;
pub mod filtration;
pub mod fixtures;
pub mod release;
pub mod scalar;
pub mod slicing;
pub mod transport;

pub use bundle::{
    build_total, equal_fiber_integral, fiber_integral, validate_bundle, BaseGraph, DiscreteBundle,
    FiberGraph, FiberVertex, FiberVolume, Monodromy, Region,
};
pub use release::{approximate_split, pullback, pushforward, release, released_integral, CoveringMap, ReleaseBase};
pub use scalar::{rat, Cut, ExtReal, Rational, Scalar};
pub use slicing::{build_tree, ends_of_fiber, ends_of_total, saturated_slice, saturating_threshold, SlicingTree};
pub use filtration::{check_hypotheses, pieces, run_filtration, verify_invariants, FiltrationRun};
pub use transport::{moser_1d, solve_transport, CollarSettings, PlDensity, TransportSolution};

/// Exact fiber volume used throughout the solver.
pub type Volume = FiberVolume<Rational>;
/// Extended exact value.
pub type ExtRational = ExtReal<Rational>;

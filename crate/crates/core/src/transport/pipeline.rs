//! Assembling the fiber map from a finished filtration run.
//!
//! Each path fiber gets the stages
//! `ω_0 → ω_1 → … → ω_N → ω′ → τ_N → … → τ_0`, where the round-`k` stages
//! live on the runs of `Shta C` for the depth-`2k − 2` nodes `C`, the collar
//! stage on half-collars around every interface between pieces, and the
//! piece stage on the pieces themselves. The composite `g_0 ∘ … ∘ g_last`
//! then pulls `ω_0` back to `τ_0`.

use std::sync::Arc;

use serde::Serialize;

use super::audit::{grid_points, verify_pullback, PullbackReport};
use super::collar::{collar_match, Collar, CollarSettings, CollaredDensity};
use super::metric::{boundary_floors, fiber_paths, finite_span, masses_f64, path_masses, tent_density, FiberPath};
use super::moser::{moser_1d, shared, FiberMap, Stage};
use super::{Density1d, PlDensity, SharedDensity, TransportError};
use crate::bundle::{DiscreteBundle, FiberVolume, Region};
use crate::filtration::{pieces, FiltrationRun};
use crate::scalar::Scalar;

/// A stretch of consecutive path positions `[first, last]` and its interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PieceInterval {
    pub first: usize,
    pub last: usize,
    pub lo: f64,
    pub hi: f64,
    /// Do the two forms differ somewhere on it?
    pub changed: bool,
}

/// One density of the chain on a path, with its exact-mass image.
#[derive(Clone, Debug)]
pub struct ChainForm {
    pub label: String,
    pub density: PlDensity,
    pub masses: Vec<Option<f64>>,
}

pub struct FiberSolution {
    pub path: FiberPath,
    pub base_id: u32,
    pub forms: Vec<ChainForm>,
    pub modified: Arc<CollaredDensity>,
    pub map: FiberMap,
    /// Stages `0..pieces_stage + 1` carry `ω_0` to `τ_N`.
    pub pieces_stage: usize,
    pub collars: Vec<Collar>,
    pub domain: (f64, f64),
}

impl FiberSolution {
    pub fn omega(&self) -> &PlDensity {
        &self.forms[0].density
    }

    pub fn tau(&self) -> &PlDensity {
        &self.forms.last().unwrap().density
    }
}

pub struct TransportSolution {
    pub settings: CollarSettings,
    pub fibers: Vec<FiberSolution>,
}

fn runs(bundle: &DiscreteBundle, path: &FiberPath, region: &Region) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (p, &v) in path.vertices.iter().enumerate() {
        if region.contains(bundle.cell(path.base, v)) {
            match out.last_mut() {
                Some(r) if r.1 + 1 == p => r.1 = p,
                _ => out.push((p, p)),
            }
        }
    }
    out
}

fn interval(run: (usize, usize), span: (usize, usize)) -> (f64, f64) {
    let lo = if run.0 < span.0 { f64::NEG_INFINITY } else { run.0 as f64 - 0.5 };
    let hi = if run.1 > span.1 { f64::INFINITY } else { run.1 as f64 + 0.5 };
    (lo, hi)
}

fn piece_intervals<S: Scalar>(
    runs: &[(usize, usize)],
    span: (usize, usize),
    a: &[Option<S>],
    b: &[Option<S>],
) -> Vec<PieceInterval> {
    runs.iter()
        .map(|&r| {
            let (lo, hi) = interval(r, span);
            let changed = (r.0..=r.1).any(|p| a[p] != b[p]);
            PieceInterval { first: r.0, last: r.1, lo, hi, changed }
        })
        .collect()
}

fn stage_on(
    label: String,
    src: &SharedDensity,
    tgt: &SharedDensity,
    intervals: &[PieceInterval],
) -> Result<Stage, TransportError> {
    let maps = intervals
        .iter()
        .filter(|iv| iv.changed)
        .map(|iv| moser_1d(src.clone(), tgt.clone(), iv.lo, iv.hi))
        .collect::<Result<Vec<_>, _>>()?;
    Stage::new(label, maps)
}

/// Piece stage from `src` (already collared) to `tgt`: every interface
/// between consecutive pieces needs a collar at its cut.
pub fn paste_pieces(
    src: SharedDensity,
    tgt: SharedDensity,
    pieces: &[PieceInterval],
    collars: &[Collar],
) -> Result<Stage, TransportError> {
    let mut sorted = pieces.to_vec();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    for w in sorted.windows(2) {
        if w[0].hi == w[1].lo && !collars.iter().any(|c| c.cut == w[0].hi) {
            return Err(TransportError::UnmatchedInterface { cut: w[0].hi });
        }
    }
    stage_on("pieces".into(), &src, &tgt, &sorted)
}

/// Builds the fiber map on every path fiber of `bundle` from a finished
/// filtration run.
pub fn solve_transport<S: Scalar>(
    bundle: &DiscreteBundle,
    run: &FiltrationRun<S>,
    settings: &CollarSettings,
) -> Result<TransportSolution, TransportError> {
    let paths = fiber_paths(bundle)?;
    let n = run.completed();
    let layout = |e: crate::slicing::SliceError| TransportError::Layout(e.to_string());
    let tree = run.tree(bundle).map_err(layout)?;
    let cover = pieces(bundle, run).map_err(layout)?;
    let mut chain: Vec<(String, &FiberVolume<S>)> = Vec::new();
    for (k, w) in run.omegas.iter().enumerate() {
        chain.push((format!("omega_{k}"), w));
    }
    for (k, t) in run.taus.iter().enumerate().rev() {
        chain.push((format!("tau_{k}"), t));
    }
    let all: Vec<&FiberVolume<S>> = chain.iter().map(|c| c.1).collect();
    // slices used by each round, shared by all paths
    let mut round_regions: Vec<Vec<Region>> = Vec::new();
    for k in 1..=n {
        let mut regs = Vec::new();
        for &c in tree.level(2 * k - 2) {
            regs.push(tree.shta(bundle, c).map_err(layout)?);
        }
        round_regions.push(regs);
    }

    let mut fibers = Vec::new();
    for path in paths {
        let exact: Vec<Vec<Option<S>>> = all.iter().map(|f| path_masses(bundle, f, &path)).collect();
        let span = finite_span(&exact[0])?;
        if exact.iter().any(|m| finite_span(m).ok() != Some(span)) {
            return Err(TransportError::UnsupportedFiberGeometry(format!(
                "tail classes differ between forms on fiber component {} over base vertex {}",
                path.component, bundle.base.vertices[path.base]
            )));
        }
        let approx: Vec<Vec<Option<f64>>> = exact.iter().map(|m| masses_f64(m)).collect();
        let floors = boundary_floors(&approx);
        let mut forms = Vec::new();
        for ((label, _), masses) in chain.iter().zip(approx) {
            forms.push(ChainForm { label: label.clone(), density: tent_density(&masses, &floors)?, masses });
        }
        let dens: Vec<SharedDensity> = forms.iter().map(|f| shared(f.density.clone())).collect();
        let mut stages = Vec::new();
        // ω_{k-1} → ω_k
        for k in 1..=n {
            let rs: Vec<(usize, usize)> = round_regions[k - 1].iter().flat_map(|r| runs(bundle, &path, r)).collect();
            let iv = piece_intervals(&rs, span, &exact[k - 1], &exact[k]);
            stages.push(stage_on(format!("omega round {k}"), &dens[k - 1], &dens[k], &iv)?);
        }
        // pieces and the interfaces between them
        let mut piece_runs: Vec<(usize, usize)> = cover.iter().flat_map(|p| runs(bundle, &path, &p.cells)).collect();
        piece_runs.sort();
        let piv = piece_intervals(&piece_runs, span, &exact[n], &exact[n + 1]);
        let cuts: Vec<f64> = piv
            .windows(2)
            .filter(|w| w[0].last + 1 == w[1].first && w[0].hi.is_finite())
            .map(|w| w[0].hi)
            .collect();
        let cm = collar_match(&forms[n].density, &forms[n + 1].density, &cuts, settings)?;
        stages.push(cm.stage.clone());
        let modified: SharedDensity = cm.density.clone();
        stages.push(paste_pieces(modified, dens[n + 1].clone(), &piv, &cm.density.collars)?);
        let pieces_stage = stages.len() - 1;
        // τ_k → τ_{k-1}; chain index of τ_k is 2n + 1 − k
        for k in (1..=n).rev() {
            let (i, j) = (2 * n + 1 - k, 2 * n + 2 - k);
            let rs: Vec<(usize, usize)> = round_regions[k - 1].iter().flat_map(|r| runs(bundle, &path, r)).collect();
            let iv = piece_intervals(&rs, span, &exact[i], &exact[j]);
            stages.push(stage_on(format!("tau round {k}"), &dens[i], &dens[j], &iv)?);
        }
        let map = FiberMap::new(stages);
        let len = path.vertices.len();
        let lo = if span.0 > 0 { span.0 as f64 - 2.5 } else { -0.5 };
        let hi = if span.1 + 1 < len { span.1 as f64 + 2.5 } else { len as f64 - 0.5 };
        fibers.push(FiberSolution {
            base_id: bundle.base.vertices[path.base],
            path,
            forms,
            modified: cm.density.clone(),
            collars: cm.density.collars.clone(),
            map,
            pieces_stage,
            domain: (lo, hi),
        });
    }
    Ok(TransportSolution { settings: *settings, fibers })
}

/// Audit numbers for one path fiber.
#[derive(Clone, Debug, Serialize)]
pub struct FiberAudit {
    pub base_vertex: u32,
    pub fiber_component: usize,
    pub pullback: PullbackReport,
    /// Grid points outside the change support where `φ(x) ≠ x`.
    pub identity_violations: usize,
    pub identity_points: usize,
    /// Worst `|∫_cell ρ − mass|` over all forms of the chain.
    pub cell_mass_error: f64,
    /// Worst `|∫_{Φ(cell)} ω_0 − τ_N(cell)|` for `Φ` the part up to `τ_N`.
    pub tau_n_error: f64,
    /// Worst gap between the cubic surrogate and the exact map at midpoints.
    pub interpolation_error: f64,
    pub support: Vec<(f64, f64)>,
    pub collars: Vec<Collar>,
}

pub struct AuditRow {
    pub base_vertex: u32,
    pub fiber_component: usize,
    pub x: f64,
    pub phi_x: f64,
    pub omega: f64,
    pub tau: f64,
    pub residual: f64,
}

impl FiberSolution {
    pub fn audit(&mut self, grid: usize) -> (FiberAudit, Vec<AuditRow>) {
        let (lo, hi) = self.domain;
        let xs = grid_points(lo, hi, grid);
        let mut fine = grid_points(lo, hi, 8 * grid);
        for st in &self.map.stages {
            fine.extend(st.intervals().flat_map(|(a, b)| [a, b]).filter(|x| x.is_finite() && *x > lo && *x < hi));
        }
        fine.sort_by(f64::total_cmp);
        fine.dedup();
        self.map.sample(&fine);
        let omega = self.forms[0].density.clone();
        let tau = self.forms.last().unwrap().density.clone();
        let pullback = verify_pullback(&self.map, &omega, &tau, lo, hi, grid);
        let mut rows = Vec::with_capacity(xs.len());
        let (mut identity_violations, mut identity_points) = (0, 0);
        for &x in &xs {
            let (y, d) = self.map.eval(x);
            if !self.map.in_support(x) {
                identity_points += 1;
                if y != x {
                    identity_violations += 1;
                }
            }
            rows.push(AuditRow {
                base_vertex: self.base_id,
                fiber_component: self.path.component,
                x,
                phi_x: y,
                omega: omega.eval(x),
                tau: tau.eval(x),
                residual: (d * omega.eval(y) - tau.eval(x)).abs(),
            });
        }
        let mut cell_mass_error: f64 = 0.0;
        for f in &self.forms {
            for (p, m) in f.masses.iter().enumerate() {
                if let Some(m) = m {
                    let got = f.density.mass(p as f64 - 0.5, p as f64 + 0.5);
                    cell_mass_error = cell_mass_error.max((got - m).abs());
                }
            }
        }
        let n_index = (self.forms.len() - 1) / 2;
        let mut tau_n_error: f64 = 0.0;
        for (p, m) in self.forms[n_index + 1].masses.iter().enumerate() {
            if let Some(m) = m {
                let a = self.map.eval_prefix(p as f64 - 0.5, self.pieces_stage + 1).0;
                let b = self.map.eval_prefix(p as f64 + 0.5, self.pieces_stage + 1).0;
                tau_n_error = tau_n_error.max((omega.mass(a, b) - m).abs());
            }
        }
        let mut interpolation_error: f64 = 0.0;
        if let Some(s) = &self.map.sampled {
            for w in xs.windows(2) {
                let x = 0.5 * (w[0] + w[1]);
                interpolation_error = interpolation_error.max((s.eval(x).0 - self.map.eval(x).0).abs());
            }
        }
        let audit = FiberAudit {
            base_vertex: self.base_id,
            fiber_component: self.path.component,
            pullback,
            identity_violations,
            identity_points,
            cell_mass_error,
            tau_n_error,
            interpolation_error,
            support: self.map.support.clone(),
            collars: self.collars.clone(),
        };
        (audit, rows)
    }
}

/// Side masses of the collared density against the source, worst case.
pub fn collar_mass_error(modified: &CollaredDensity) -> f64 {
    let mut worst: f64 = 0.0;
    for c in &modified.collars {
        for side in [super::collar::Side::Minus, super::collar::Side::Plus] {
            let (a, b) = c.interval(side);
            worst = worst.max((modified.mass(a, b) - modified.omega.mass(a, b)).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::run_filtration;
    use crate::fixtures::{self, TailPolicy};
    use crate::transport::collar::collar_family;
    use crate::transport::Map1d;

    fn piece(first: usize, last: usize) -> PieceInterval {
        PieceInterval { first, last, lo: first as f64, hi: last as f64 + 1.0, changed: true }
    }

    // equal masses on [0, 2] and [2, 4], different shapes, both 1 at the cut
    fn two_piece_pair() -> (PlDensity, PlDensity) {
        let w = PlDensity::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 1.0, 1.5, 1.0]);
        let t = PlDensity::new(vec![0.0, 0.5, 2.0, 2.5, 4.0], vec![1.0, 2.0, 1.0, 1.5, 1.0]);
        (w, t)
    }

    #[test]
    fn single_piece_is_the_moser_map() {
        let (w, t) = two_piece_pair();
        let stage = paste_pieces(shared(w.clone()), shared(t.clone()), &[piece(0, 3)], &[]).unwrap();
        let m = moser_1d(shared(w), shared(t), 0.0, 4.0).unwrap();
        for k in 0..=200 {
            let x = k as f64 / 50.0;
            assert_eq!(stage.eval(x).0, m.apply(x));
        }
    }

    #[test]
    fn two_pieces_need_a_collar() {
        let (w, t) = two_piece_pair();
        let pieces = [piece(0, 1), piece(2, 3)];
        let err = paste_pieces(shared(w.clone()), shared(t.clone()), &pieces, &[]).unwrap_err();
        assert!(matches!(err, TransportError::UnmatchedInterface { cut } if cut == 2.0));

        let collars = collar_family(&[(&w, &t)], 2.0, &CollarSettings::default()).unwrap();
        let modified = CollaredDensity::new(w.clone(), t.clone(), collars.clone());
        let stage = paste_pieces(shared(modified), shared(t.clone()), &pieces, &collars).unwrap();
        let (a, b) = collars[0].matched_zone();
        // the modified source already agrees with τ across the cut, so the pasted map fixes it
        assert!((stage.eval(2.0).0 - 2.0).abs() < 1e-10);
        for k in 0..=20 {
            let x = a + (b - a) * k as f64 / 20.0;
            let (y, d) = stage.eval(x);
            assert!((y - x).abs() < 1e-9 && (d - 1.0).abs() < 1e-6, "{x} {y} {d}");
        }
    }

    #[test]
    fn trivial_bundle_end_to_end() {
        let b = fixtures::triv(36);
        let mut rng = fixtures::rng(47);
        for policy in [TailPolicy::AllFinite, TailPolicy::AllInfinite, TailPolicy::Mixed] {
            let (o, t) = fixtures::random_forms(&mut rng, &b, policy);
            let run = run_filtration(&b, &o, &t, 3).map_err(|e| e.0).unwrap();
            let mut sol = solve_transport(&b, &run, &CollarSettings::default()).unwrap();
            for f in sol.fibers.iter_mut() {
                let (a, rows) = f.audit(800);
                assert!(a.pullback.max_residual < 1e-7, "{policy:?} {}", a.pullback.max_residual);
                assert_eq!(a.pullback.monotonicity_violations, 0);
                assert_eq!(a.identity_violations, 0);
                assert!(a.tau_n_error < 1e-10);
                assert_eq!(rows.len(), 800);
            }
        }
    }
}

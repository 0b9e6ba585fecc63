//! Metric realization of path and ray fibers.
//!
//! Position `p` along a fiber path owns the unit cell `[p − ½, p + ½]`. Each
//! cell boundary gets a floor value shared by every form (the smallest mass
//! any of them puts on the two adjacent cells) and a cell of mass `m` with
//! floors `l`, `r` carries the tent through `l`, `2m − (l + r)/2`, `r`. So
//! densities are continuous and positive, and two forms agree on every cell
//! where their masses agree. Infinite tails become half-lines of constant
//! density equal to the floor where they start.

use serde::Serialize;

use super::density::PlDensity;
use super::TransportError;
use crate::bundle::{DiscreteBundle, FiberVolume};
use crate::scalar::{ExtReal, Scalar};

/// One path component of the fiber over a base vertex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FiberPath {
    pub base: usize,
    pub component: usize,
    /// Fiber vertex indices in path order.
    pub vertices: Vec<usize>,
}

/// A path with the density of one form on it.
#[derive(Clone, Debug)]
pub struct MetricFiber {
    pub path: FiberPath,
    pub density: PlDensity,
    /// Per-position mass, `None` on infinite tails.
    pub masses: Vec<Option<f64>>,
}

/// Orders each fiber component as a path, or explains why it is not one.
pub fn fiber_paths(bundle: &DiscreteBundle) -> Result<Vec<FiberPath>, TransportError> {
    let fiber = &bundle.fiber;
    for v in 0..fiber.len() {
        if fiber.neighbors(v).len() > 2 {
            return Err(TransportError::UnsupportedFiberGeometry(format!(
                "fiber vertex {} has degree {}",
                fiber.vertices[v].id,
                fiber.neighbors(v).len()
            )));
        }
    }
    let all: Vec<usize> = (0..fiber.len()).collect();
    let mut orders = Vec::new();
    for comp in fiber.components_of(&all) {
        let start = comp
            .iter()
            .copied()
            .filter(|&v| fiber.neighbors(v).len() < 2)
            .min_by_key(|&v| (fiber.level(v), v))
            .ok_or_else(|| {
                TransportError::UnsupportedFiberGeometry(format!(
                    "fiber component of vertex {} is a cycle",
                    fiber.vertices[comp[0]].id
                ))
            })?;
        let mut order = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        while let Some(&next) = fiber.neighbors(cur).iter().find(|&&w| w != prev && w != cur) {
            order.push(next);
            prev = cur;
            cur = next;
        }
        orders.push(order);
    }
    Ok((0..bundle.base.len())
        .flat_map(|b| {
            orders.iter().enumerate().map(move |(i, o)| FiberPath { base: b, component: i, vertices: o.clone() })
        })
        .collect())
}

/// Per-position masses of `form` on `path`; finite tails spread evenly.
pub fn path_masses<S: Scalar>(bundle: &DiscreteBundle, form: &FiberVolume<S>, path: &FiberPath) -> Vec<Option<S>> {
    let fiber = &bundle.fiber;
    path.vertices
        .iter()
        .map(|&v| match fiber.tail_of(v) {
            Some(t) if fiber.is_horizon_vertex(v) => match form.tail(bundle, path.base, t) {
                ExtReal::Finite(m) => {
                    let k = fiber.tails[t].vertices.len();
                    Some(m.clone() / S::from_usize(k).unwrap())
                }
                ExtReal::Infinite => None,
            },
            _ => Some(form.mass[bundle.cell(path.base, v)].clone()),
        })
        .collect()
}

/// Floor at each boundary `j` (between positions `j − 1` and `j`): the
/// smallest finite mass any list puts next to it.
pub fn boundary_floors(lists: &[Vec<Option<f64>>]) -> Vec<f64> {
    let len = lists.first().map_or(0, Vec::len);
    (0..=len)
        .map(|j| {
            let mut c = f64::INFINITY;
            for l in lists {
                for p in [j.wrapping_sub(1), j] {
                    if let Some(Some(m)) = l.get(p) {
                        c = c.min(*m);
                    }
                }
            }
            c
        })
        .collect()
}

/// Finite positions `[first, last]` of a mass list; infinite cells may only
/// sit at the ends.
pub fn finite_span<T>(masses: &[Option<T>]) -> Result<(usize, usize), TransportError> {
    let first = masses.iter().position(|m| m.is_some());
    let last = masses.iter().rposition(|m| m.is_some());
    match (first, last) {
        (Some(a), Some(b)) if masses[a..=b].iter().all(|m| m.is_some()) => Ok((a, b)),
        (Some(_), Some(_)) => Err(TransportError::UnsupportedFiberGeometry("infinite tail inside a path".into())),
        _ => Err(TransportError::UnsupportedFiberGeometry("path without finite cells".into())),
    }
}

/// Tent density for `masses` with boundary values `floors` (one more entry
/// than `masses`, each at most the adjacent masses).
pub fn tent_density(masses: &[Option<f64>], floors: &[f64]) -> Result<PlDensity, TransportError> {
    let (a, b) = finite_span(masses)?;
    let mut xs = vec![a as f64 - 0.5];
    let mut ys = vec![floors[a]];
    for (p, m) in masses.iter().enumerate().take(b + 1).skip(a) {
        let m = m.unwrap();
        let (l, r) = (floors[p], floors[p + 1]);
        if !(m > 0.0 && l > 0.0 && r > 0.0 && m >= l.max(r)) {
            return Err(TransportError::NotPositive { lo: p as f64 - 0.5, hi: p as f64 + 0.5, min: m.min(l).min(r) });
        }
        xs.extend([p as f64, p as f64 + 0.5]);
        ys.extend([2.0 * m - 0.5 * (l + r), r]);
    }
    let left = (a > 0).then_some(floors[a]);
    let right = (b + 1 < masses.len()).then_some(floors[b + 1]);
    Ok(PlDensity::with_tails(xs, ys, left, right))
}

pub fn masses_f64<S: Scalar>(masses: &[Option<S>]) -> Vec<Option<f64>> {
    masses.iter().map(|m| m.as_ref().map(Scalar::to_f64_lossy)).collect()
}

/// The metric density of `form` alone on every path.
pub fn densities_from_masses<S: Scalar>(
    bundle: &DiscreteBundle,
    form: &FiberVolume<S>,
) -> Result<Vec<MetricFiber>, TransportError> {
    let paths = fiber_paths(bundle)?;
    paths
        .into_iter()
        .map(|path| {
            let masses = masses_f64(&path_masses(bundle, form, &path));
            let density = tent_density(&masses, &boundary_floors(std::slice::from_ref(&masses)))?;
            Ok(MetricFiber { path, density, masses })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scalar::rat;
    use crate::Volume;

    #[test]
    fn unit_masses_give_constant_density() {
        let m = vec![Some(1.0), Some(1.0), Some(1.0)];
        let d = tent_density(&m, &boundary_floors(&[m.clone()])).unwrap();
        for k in 0..=30 {
            assert_eq!(d.eval(-0.5 + k as f64 / 10.0), 1.0);
        }
    }

    #[test]
    fn two_cells_integrate_exactly() {
        let m = vec![Some(1.0), Some(3.0)];
        let d = tent_density(&m, &boundary_floors(&[m.clone()])).unwrap();
        assert_eq!(d.mass(-0.5, 0.5), 1.0);
        assert_eq!(d.mass(0.5, 1.5), 3.0);
        assert!(d.min_value() > 0.0);
    }

    #[test]
    fn branch_vertex_is_unsupported() {
        let b = fixtures::cyl(3);
        let w = Volume::uniform(&b, rat(1, 1), ExtReal::Infinite);
        assert!(matches!(densities_from_masses(&b, &w), Err(TransportError::UnsupportedFiberGeometry(_))));
    }

    #[test]
    fn ray_layout() {
        let b = fixtures::triv(4);
        let w = Volume::uniform(&b, rat(1, 2), ExtReal::Infinite);
        let fibers = densities_from_masses(&b, &w).unwrap();
        assert_eq!(fibers.len(), 1);
        let f = &fibers[0];
        assert_eq!(f.path.vertices.len(), 5);
        assert_eq!(f.masses[4], None);
        assert_eq!(f.density.hi(), f64::INFINITY);
        assert_eq!(f.density.mass(-0.5, 3.5), 2.0);
    }
}

//! Named bundles used by tests, the acceptance suite and the CLI examples,
//! plus a seeded generator of random bundles and commensurable form pairs.
//!
//! `MFB_SEED` selects the generator seed for randomized sweeps; solver
//! output never depends on it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::{BaseGraph, DiscreteBundle, FiberGraph, FiberVertex, FiberVolume, Monodromy};
use crate::release::release;
use crate::scalar::{ExtReal, Rational};

pub const DEFAULT_SEED: u64 = 0x6d66_6230;

/// Seed for randomized fixtures, from `MFB_SEED` when set.
pub fn seed() -> u64 {
    std::env::var("MFB_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_SEED)
}

pub fn rng(offset: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed().wrapping_add(offset))
}

/// Fiber assembled from disjoint "arms": each arm is a list of vertices with
/// levels, joined to an optional shared root.
struct FiberBuilder {
    vertices: Vec<FiberVertex>,
    edges: Vec<(u32, u32)>,
}

impl FiberBuilder {
    fn new() -> Self {
        FiberBuilder { vertices: Vec::new(), edges: Vec::new() }
    }

    fn vertex(&mut self, level: i64) -> u32 {
        let id = self.vertices.len() as u32;
        self.vertices.push(FiberVertex { id, level });
        id
    }

    fn edge(&mut self, a: u32, b: u32) {
        self.edges.push((a, b));
    }

    /// Path from `start` (exclusive) through levels `from..=to`.
    fn ray(&mut self, start: Option<u32>, from: i64, to: i64) -> Vec<u32> {
        let mut prev = start;
        let mut out = Vec::new();
        for l in from..=to {
            let v = self.vertex(l);
            if let Some(p) = prev {
                self.edge(p, v);
            }
            prev = Some(v);
            out.push(v);
        }
        out
    }

    /// Tails are the horizon components; recomputed from the graph.
    fn finish(self, horizon: i64, v0: u32) -> FiberGraph {
        let probe = FiberGraph::new(self.vertices.clone(), &self.edges, horizon, Vec::new(), v0).unwrap();
        let top: Vec<usize> = (0..probe.len()).filter(|&v| probe.is_horizon_vertex(v)).collect();
        let tails = probe
            .components_of(&top)
            .into_iter()
            .enumerate()
            .map(|(i, comp)| (format!("t{i}"), comp.into_iter().map(|v| probe.vertices[v].id).collect()))
            .collect();
        FiberGraph::new(self.vertices, &self.edges, horizon, tails, v0).unwrap()
    }
}

fn cycle_base(n: usize) -> BaseGraph {
    let vertices: Vec<u32> = (0..n as u32).collect();
    let edges: Vec<(u32, u32)> = match n {
        1 => vec![(0, 0)],
        2 => vec![(0, 1), (1, 0)],
        _ => (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect(),
    };
    let tree = (0..n - 1).collect();
    BaseGraph::new(vertices, &edges, tree, 0).unwrap()
}

fn path_base(n: usize) -> BaseGraph {
    let vertices: Vec<u32> = (0..n as u32).collect();
    let edges: Vec<(u32, u32)> = (1..n as u32).map(|i| (i - 1, i)).collect();
    BaseGraph::new(vertices, &edges, (0..n.saturating_sub(1)).collect(), 0).unwrap()
}

/// Monodromy that is trivial except on the last (non-tree) edge.
fn last_edge_monodromy(base: &BaseGraph, fiber_len: usize, map: Vec<usize>) -> Monodromy {
    let mut m = Monodromy::trivial(base.edges.len(), fiber_len);
    if let Some(last) = m.maps.last_mut() {
        *last = map;
    }
    m
}

fn swap_map(len: usize, a: &[u32], b: &[u32]) -> Vec<usize> {
    let mut map: Vec<usize> = (0..len).collect();
    for (&x, &y) in a.iter().zip(b) {
        map[x as usize] = y as usize;
        map[y as usize] = x as usize;
    }
    map
}

/// One base vertex, fiber a single ray of levels `0..=horizon`.
pub fn triv(horizon: i64) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    f.ray(None, 0, horizon);
    let fiber = f.finish(horizon, 0);
    let base = BaseGraph::new(vec![0], &[], vec![], 0).unwrap();
    let n = fiber.len();
    DiscreteBundle::new(base, fiber, Monodromy::trivial(0, n)).unwrap()
}

/// One-ended fiber over a path base of `base_len` vertices.
pub fn vec_bundle(horizon: i64, base_len: usize) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    f.ray(None, 0, horizon);
    let fiber = f.finish(horizon, 0);
    let base = path_base(base_len);
    let n = fiber.len();
    let m = Monodromy::trivial(base.edges.len(), n);
    DiscreteBundle::new(base, fiber, m).unwrap()
}

/// Four-armed fiber (center at level 0) over a 3-cycle; the non-tree edge
/// swaps arms 0 and 1 and fixes arms 2 and 3.
///
/// Fiber vertex `1 + a * horizon + (l - 1)` is arm `a` at level `l`.
pub fn cyl(horizon: i64) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    let center = f.vertex(0);
    let arms: Vec<Vec<u32>> = (0..4).map(|_| f.ray(Some(center), 1, horizon)).collect();
    let mut fiber = f.finish(horizon, center);
    for (a, name) in ["zp", "zm", "h1", "h2"].iter().enumerate() {
        let top = *arms[a].last().unwrap() as usize;
        let t = fiber.tail_of(top).unwrap();
        fiber.tails[t].name = name.to_string();
    }
    let base = cycle_base(3);
    let map = swap_map(fiber.len(), &arms[0], &arms[1]);
    let m = last_edge_monodromy(&base, fiber.len(), map);
    DiscreteBundle::new(base, fiber, m).unwrap()
}

/// Two disjoint rays over a one-vertex base whose loop swaps them.
pub fn swapped_rays(horizon: i64) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    let a = f.ray(None, 0, horizon);
    let b = f.ray(None, 0, horizon);
    let fiber = f.finish(horizon, 0);
    let base = cycle_base(1);
    let map = swap_map(fiber.len(), &a, &b);
    let m = last_edge_monodromy(&base, fiber.len(), map);
    DiscreteBundle::new(base, fiber, m).unwrap()
}

/// Two rays from level 0 meeting at level `join`, continuing as one ray.
pub fn joined_rays(horizon: i64, join: i64) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    let a = f.ray(None, 0, join - 1);
    let b = f.ray(None, 0, join - 1);
    let top = f.ray(Some(*a.last().unwrap()), join, horizon);
    f.edge(*b.last().unwrap(), top[0]);
    let fiber = f.finish(horizon, 0);
    let base = BaseGraph::new(vec![0], &[], vec![], 0).unwrap();
    let n = fiber.len();
    DiscreteBundle::new(base, fiber, Monodromy::trivial(0, n)).unwrap()
}

/// A ray that forks into two tails above level `fork`.
pub fn forked_ray(horizon: i64, fork: i64) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    let stem = f.ray(None, 0, fork);
    let s = *stem.last().unwrap();
    f.ray(Some(s), fork + 1, horizon);
    f.ray(Some(s), fork + 1, horizon);
    let fiber = f.finish(horizon, 0);
    let base = BaseGraph::new(vec![0], &[], vec![], 0).unwrap();
    let n = fiber.len();
    DiscreteBundle::new(base, fiber, Monodromy::trivial(0, n)).unwrap()
}

/// A ray with a dead-end branch (levels 2 and 3) hanging off its level-1
/// vertex.
pub fn pocket(horizon: i64) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    let ray = f.ray(None, 0, horizon);
    f.ray(Some(ray[1]), 2, 3);
    let fiber = f.finish(horizon, 0);
    let base = BaseGraph::new(vec![0], &[], vec![], 0).unwrap();
    let n = fiber.len();
    DiscreteBundle::new(base, fiber, Monodromy::trivial(0, n)).unwrap()
}

/// Builds a V-shaped line (bottom at level 0, two arms to the horizon) and
/// returns `(bottom, left arm, right arm)`.
fn v_line(f: &mut FiberBuilder, horizon: i64) -> (u32, Vec<u32>, Vec<u32>) {
    let bottom = f.vertex(0);
    let left = f.ray(Some(bottom), 1, horizon);
    let right = f.ray(Some(bottom), 1, horizon);
    (bottom, left, right)
}

/// A single line fiber over a `base_len`-cycle; when `flip` is set the
/// non-tree edge exchanges the two ends of the line.
pub fn line_bundle(horizon: i64, base_len: usize, flip: bool) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    let (_, left, right) = v_line(&mut f, horizon);
    let fiber = f.finish(horizon, 0);
    let base = cycle_base(base_len);
    let map = if flip { swap_map(fiber.len(), &left, &right) } else { (0..fiber.len()).collect() };
    let m = last_edge_monodromy(&base, fiber.len(), map);
    DiscreteBundle::new(base, fiber, m).unwrap()
}

/// Two line components over a 3-cycle, exchanged by the non-tree edge.
pub fn line_pair(horizon: i64) -> DiscreteBundle {
    let mut f = FiberBuilder::new();
    let (b1, l1, r1) = v_line(&mut f, horizon);
    let (b2, l2, r2) = v_line(&mut f, horizon);
    let fiber = f.finish(horizon, 0);
    let base = cycle_base(3);
    let a: Vec<u32> = std::iter::once(b1).chain(l1).chain(r1).collect();
    let b: Vec<u32> = std::iter::once(b2).chain(l2).chain(r2).collect();
    let map = swap_map(fiber.len(), &a, &b);
    let m = last_edge_monodromy(&base, fiber.len(), map);
    DiscreteBundle::new(base, fiber, m).unwrap()
}

/// Random bundle family used by sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Star of identical arms (some forking) over a cycle; monodromy
    /// permutes arms.
    Star,
    /// Disjoint rays permuted transitively by the monodromy.
    Rays,
    /// Ray or line fibers (1-manifolds) with optional end flips.
    Lines,
}

pub fn random_bundle<R: Rng>(rng: &mut R, family: Family, horizon: i64) -> DiscreteBundle {
    let base_len = rng.gen_range(1..=3);
    let base = cycle_base(base_len);
    let mut f = FiberBuilder::new();
    match family {
        Family::Star => {
            let center = f.vertex(0);
            let arm_count = rng.gen_range(1..=4);
            let fork = if rng.gen_bool(0.5) { Some(rng.gen_range(1..horizon - 1)) } else { None };
            let mut arms = Vec::new();
            for _ in 0..arm_count {
                let stem_top = fork.unwrap_or(horizon);
                let mut arm = f.ray(Some(center), 1, stem_top);
                if let Some(k) = fork {
                    let s = *arm.last().unwrap();
                    arm.extend(f.ray(Some(s), k + 1, horizon));
                    arm.extend(f.ray(Some(s), k + 1, horizon));
                }
                arms.push(arm);
            }
            let fiber = f.finish(horizon, center);
            let mut map: Vec<usize> = (0..fiber.len()).collect();
            if arm_count >= 2 {
                let mut perm: Vec<usize> = (0..arm_count).collect();
                perm.shuffle(rng);
                for (a, &p) in perm.iter().enumerate() {
                    for (&x, &y) in arms[a].iter().zip(&arms[p]) {
                        map[x as usize] = y as usize;
                    }
                }
            }
            let m = last_edge_monodromy(&base, fiber.len(), map);
            DiscreteBundle::new(base, fiber, m).unwrap()
        }
        Family::Rays => {
            let k = rng.gen_range(2..=3);
            let rays: Vec<Vec<u32>> = (0..k).map(|_| f.ray(None, 0, horizon)).collect();
            let fiber = f.finish(horizon, 0);
            let mut map: Vec<usize> = (0..fiber.len()).collect();
            for r in 0..k {
                for (&x, &y) in rays[r].iter().zip(&rays[(r + 1) % k]) {
                    map[x as usize] = y as usize;
                }
            }
            let m = last_edge_monodromy(&base, fiber.len(), map);
            DiscreteBundle::new(base, fiber, m).unwrap()
        }
        Family::Lines => {
            if rng.gen_bool(0.5) {
                let (_, l, r) = v_line(&mut f, horizon);
                let fiber = f.finish(horizon, 0);
                let map = if rng.gen_bool(0.5) { swap_map(fiber.len(), &l, &r) } else { (0..fiber.len()).collect() };
                let m = last_edge_monodromy(&base, fiber.len(), map);
                DiscreteBundle::new(base, fiber, m).unwrap()
            } else {
                f.ray(None, 0, horizon);
                let fiber = f.finish(horizon, 0);
                let n = fiber.len();
                let m = Monodromy::trivial(base.edges.len(), n);
                DiscreteBundle::new(base, fiber, m).unwrap()
            }
        }
    }
}

/// Which tails carry infinite mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailPolicy {
    AllFinite,
    AllInfinite,
    Mixed,
}

fn random_mass<R: Rng>(rng: &mut R) -> Rational {
    Rational::new(rng.gen_range(4..=20).into(), 4.into())
}

/// Random pair `(ω, τ)` with equal released integrals over the whole
/// bundle and matching tail finiteness classes (commensurable).
pub fn random_forms<R: Rng>(
    rng: &mut R,
    bundle: &DiscreteBundle,
    policy: TailPolicy,
) -> (FiberVolume<Rational>, FiberVolume<Rational>) {
    let tails = bundle.fiber.tails.len();
    // finiteness class per gluing orbit of (b, tail)
    let orbit = tail_orbits(bundle);
    let orbit_count = orbit.iter().copied().max().map_or(0, |m| m + 1);
    let infinite: Vec<bool> = (0..orbit_count)
        .map(|o| match policy {
            TailPolicy::AllFinite => false,
            TailPolicy::AllInfinite => true,
            TailPolicy::Mixed => o % 2 == 0 || rng.gen_bool(0.3),
        })
        .collect();
    let mut omega = FiberVolume::uniform(bundle, Rational::from_integer(1.into()), ExtReal::Infinite);
    let mut tau = omega.clone();
    for c in 0..bundle.cell_count() {
        if !bundle.is_tail_cell(c) {
            omega.mass[c] = random_mass(rng);
            tau.mass[c] = random_mass(rng);
        }
    }
    for b in 0..bundle.base.len() {
        for t in 0..tails {
            let inf = infinite[orbit[b * tails + t]];
            let small = || Rational::new(1.into(), 8.into());
            *omega.tail_mut(bundle, b, t) =
                if inf { ExtReal::Infinite } else { ExtReal::Finite(small() * Rational::from_integer(rng.gen_range(1..=2).into())) };
            *tau.tail_mut(bundle, b, t) =
                if inf { ExtReal::Infinite } else { ExtReal::Finite(small() * Rational::from_integer(rng.gen_range(1..=2).into())) };
        }
    }
    equalize_released(bundle, &omega, &mut tau);
    (omega, tau)
}

/// Rescales finite-class components of `tau` so its released integral over
/// the whole bundle matches `omega`.
pub fn equalize_released(bundle: &DiscreteBundle, omega: &FiberVolume<Rational>, tau: &mut FiberVolume<Rational>) {
    let full = bundle.full_region();
    let rel = release(bundle, &full).expect("whole bundle is gluing invariant");
    for vertex in &rel.vertices {
        let b = vertex.base;
        let target = omega.mass_of_fiber_set(bundle, b, &vertex.fiber_vertices);
        let Some(target) = target.into_finite() else { continue };
        let finite_cells: Vec<usize> =
            vertex.fiber_vertices.iter().copied().filter(|&v| !bundle.fiber.is_horizon_vertex(v)).collect();
        let tails_only: Vec<usize> =
            vertex.fiber_vertices.iter().copied().filter(|&v| bundle.fiber.is_horizon_vertex(v)).collect();
        let tail_sum = tau.mass_of_fiber_set(bundle, b, &tails_only).into_finite().unwrap();
        let cells_sum = tau.mass_of_fiber_set(bundle, b, &finite_cells).into_finite().unwrap();
        let scale = (target - tail_sum) / cells_sum;
        assert!(scale > Rational::from_integer(0.into()), "tail masses exceed target");
        for v in finite_cells {
            let c = bundle.cell(b, v);
            tau.mass[c] = tau.mass[c].clone() * scale.clone();
        }
    }
}

/// Orbit index of each `(b, tail)` pair under gluing.
pub fn tail_orbits(bundle: &DiscreteBundle) -> Vec<usize> {
    let tails = bundle.fiber.tails.len();
    let n = bundle.base.len() * tails;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for e in 0..bundle.base.edges.len() {
        let (lo, hi) = bundle.base.oriented(e);
        for t in 0..tails {
            if let Some(t2) = crate::bundle::tail_image(bundle, e, t) {
                let (a, b) = (find(&mut parent, lo * tails + t), find(&mut parent, hi * tails + t2));
                parent[a] = b;
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[i] = label[r];
    }
    out
}

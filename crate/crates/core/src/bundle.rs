//! Discrete exhausted bundles: a finite base graph, a level-graded fiber
//! graph truncated at a horizon, and a level-preserving monodromy.
//!
//! The total space is the graph on cells `(b, v)`; a cell's level is the
//! level of its fiber vertex. Vertices at or above the horizon are grouped
//! into tails, each standing for an unbounded tube that never splits.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use fixedbitset::FixedBitSet;
use serde::Serialize;

use crate::scalar::{Cut, ExtReal, Scalar};

/// Index of a cell `(b, v)` in the total graph: `b * fiber_len + v`.
pub type CellId = usize;

/// Set of cells.
pub type Region = FixedBitSet;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown {kind} vertex id {id}")]
    DanglingVertex { kind: &'static str, id: String },
    #[error("duplicate {kind} vertex id {id}")]
    DuplicateVertex { kind: &'static str, id: String },
    #[error("unknown base edge index {0}")]
    DanglingEdge(usize),
    #[error("monodromy for base edge {edge} has {got} entries, expected {expected}")]
    MonodromyArity { edge: usize, got: usize, expected: usize },
    #[error("empty {0}")]
    Empty(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiberVertex {
    pub id: u32,
    pub level: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tail {
    pub name: String,
    /// Fiber vertex indices.
    pub vertices: Vec<usize>,
}

/// Level-graded fiber graph truncated at `horizon`.
#[derive(Clone, Debug)]
pub struct FiberGraph {
    pub vertices: Vec<FiberVertex>,
    pub edges: Vec<(usize, usize)>,
    pub horizon: i64,
    pub tails: Vec<Tail>,
    pub v0: usize,
    adjacency: Vec<Vec<usize>>,
    tail_of: Vec<Option<usize>>,
}

impl FiberGraph {
    /// Builds a fiber graph from vertex ids; edges and tails refer to ids.
    pub fn new(
        vertices: Vec<FiberVertex>,
        edges: &[(u32, u32)],
        horizon: i64,
        tails: Vec<(String, Vec<u32>)>,
        v0: u32,
    ) -> Result<Self, ModelError> {
        if vertices.is_empty() {
            return Err(ModelError::Empty("fiber"));
        }
        let mut index = BTreeMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.id, i).is_some() {
                return Err(ModelError::DuplicateVertex { kind: "fiber", id: v.id.to_string() });
            }
        }
        let lookup = |id: u32| {
            index.get(&id).copied().ok_or(ModelError::DanglingVertex {
                kind: "fiber",
                id: id.to_string(),
            })
        };
        let edges = edges
            .iter()
            .map(|&(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let tails = tails
            .into_iter()
            .map(|(name, vs)| {
                Ok(Tail { name, vertices: vs.into_iter().map(lookup).collect::<Result<_, _>>()? })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let v0 = lookup(v0)?;
        let mut adjacency = vec![Vec::new(); vertices.len()];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            if a != b {
                adjacency[b].push(a);
            }
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
            nb.dedup();
        }
        let mut tail_of = vec![None; vertices.len()];
        for (t, tail) in tails.iter().enumerate() {
            for &v in &tail.vertices {
                tail_of[v] = Some(t);
            }
        }
        Ok(FiberGraph { vertices, edges, horizon, tails, v0, adjacency, tail_of })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn level(&self, v: usize) -> i64 {
        self.vertices[v].level
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Tail containing `v`, if `v` lies at or above the horizon.
    pub fn tail_of(&self, v: usize) -> Option<usize> {
        self.tail_of[v]
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.vertices.iter().position(|v| v.id == id)
    }

    pub fn is_horizon_vertex(&self, v: usize) -> bool {
        self.level(v) >= self.horizon
    }

    /// Connected components of the subgraph induced on `keep`.
    pub fn components_of(&self, keep: &[usize]) -> Vec<Vec<usize>> {
        let mut inside = vec![false; self.len()];
        for &v in keep {
            inside[v] = true;
        }
        components(keep.iter().copied(), |v| inside[v], |v| self.adjacency[v].iter().copied())
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.len()).collect();
        self.components_of(&all).len() == 1
    }
}

#[derive(Clone, Debug)]
pub struct BaseGraph {
    pub vertices: Vec<u32>,
    pub edges: Vec<(usize, usize)>,
    /// Indices into `edges` forming the spanning tree.
    pub tree: Vec<usize>,
    pub b0: usize,
}

impl BaseGraph {
    pub fn new(
        vertices: Vec<u32>,
        edges: &[(u32, u32)],
        tree: Vec<usize>,
        b0: u32,
    ) -> Result<Self, ModelError> {
        if vertices.is_empty() {
            return Err(ModelError::Empty("base"));
        }
        let mut seen = BTreeSet::new();
        for &v in &vertices {
            if !seen.insert(v) {
                return Err(ModelError::DuplicateVertex { kind: "base", id: v.to_string() });
            }
        }
        let lookup = |id: u32| {
            vertices.iter().position(|&v| v == id).ok_or(ModelError::DanglingVertex {
                kind: "base",
                id: id.to_string(),
            })
        };
        let edges = edges
            .iter()
            .map(|&(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        if let Some(&bad) = tree.iter().find(|&&e| e >= edges.len()) {
            return Err(ModelError::DanglingEdge(bad));
        }
        let b0 = lookup(b0)?;
        Ok(BaseGraph { vertices, edges, tree, b0 })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Endpoints of edge `e` ordered by vertex id: gluing runs from the first
    /// to the second.
    pub fn oriented(&self, e: usize) -> (usize, usize) {
        let (a, b) = self.edges[e];
        if self.vertices[a] <= self.vertices[b] {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn oriented_edges(&self) -> Vec<(usize, usize)> {
        (0..self.edges.len()).map(|e| self.oriented(e)).collect()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(b) = queue.pop_front() {
            for &(x, y) in &self.edges {
                for (p, q) in [(x, y), (y, x)] {
                    if p == b && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn tree_spans(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.len()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        let mut unique = BTreeSet::new();
        for &e in &self.tree {
            if !unique.insert(e) {
                return false;
            }
            let (a, b) = self.edges[e];
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return false;
            }
            parent[ra] = rb;
        }
        unique.len() + 1 == self.len()
    }
}

/// Per-base-edge fiber automorphisms (as vertex index permutations).
#[derive(Clone, Debug)]
pub struct Monodromy {
    pub maps: Vec<Vec<usize>>,
}

impl Monodromy {
    pub fn trivial(edges: usize, fiber_len: usize) -> Self {
        Monodromy { maps: vec![(0..fiber_len).collect(); edges] }
    }

    pub fn is_trivial(&self) -> bool {
        self.maps.iter().all(|m| m.iter().enumerate().all(|(i, &j)| i == j))
    }
}

/// Discrete surrogate of an exhausted bundle.
#[derive(Clone, Debug)]
pub struct DiscreteBundle {
    pub base: BaseGraph,
    pub fiber: FiberGraph,
    pub monodromy: Monodromy,
    adjacency: Vec<Vec<CellId>>,
}

impl DiscreteBundle {
    pub fn new(base: BaseGraph, fiber: FiberGraph, monodromy: Monodromy) -> Result<Self, ModelError> {
        if monodromy.maps.len() != base.edges.len() {
            return Err(ModelError::MonodromyArity {
                edge: monodromy.maps.len(),
                got: monodromy.maps.len(),
                expected: base.edges.len(),
            });
        }
        for (e, m) in monodromy.maps.iter().enumerate() {
            if m.len() != fiber.len() {
                return Err(ModelError::MonodromyArity { edge: e, got: m.len(), expected: fiber.len() });
            }
            if let Some(&bad) = m.iter().find(|&&w| w >= fiber.len()) {
                return Err(ModelError::DanglingVertex { kind: "fiber", id: bad.to_string() });
            }
        }
        let n = fiber.len();
        let mut adjacency = vec![Vec::new(); base.len() * n];
        for b in 0..base.len() {
            for &(x, y) in &fiber.edges {
                let (cx, cy) = (b * n + x, b * n + y);
                adjacency[cx].push(cy);
                adjacency[cy].push(cx);
            }
        }
        for e in 0..base.edges.len() {
            let (lo, hi) = base.oriented(e);
            for v in 0..n {
                let (c, d) = (lo * n + v, hi * n + monodromy.maps[e][v]);
                adjacency[c].push(d);
                adjacency[d].push(c);
            }
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
            nb.dedup();
        }
        Ok(DiscreteBundle { base, fiber, monodromy, adjacency })
    }

    pub fn cell_count(&self) -> usize {
        self.base.len() * self.fiber.len()
    }

    pub fn cell(&self, b: usize, v: usize) -> CellId {
        b * self.fiber.len() + v
    }

    /// `(base vertex, fiber vertex)` of a cell.
    pub fn split(&self, cell: CellId) -> (usize, usize) {
        (cell / self.fiber.len(), cell % self.fiber.len())
    }

    pub fn level(&self, cell: CellId) -> i64 {
        self.fiber.level(cell % self.fiber.len())
    }

    pub fn is_tail_cell(&self, cell: CellId) -> bool {
        self.fiber.is_horizon_vertex(cell % self.fiber.len())
    }

    /// Total-graph neighbours (intra-fiber and gluing edges).
    pub fn neighbors(&self, cell: CellId) -> &[CellId] {
        &self.adjacency[cell]
    }

    pub fn basepoint(&self) -> CellId {
        self.cell(self.base.b0, self.fiber.v0)
    }

    pub fn empty_region(&self) -> Region {
        FixedBitSet::with_capacity(self.cell_count())
    }

    pub fn full_region(&self) -> Region {
        let mut r = self.empty_region();
        r.insert_range(..);
        r
    }

    /// Cells whose level lies strictly between the two cuts (`None` = ±∞).
    pub fn level_band(&self, above: Option<Cut>, below: Option<Cut>) -> Region {
        let mut r = self.empty_region();
        for c in 0..self.cell_count() {
            let l = self.level(c);
            let ok_lo = above.map_or(true, |a| !a.below(l));
            let ok_hi = below.map_or(true, |b| b.below(l));
            if ok_lo && ok_hi {
                r.insert(c);
            }
        }
        r
    }

    /// Connected components of `region` in the total graph, ordered by
    /// smallest cell.
    pub fn components(&self, region: &Region) -> Vec<Vec<CellId>> {
        components(region.ones(), |c| region.contains(c), |c| self.adjacency[c].iter().copied())
    }

    /// Connected components of `region` restricted to the fiber over `b`,
    /// as fiber vertex lists.
    pub fn fiber_components(&self, region: &Region, b: usize) -> Vec<Vec<usize>> {
        let n = self.fiber.len();
        let keep: Vec<usize> = (0..n).filter(|&v| region.contains(b * n + v)).collect();
        self.fiber.components_of(&keep)
    }

    /// Does `region` contain a horizon (tail) cell?
    pub fn reaches_horizon(&self, cells: &[CellId]) -> bool {
        cells.iter().any(|&c| self.is_tail_cell(c))
    }

    pub fn region_from(&self, cells: impl IntoIterator<Item = CellId>) -> Region {
        let mut r = self.empty_region();
        for c in cells {
            r.insert(c);
        }
        r
    }
}

/// Generic BFS components over an implicit graph, sorted by smallest member.
pub(crate) fn components<I, F, N, J>(seeds: I, inside: F, neighbors: N) -> Vec<Vec<usize>>
where
    I: IntoIterator<Item = usize>,
    F: Fn(usize) -> bool,
    N: Fn(usize) -> J,
    J: IntoIterator<Item = usize>,
{
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut seeds: Vec<usize> = seeds.into_iter().collect();
    seeds.sort_unstable();
    for s in seeds {
        if seen.contains(&s) {
            continue;
        }
        let mut comp = vec![s];
        seen.insert(s);
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for y in neighbors(x) {
                if inside(y) && seen.insert(y) {
                    comp.push(y);
                    queue.push_back(y);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub fiber_connected: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, failure: Option<String>) {
        self.checks.push(Check { name: name.to_string(), passed: failure.is_none(), detail: failure });
    }
}

/// Checks every structural invariant of the bundle surrogate.
pub fn validate_bundle(bundle: &DiscreteBundle) -> ValidationReport {
    let fiber = &bundle.fiber;
    let base = &bundle.base;
    let mut report = ValidationReport { checks: Vec::new(), fiber_connected: fiber.is_connected() };

    report.push(
        "horizon_positive",
        (fiber.horizon <= 0).then(|| format!("horizon {} is not positive", fiber.horizon)),
    );

    let bad_edge = fiber
        .edges
        .iter()
        .find(|&&(a, b)| (fiber.level(a) - fiber.level(b)).abs() > 1)
        .map(|&(a, b)| format!("edge {}-{} spans more than one level", fiber.vertices[a].id, fiber.vertices[b].id));
    report.push("fiber_edge_levels", bad_edge);

    let min_level = fiber.vertices.iter().map(|v| v.level).min().unwrap_or(0);
    report.push(
        "basepoint_minimal",
        (fiber.level(fiber.v0) != min_level).then(|| {
            format!("v0 has level {} but minimum level is {}", fiber.level(fiber.v0), min_level)
        }),
    );

    // tails are exactly the components of the horizon superlevel subgraph
    let horizon_vs: Vec<usize> = (0..fiber.len()).filter(|&v| fiber.is_horizon_vertex(v)).collect();
    let horizon_comps: BTreeSet<Vec<usize>> = fiber.components_of(&horizon_vs).into_iter().collect();
    let mut tail_problem = None;
    if fiber.tails.is_empty() {
        tail_problem = Some("no tails: fiber would be compact".to_string());
    }
    let mut declared = BTreeSet::new();
    for t in &fiber.tails {
        let mut vs = t.vertices.clone();
        vs.sort_unstable();
        vs.dedup();
        if vs.is_empty() {
            tail_problem = Some(format!("tail {} is empty", t.name));
        } else if !horizon_comps.contains(&vs) {
            tail_problem = Some(format!(
                "tail {} is not a connected component of the horizon superlevel subgraph",
                t.name
            ));
        } else if !declared.insert(vs) {
            tail_problem = Some(format!("tail {} declared twice", t.name));
        }
    }
    if tail_problem.is_none() && declared.len() != horizon_comps.len() {
        tail_problem = Some("some horizon component is not declared as a tail".to_string());
    }
    report.push("tails", tail_problem);

    report.push("base_connected", (!base.is_connected()).then(|| "base graph is disconnected".to_string()));
    report.push(
        "spanning_tree",
        (!base.tree_spans()).then(|| "declared tree edges do not form a spanning tree".to_string()),
    );

    let mut mono_problem = None;
    for (e, map) in bundle.monodromy.maps.iter().enumerate() {
        if let Some(p) = automorphism_problem(fiber, map) {
            mono_problem = Some(format!("base edge {e}: {p}"));
            break;
        }
        if base.tree.contains(&e) && map.iter().enumerate().any(|(i, &j)| i != j) {
            mono_problem = Some(format!("base edge {e}: spanning-tree edge with nontrivial monodromy"));
            break;
        }
    }
    report.push("monodromy", mono_problem);
    report
}

fn automorphism_problem(fiber: &FiberGraph, map: &[usize]) -> Option<String> {
    let mut hit = vec![false; fiber.len()];
    for &w in map {
        if std::mem::replace(&mut hit[w], true) {
            return Some("not a bijection".to_string());
        }
    }
    for (v, &w) in map.iter().enumerate() {
        if fiber.level(v) != fiber.level(w) {
            return Some(format!(
                "level violation: vertex {} (level {}) -> {} (level {})",
                fiber.vertices[v].id,
                fiber.level(v),
                fiber.vertices[w].id,
                fiber.level(w)
            ));
        }
    }
    let edges: BTreeSet<(usize, usize)> = fiber.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    for &(a, b) in &edges {
        let (x, y) = (map[a], map[b]);
        if !edges.contains(&(x.min(y), x.max(y))) {
            return Some(format!(
                "adjacency violation on edge {}-{}",
                fiber.vertices[a].id, fiber.vertices[b].id
            ));
        }
    }
    for t in &fiber.tails {
        let image: BTreeSet<usize> = t.vertices.iter().map(|&v| map[v]).collect();
        let is_tail = fiber.tails.iter().any(|s| s.vertices.iter().copied().collect::<BTreeSet<_>>() == image);
        if !is_tail {
            return Some(format!("tail {} is not mapped onto a tail", t.name));
        }
    }
    None
}

/// Tail image of tail `t` under the monodromy of base edge `e`.
pub fn tail_image(bundle: &DiscreteBundle, e: usize, t: usize) -> Option<usize> {
    let v = bundle.fiber.tails[t].vertices[0];
    bundle.fiber.tail_of(bundle.monodromy.maps[e][v])
}

/// Explicit subgraph of the total graph over a band of levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TotalGraph {
    pub cells: Vec<CellId>,
    pub levels: Vec<i64>,
    /// Indices into `cells`.
    pub edges: Vec<(usize, usize)>,
}

/// The subgraph of cells with level strictly between the half-integer cuts
/// `lo < level < hi` (either bound may be open).
pub fn build_total(bundle: &DiscreteBundle, lo: Option<Cut>, hi: Option<Cut>) -> TotalGraph {
    let region = bundle.level_band(lo, hi);
    let cells: Vec<CellId> = region.ones().collect();
    let pos: BTreeMap<CellId, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut edges = Vec::new();
    for (i, &c) in cells.iter().enumerate() {
        for &d in bundle.neighbors(c) {
            if let Some(&j) = pos.get(&d) {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
    }
    // self-gluing from loop monodromy fixing a vertex is not an edge
    let levels = cells.iter().map(|&c| bundle.level(c)).collect();
    TotalGraph { cells, levels, edges }
}

/// Fiber volume surrogate: positive masses on cells below the horizon and an
/// extended-real mass per `(base vertex, tail)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberVolume<S> {
    /// Indexed by cell; entries for horizon cells are ignored and kept zero.
    pub mass: Vec<S>,
    /// Indexed by `b * tails + t`.
    pub tail_mass: Vec<ExtReal<S>>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum VolumeError {
    #[error("mass at base {base} fiber vertex {vertex} is not positive")]
    NonPositive { base: u32, vertex: u32 },
    #[error("missing mass at base {base} fiber vertex {vertex}")]
    Missing { base: u32, vertex: u32 },
    #[error("missing tail mass at base {base} tail {tail}")]
    MissingTail { base: u32, tail: String },
    #[error("tail {tail} changes finiteness class across base edge {edge}")]
    TailClass { tail: String, edge: usize },
    #[error("form sized for a different bundle")]
    Shape,
}

impl<S: Scalar> FiberVolume<S> {
    /// Constant mass on every cell and tail.
    pub fn uniform(bundle: &DiscreteBundle, mass: S, tail: ExtReal<S>) -> Self {
        let mass = (0..bundle.cell_count())
            .map(|c| if bundle.is_tail_cell(c) { S::zero() } else { mass.clone() })
            .collect();
        let tail_mass = vec![tail; bundle.base.len() * bundle.fiber.tails.len()];
        FiberVolume { mass, tail_mass }
    }

    pub fn tail(&self, bundle: &DiscreteBundle, b: usize, t: usize) -> &ExtReal<S> {
        &self.tail_mass[b * bundle.fiber.tails.len() + t]
    }

    pub fn tail_mut(&mut self, bundle: &DiscreteBundle, b: usize, t: usize) -> &mut ExtReal<S> {
        &mut self.tail_mass[b * bundle.fiber.tails.len() + t]
    }

    /// Positivity and tail-class consistency along gluing edges.
    pub fn check(&self, bundle: &DiscreteBundle) -> Result<(), VolumeError> {
        if self.mass.len() != bundle.cell_count()
            || self.tail_mass.len() != bundle.base.len() * bundle.fiber.tails.len()
        {
            return Err(VolumeError::Shape);
        }
        for c in 0..bundle.cell_count() {
            if !bundle.is_tail_cell(c) && !self.mass[c].is_positive() {
                let (b, v) = bundle.split(c);
                return Err(VolumeError::NonPositive {
                    base: bundle.base.vertices[b],
                    vertex: bundle.fiber.vertices[v].id,
                });
            }
        }
        for e in 0..bundle.base.edges.len() {
            let (lo, hi) = bundle.base.oriented(e);
            for t in 0..bundle.fiber.tails.len() {
                if let Some(t2) = tail_image(bundle, e, t) {
                    if self.tail(bundle, lo, t).is_infinite() != self.tail(bundle, hi, t2).is_infinite() {
                        return Err(VolumeError::TailClass { tail: bundle.fiber.tails[t].name.clone(), edge: e });
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum of masses of `cells` over base vertex `b`, including whole tails.
    pub fn mass_of_fiber_set(&self, bundle: &DiscreteBundle, b: usize, vertices: &[usize]) -> ExtReal<S> {
        let mut total = ExtReal::Finite(S::zero());
        let mut tails = BTreeSet::new();
        for &v in vertices {
            match bundle.fiber.tail_of(v) {
                Some(t) if bundle.fiber.is_horizon_vertex(v) => {
                    tails.insert(t);
                }
                _ => total += ExtReal::Finite(self.mass[bundle.cell(b, v)].clone()),
            }
        }
        for t in tails {
            total += self.tail(bundle, b, t).clone();
        }
        total
    }
}

/// Per-base-vertex total mass (cells plus tails).
pub fn fiber_integral<S: Scalar>(bundle: &DiscreteBundle, form: &FiberVolume<S>) -> Vec<ExtReal<S>> {
    let all: Vec<usize> = (0..bundle.fiber.len()).collect();
    (0..bundle.base.len()).map(|b| form.mass_of_fiber_set(bundle, b, &all)).collect()
}

pub fn equal_fiber_integral<S: Scalar>(
    bundle: &DiscreteBundle,
    omega: &FiberVolume<S>,
    tau: &FiberVolume<S>,
) -> bool {
    fiber_integral(bundle, omega) == fiber_integral(bundle, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scalar::{rat, Rational};

    #[test]
    fn triv_and_cyl_validate() {
        assert!(validate_bundle(&fixtures::triv(3)).passed());
        let cyl = fixtures::cyl(4);
        let report = validate_bundle(&cyl);
        assert!(report.passed(), "{:?}", report);
        assert!(report.fiber_connected);
    }

    #[test]
    fn level_violation_is_reported() {
        let mut cyl = fixtures::cyl(4);
        // send a level-1 vertex of the first arm to a level-2 vertex
        let e = cyl.base.edges.len() - 1;
        let map = &mut cyl.monodromy.maps[e];
        let (a, b) = (1usize, 2usize);
        map.swap(a, b);
        let cyl = DiscreteBundle::new(cyl.base, cyl.fiber, cyl.monodromy).unwrap();
        let report = validate_bundle(&cyl);
        let failure = report.failures().next().expect("must fail");
        assert_eq!(failure.name, "monodromy");
        assert!(failure.detail.as_ref().unwrap().contains("level violation"));
    }

    #[test]
    fn dangling_ids_are_model_errors() {
        let vs = vec![FiberVertex { id: 0, level: 0 }, FiberVertex { id: 1, level: 1 }];
        let err = FiberGraph::new(vs, &[(0, 7)], 1, vec![("t".into(), vec![1])], 0).unwrap_err();
        assert!(matches!(err, ModelError::DanglingVertex { .. }));
    }

    #[test]
    fn total_graph_counts() {
        let triv = fixtures::triv(3);
        let g = build_total(&triv, Some(Cut(-1)), Some(Cut(2)));
        assert_eq!((g.cells.len(), g.edges.len()), (3, 2));
        let cyl = fixtures::cyl(4);
        let full = build_total(&cyl, None, None);
        assert_eq!(full.cells.len(), cyl.base.len() * cyl.fiber.len());
        let band = build_total(&cyl, Some(Cut(0)), Some(Cut(cyl.fiber.horizon - 1)));
        let direct: Vec<CellId> = (0..cyl.cell_count())
            .filter(|&c| cyl.level(c) >= 1 && cyl.level(c) < cyl.fiber.horizon)
            .collect();
        assert_eq!(band.cells, direct);
        assert!(band.cells.iter().all(|&c| cyl.level(c) != 0));
        let empty = build_total(&cyl, Some(Cut(2)), Some(Cut(2)));
        assert!(empty.cells.is_empty());
    }

    #[test]
    fn gluing_edges_preserve_level() {
        let cyl = fixtures::cyl(4);
        for c in 0..cyl.cell_count() {
            for &d in cyl.neighbors(c) {
                let (bc, _) = cyl.split(c);
                let (bd, _) = cyl.split(d);
                if bc != bd {
                    assert_eq!(cyl.level(c), cyl.level(d));
                }
            }
        }
    }

    #[test]
    fn fiber_integral_sums() {
        let triv = fixtures::triv(3);
        let form = FiberVolume::uniform(&triv, rat(1, 1), ExtReal::Finite(rat(5, 1)));
        assert_eq!(fiber_integral(&triv, &form), vec![ExtReal::Finite(rat(8, 1))]);
        let inf = FiberVolume::uniform(&triv, rat(1, 1), ExtReal::Infinite);
        assert_eq!(fiber_integral(&triv, &inf), vec![ExtReal::Infinite]);
    }

    #[test]
    fn equal_integrals_absorb_infinity() {
        let cyl = fixtures::cyl(4);
        let one = rat(1, 1);
        let mut omega = FiberVolume::uniform(&cyl, one.clone(), ExtReal::Finite(one.clone()));
        let mut tau = omega.clone();
        assert!(equal_fiber_integral(&cyl, &omega, &tau));
        let b = 0;
        *omega.tail_mut(&cyl, b, 0) = ExtReal::Infinite;
        *tau.tail_mut(&cyl, b, 1) = ExtReal::Infinite;
        let f: Vec<ExtReal<Rational>> = fiber_integral(&cyl, &omega);
        assert!(f[b].is_infinite());
        assert!(equal_fiber_integral(&cyl, &omega, &tau));
        tau.mass[0] = rat(2, 1);
        assert!(!equal_fiber_integral(&cyl, &FiberVolume::uniform(&cyl, one.clone(), ExtReal::Finite(one)), &tau));
    }
}

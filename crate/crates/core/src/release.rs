//! Components of fibers as a covering of the base, and the calculus of
//! base functions along coverings.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::bundle::{components, CellId, DiscreteBundle, FiberVolume, Region};
use crate::scalar::{ExtReal, Scalar};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ReleaseError {
    #[error("region is not closed under gluing at base vertex {base}, fiber vertex {vertex}")]
    NotGluingInvariant { base: u32, vertex: u32 },
    #[error("not a covering map: {0}")]
    NotCovering(String),
    #[error("sheet count is not constant on target component {component}")]
    NonConstantSheets { component: usize },
    #[error("target vertex {target} has no preimage")]
    NoPreimage { target: usize },
    #[error("approximate split precondition fails at target vertex {target}: u = {u} is not below {bound}")]
    SplitPrecondition { target: usize, u: String, bound: String },
    #[error("length mismatch: {0}")]
    Shape(&'static str),
}

/// A component of the region restricted to the fiber over `base`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReleaseVertex {
    pub base: usize,
    /// Fiber vertex indices, sorted.
    pub fiber_vertices: Vec<usize>,
}

/// An edge of the release base lifting base edge `base_edge`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ReleaseEdge {
    /// Release vertex over the lower-id endpoint.
    pub lo: usize,
    pub hi: usize,
    pub base_edge: usize,
}

/// Release base of a gluing-invariant region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReleaseBase {
    pub vertices: Vec<ReleaseVertex>,
    pub edges: Vec<ReleaseEdge>,
    vertex_of: BTreeMap<CellId, usize>,
}

/// Plain undirected multigraph, used as the domain of coverings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimpleGraph {
    pub len: usize,
    pub edges: Vec<(usize, usize)>,
}

impl SimpleGraph {
    /// Component label per vertex, labels in order of smallest member.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.len];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let comps = components(0..self.len, |_| true, |v| adj[v].clone());
        let mut label = vec![0; self.len];
        for (i, comp) in comps.iter().enumerate() {
            for &v in comp {
                label[v] = i;
            }
        }
        label
    }
}

/// Release of `region`: one vertex per component of each restricted fiber,
/// joined along the gluing maps.
pub fn release(bundle: &DiscreteBundle, region: &Region) -> Result<ReleaseBase, ReleaseError> {
    let n = bundle.fiber.len();
    let mut vertices = Vec::new();
    let mut vertex_of = BTreeMap::new();
    for b in 0..bundle.base.len() {
        for comp in bundle.fiber_components(region, b) {
            let id = vertices.len();
            for &v in &comp {
                vertex_of.insert(b * n + v, id);
            }
            vertices.push(ReleaseVertex { base: b, fiber_vertices: comp });
        }
    }
    let mut edges = Vec::new();
    for e in 0..bundle.base.edges.len() {
        let (lo, hi) = bundle.base.oriented(e);
        let map = &bundle.monodromy.maps[e];
        // every cell of the region must glue into the region, both ways
        for v in 0..n {
            let (c, d) = (lo * n + v, hi * n + map[v]);
            if region.contains(c) != region.contains(d) {
                let (cell, b) = if region.contains(c) { (v, lo) } else { (map[v], hi) };
                return Err(ReleaseError::NotGluingInvariant {
                    base: bundle.base.vertices[b],
                    vertex: bundle.fiber.vertices[cell].id,
                });
            }
        }
        for (id, rv) in vertices.iter().enumerate() {
            if rv.base != lo {
                continue;
            }
            let image = hi * n + map[rv.fiber_vertices[0]];
            edges.push(ReleaseEdge { lo: id, hi: vertex_of[&image], base_edge: e });
        }
    }
    let rel = ReleaseBase { vertices, edges, vertex_of };
    rel.projection(bundle)?;
    Ok(rel)
}

impl ReleaseBase {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Release vertex containing `cell`.
    pub fn vertex_of(&self, cell: CellId) -> Option<usize> {
        self.vertex_of.get(&cell).copied()
    }

    pub fn graph(&self) -> SimpleGraph {
        SimpleGraph { len: self.len(), edges: self.edges.iter().map(|e| (e.lo, e.hi)).collect() }
    }

    pub fn component_labels(&self) -> Vec<usize> {
        self.graph().component_labels()
    }

    pub fn component_count(&self) -> usize {
        self.component_labels().iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Cells of `region` lying in release vertex `r`.
    pub fn cells_in(&self, bundle: &DiscreteBundle, r: usize, region: &Region) -> Vec<CellId> {
        let rv = &self.vertices[r];
        rv.fiber_vertices.iter().map(|&v| bundle.cell(rv.base, v)).filter(|&c| region.contains(c)).collect()
    }

    /// The covering to the base graph.
    pub fn projection(&self, bundle: &DiscreteBundle) -> Result<CoveringMap, ReleaseError> {
        let base = SimpleGraph { len: bundle.base.len(), edges: bundle.base.oriented_edges() };
        let vertex_map = self.vertices.iter().map(|v| v.base).collect();
        let edge_map = self.edges.iter().map(|e| e.base_edge).collect();
        CoveringMap::between(&self.graph(), &base, vertex_map, edge_map)
    }
}

/// Covering of graphs, recorded by its vertex map and the component
/// structure of the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoveringMap {
    pub map: Vec<usize>,
    pub target_len: usize,
    pub target_component: Vec<usize>,
}

impl CoveringMap {
    /// Validates that `(vertex_map, edge_map)` is a graph morphism and a
    /// local bijection on edge stars.
    pub fn between(
        source: &SimpleGraph,
        target: &SimpleGraph,
        vertex_map: Vec<usize>,
        edge_map: Vec<usize>,
    ) -> Result<Self, ReleaseError> {
        if vertex_map.len() != source.len || edge_map.len() != source.edges.len() {
            return Err(ReleaseError::Shape("covering map arity"));
        }
        // half-edges: (edge, end) with end 0 = first endpoint
        let mut star: Vec<BTreeMap<(usize, usize), usize>> = vec![BTreeMap::new(); source.len];
        for (i, &(a, b)) in source.edges.iter().enumerate() {
            let e = edge_map[i];
            let Some(&(ta, tb)) = target.edges.get(e) else {
                return Err(ReleaseError::NotCovering(format!("edge {i} maps to missing edge {e}")));
            };
            let ends = if (vertex_map[a], vertex_map[b]) == (ta, tb) {
                [(a, 0), (b, 1)]
            } else if (vertex_map[a], vertex_map[b]) == (tb, ta) {
                [(a, 1), (b, 0)]
            } else {
                return Err(ReleaseError::NotCovering(format!("edge {i} is not mapped onto its image's endpoints")));
            };
            for (x, end) in ends {
                *star[x].entry((e, end)).or_insert(0) += 1;
            }
        }
        for (x, s) in star.iter().enumerate() {
            let p = vertex_map[x];
            for (e, &(ta, tb)) in target.edges.iter().enumerate() {
                for (end, endpoint) in [(0, ta), (1, tb)] {
                    let want = usize::from(endpoint == p);
                    let got = s.get(&(e, end)).copied().unwrap_or(0);
                    if want != got {
                        return Err(ReleaseError::NotCovering(format!(
                            "source vertex {x} has {got} lifts of half-edge ({e}, {end})"
                        )));
                    }
                }
            }
        }
        let cover = CoveringMap {
            map: vertex_map,
            target_len: target.len,
            target_component: target.component_labels(),
        };
        cover.sheets()?;
        Ok(cover)
    }

    /// Inclusion of release bases induced by `sub ⊂ sup`.
    pub fn inclusion(sub: &ReleaseBase, sup: &ReleaseBase, bundle: &DiscreteBundle) -> Result<Self, ReleaseError> {
        let map = sub
            .vertices
            .iter()
            .map(|rv| {
                let cell = bundle.cell(rv.base, rv.fiber_vertices[0]);
                sup.vertex_of(cell).ok_or(ReleaseError::NotCovering(format!("cell {cell} outside the larger region")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edge_lookup: BTreeMap<(usize, usize), usize> =
            sup.edges.iter().enumerate().map(|(i, e)| ((e.lo, e.base_edge), i)).collect();
        let edge_map = sub.edges.iter().map(|e| edge_lookup[&(map[e.lo], e.base_edge)]).collect();
        Self::between(&sub.graph(), &sup.graph(), map, edge_map)
    }

    /// Coproduct of coverings with a common target; source vertices are
    /// concatenated in order.
    pub fn disjoint_union(parts: &[CoveringMap]) -> Result<Self, ReleaseError> {
        let first = parts.first().ok_or(ReleaseError::Shape("empty disjoint union"))?;
        let mut map = Vec::new();
        for p in parts {
            if p.target_len != first.target_len {
                return Err(ReleaseError::Shape("disjoint union over different targets"));
            }
            map.extend_from_slice(&p.map);
        }
        let cover = CoveringMap { map, target_len: first.target_len, target_component: first.target_component.clone() };
        cover.sheets()?;
        Ok(cover)
    }

    pub fn preimages(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.map.iter().enumerate().filter(move |&(_, &q)| q == p).map(|(x, _)| x)
    }

    /// Number of sheets over each target component (0 when missed).
    pub fn sheets(&self) -> Result<Vec<usize>, ReleaseError> {
        let comps = self.target_component.iter().copied().max().map_or(0, |m| m + 1);
        let mut count = vec![0usize; self.target_len];
        for &p in &self.map {
            count[p] += 1;
        }
        let mut per = vec![None; comps];
        for (p, &c) in self.target_component.iter().enumerate() {
            match per[c] {
                None => per[c] = Some(count[p]),
                Some(k) if k != count[p] => return Err(ReleaseError::NonConstantSheets { component: c }),
                _ => {}
            }
        }
        Ok(per.into_iter().map(|k| k.unwrap_or(0)).collect())
    }

    /// Sheet count over target vertex `p`.
    pub fn sheets_at(&self, p: usize) -> usize {
        self.map.iter().filter(|&&q| q == p).count()
    }
}

/// `(κ*u)(x) = u(κ(x))`.
pub fn pullback<T: Clone>(cover: &CoveringMap, u: &[T]) -> Vec<T> {
    cover.map.iter().map(|&p| u[p].clone()).collect()
}

/// Fiberwise sum.
pub fn pushforward<S: Scalar>(cover: &CoveringMap, u: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); cover.target_len];
    for (x, &p) in cover.map.iter().enumerate() {
        out[p] = out[p].clone() + u[x].clone();
    }
    out
}

pub fn pushforward_ext<S: Scalar>(cover: &CoveringMap, u: &[ExtReal<S>]) -> Vec<ExtReal<S>> {
    let mut out = vec![ExtReal::Finite(S::zero()); cover.target_len];
    for (x, &p) in cover.map.iter().enumerate() {
        out[p] += u[x].clone();
    }
    out
}

/// Finds `u′` on the source with `κ_* u′ = u` and `u′ < a′` wherever `a′` is
/// finite. Requires `u < κ_* a′` pointwise.
pub fn approximate_split<S: Scalar>(
    cover: &CoveringMap,
    a: &[ExtReal<S>],
    u: &[S],
) -> Result<Vec<S>, ReleaseError> {
    if a.len() != cover.map.len() || u.len() != cover.target_len {
        return Err(ReleaseError::Shape("approximate_split arguments"));
    }
    let sheets = cover.sheets()?;
    let bound = pushforward_ext(cover, a);
    for p in 0..cover.target_len {
        let k = sheets[cover.target_component[p]];
        if k == 0 {
            return Err(ReleaseError::NoPreimage { target: p });
        }
        if !bound[p].exceeds(&u[p]) {
            return Err(ReleaseError::SplitPrecondition { target: p, u: u[p].to_wire(), bound: bound[p].to_wire() });
        }
    }
    let k_of = |p: usize| S::from_usize(sheets[cover.target_component[p]]).unwrap();
    let share: Vec<S> = (0..cover.target_len).map(|p| u[p].clone() / k_of(p)).collect();
    // reduce to u = 0
    let reduced: Vec<ExtReal<S>> =
        cover.map.iter().enumerate().map(|(x, &p)| a[x].sub_finite(&share[p])).collect();
    let fibers: Vec<Vec<usize>> = (0..cover.target_len).map(|p| cover.preimages(p).collect()).collect();
    let finite_fiber = |p: usize| fibers[p].iter().all(|&x| !reduced[x].is_infinite());

    let comps = sheets.len();
    let mut eps: Vec<Option<S>> = vec![None; comps];
    for p in (0..cover.target_len).filter(|&p| finite_fiber(p)) {
        let c = cover.target_component[p];
        let total = fibers[p].iter().fold(S::zero(), |s, &x| s + reduced[x].as_finite().unwrap().clone());
        let e = total / (S::from_i64(2).unwrap() * k_of(p));
        eps[c] = Some(match eps[c].take() {
            Some(old) => S::min_of(old, e),
            None => e,
        });
    }

    let mut w = vec![S::zero(); cover.map.len()];
    let one = S::one();
    for p in 0..cover.target_len {
        let fiber = &fibers[p];
        if finite_fiber(p) {
            let e = eps[cover.target_component[p]].clone().unwrap();
            let h: Vec<S> = fiber.iter().map(|&x| reduced[x].as_finite().unwrap().clone() - e.clone()).collect();
            let pos: S = h.iter().filter(|v| v.is_positive()).fold(S::zero(), |s, v| s + v.clone());
            let neg: S = h.iter().filter(|v| v.is_negative()).fold(S::zero(), |s, v| s - v.clone());
            for (&x, hx) in fiber.iter().zip(&h) {
                w[x] = if hx.is_positive() { hx.clone() * neg.clone() / pos.clone() } else { hx.clone() };
            }
        } else {
            let mut residual = S::zero();
            for &x in fiber {
                if let Some(r) = reduced[x].as_finite() {
                    w[x] = S::min_of(S::zero(), r.clone() - one.clone());
                    residual = residual - w[x].clone();
                }
            }
            let sink = *fiber.iter().find(|&&x| reduced[x].is_infinite()).unwrap();
            w[sink] = residual;
        }
    }
    let out: Vec<S> = w.into_iter().zip(&cover.map).map(|(wx, &p)| wx + share[p].clone()).collect();
    debug_assert!(pushforward(cover, &out) == u);
    debug_assert!(out.iter().zip(a).all(|(o, ax)| ax.exceeds(o)));
    Ok(out)
}

/// Released integral of `form` over `region`, evaluated on the release
/// vertices of `rel` (which must cover `region`).
pub fn released_integral<S: Scalar>(
    bundle: &DiscreteBundle,
    form: &FiberVolume<S>,
    region: &Region,
    rel: &ReleaseBase,
) -> Vec<ExtReal<S>> {
    rel.vertices
        .iter()
        .map(|rv| {
            let inside: Vec<usize> = rv
                .fiber_vertices
                .iter()
                .copied()
                .filter(|&v| region.contains(bundle.cell(rv.base, v)))
                .collect();
            form.mass_of_fiber_set(bundle, rv.base, &inside)
        })
        .collect()
}

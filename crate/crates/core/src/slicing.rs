//! Saturated slices, saturating thresholds, slicing trees and ends.

use serde::Serialize;

use crate::bundle::{CellId, DiscreteBundle, FiberVolume, Region};
use crate::release::{release, CoveringMap, ReleaseBase, ReleaseError};
use crate::scalar::{Cut, ExtReal, Scalar};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SliceError {
    #[error("{what} exceeds the horizon cut {horizon}")]
    HorizonExceeded { what: String, horizon: Cut },
    #[error("cut sequence is not strictly increasing at position {0}")]
    NotIncreasing(usize),
    #[error("node {node} at depth {depth} needs cut number {need}, which is not defined")]
    MissingCut { node: usize, depth: usize, need: usize },
    #[error("sheet count drops back above the threshold {theta} at cut {cut}")]
    NotMonotone { theta: Cut, cut: Cut },
    #[error(transparent)]
    Release(#[from] ReleaseError),
}

/// Highest cut below the horizon.
pub fn top_cut(bundle: &DiscreteBundle) -> Cut {
    Cut(bundle.fiber.horizon - 1)
}

/// Lowest cut below every level.
pub fn bottom_cut(bundle: &DiscreteBundle) -> Cut {
    let min = bundle.fiber.vertices.iter().map(|v| v.level).min().unwrap_or(0);
    Cut(min - 1)
}

/// `M_{(−∞,α]}`: the sublevel component of the basepoint together with the
/// bounded components of its complement.
pub fn total_slice(bundle: &DiscreteBundle, alpha: Cut) -> Region {
    let below = bundle.level_band(None, Some(alpha));
    let x0 = bundle.basepoint();
    let mut slice = bundle.empty_region();
    if !below.contains(x0) {
        return slice;
    }
    let base_comp = bundle
        .components(&below)
        .into_iter()
        .find(|c| c.binary_search(&x0).is_ok())
        .unwrap();
    for &c in &base_comp {
        slice.insert(c);
    }
    let mut rest = bundle.full_region();
    rest.difference_with(&slice);
    for comp in bundle.components(&rest) {
        if !bundle.reaches_horizon(&comp) {
            for c in comp {
                slice.insert(c);
            }
        }
    }
    slice
}

/// `A_{(−∞,α]} = A ∩ M_{(−∞,α]}`.
pub fn saturated_slice(bundle: &DiscreteBundle, a: &Region, alpha: Cut) -> Region {
    let mut s = total_slice(bundle, alpha);
    s.intersect_with(a);
    s
}

/// `M_{(α,∞)}`, the complement of the saturated slice.
pub fn superlevel(bundle: &DiscreteBundle, alpha: Cut) -> Region {
    let mut r = bundle.full_region();
    r.difference_with(&total_slice(bundle, alpha));
    r
}

/// A gluing-invariant cell set with its release base.
#[derive(Clone, Debug)]
pub struct Subbundle {
    pub cells: Region,
    pub release: ReleaseBase,
}

impl Subbundle {
    pub fn new(bundle: &DiscreteBundle, cells: Region) -> Result<Self, ReleaseError> {
        let release = release(bundle, &cells)?;
        Ok(Subbundle { cells, release })
    }

    pub fn whole(bundle: &DiscreteBundle) -> Self {
        Self::new(bundle, bundle.full_region()).expect("whole bundle is gluing invariant")
    }

    pub fn is_connected(&self, bundle: &DiscreteBundle) -> bool {
        bundle.components(&self.cells).len() == 1
    }
}

/// Sheets of the covering from the release of `A_{(−∞,α]}` to the release
/// of `A`; `None` when the slice misses a release vertex or the count
/// varies.
pub fn slice_sheets(bundle: &DiscreteBundle, a: &Subbundle, alpha: Cut) -> Result<Option<usize>, SliceError> {
    let slice = saturated_slice(bundle, &a.cells, alpha);
    let sub = release(bundle, &slice)?;
    let mut count = vec![0usize; a.release.len()];
    for rv in &sub.vertices {
        let r = a.release.vertex_of(bundle.cell(rv.base, rv.fiber_vertices[0])).unwrap();
        count[r] += 1;
    }
    let k = count.first().copied().unwrap_or(0);
    if k == 0 || count.iter().any(|&c| c != k) {
        return Ok(None);
    }
    // the count is a covering's sheet number; validate it as one
    CoveringMap::inclusion(&sub, &a.release, bundle)?;
    Ok(Some(k))
}

/// Least cut whose slice of `A` covers the release of `A` with one sheet.
pub fn saturating_threshold(bundle: &DiscreteBundle, a: &Subbundle) -> Result<Cut, SliceError> {
    let top = top_cut(bundle);
    let mut cut = bottom_cut(bundle);
    let theta = loop {
        if cut > top {
            return Err(SliceError::HorizonExceeded { what: "saturating threshold".into(), horizon: top });
        }
        if slice_sheets(bundle, a, cut)? == Some(1) {
            break cut;
        }
        cut = cut.next();
    };
    let mut above = theta.next();
    while above <= top {
        if slice_sheets(bundle, a, above)? != Some(1) {
            return Err(SliceError::NotMonotone { theta, cut: above });
        }
        above = above.next();
    }
    Ok(theta)
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub depth: usize,
    pub sub: Subbundle,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Nodes at depth `l` are the components of `M_{(α_l,∞)}`, with `α_0 = −∞`.
#[derive(Clone, Debug)]
pub struct SlicingTree {
    /// `alphas[l - 1] = α_l`.
    pub alphas: Vec<Cut>,
    pub nodes: Vec<TreeNode>,
    pub levels: Vec<Vec<usize>>,
}

pub fn build_tree(bundle: &DiscreteBundle, alphas: &[Cut]) -> Result<SlicingTree, SliceError> {
    let top = top_cut(bundle);
    for (i, w) in alphas.windows(2).enumerate() {
        if w[0] >= w[1] {
            return Err(SliceError::NotIncreasing(i + 1));
        }
    }
    if let Some(&last) = alphas.last() {
        if last > top {
            return Err(SliceError::HorizonExceeded { what: format!("cut {last}"), horizon: top });
        }
    }
    let mut nodes = vec![TreeNode { depth: 0, sub: Subbundle::whole(bundle), parent: None, children: Vec::new() }];
    let mut levels = vec![vec![0]];
    let mut owner = vec![0usize; bundle.cell_count()];
    for (l, &alpha) in alphas.iter().enumerate() {
        let depth = l + 1;
        let above = superlevel(bundle, alpha);
        let mut level = Vec::new();
        for comp in bundle.components(&above) {
            assert!(bundle.reaches_horizon(&comp), "superlevel component without a tail");
            let parent = owner[comp[0]];
            debug_assert!(comp.iter().all(|&c| owner[c] == parent));
            let id = nodes.len();
            let sub = Subbundle::new(bundle, bundle.region_from(comp.iter().copied()))?;
            nodes.push(TreeNode { depth, sub, parent: Some(parent), children: Vec::new() });
            nodes[parent].children.push(id);
            level.push(id);
        }
        for &id in &level {
            for c in nodes[id].sub.cells.ones() {
                owner[c] = id;
            }
        }
        for &id in levels.last().unwrap() {
            assert!(!nodes[id].children.is_empty(), "slicing tree has a leaf below the horizon");
        }
        levels.push(level);
    }
    Ok(SlicingTree { alphas: alphas.to_vec(), nodes, levels })
}

impl SlicingTree {
    pub fn root(&self) -> usize {
        0
    }

    /// `α_l` for `l ≥ 1`.
    pub fn alpha(&self, l: usize) -> Option<Cut> {
        l.checked_sub(1).and_then(|i| self.alphas.get(i)).copied()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn level(&self, depth: usize) -> &[usize] {
        self.levels.get(depth).map_or(&[], |v| v.as_slice())
    }

    pub fn tsuc(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn tssuc(&self, id: usize) -> Vec<usize> {
        self.nodes[id].children.iter().flat_map(|&c| self.nodes[c].children.iter().copied()).collect()
    }

    fn slice_at(&self, bundle: &DiscreteBundle, id: usize, ahead: usize) -> Result<Region, SliceError> {
        let depth = self.nodes[id].depth;
        let alpha = self.alpha(depth + ahead).ok_or(SliceError::MissingCut { node: id, depth, need: depth + ahead })?;
        Ok(saturated_slice(bundle, &self.nodes[id].sub.cells, alpha))
    }

    /// `Tse A = A_{(−∞, α_{l+1}]}`.
    pub fn tse(&self, bundle: &DiscreteBundle, id: usize) -> Result<Region, SliceError> {
        self.slice_at(bundle, id, 1)
    }

    /// `Shta A = A_{(−∞, α_{l+2}]}`.
    pub fn shta(&self, bundle: &DiscreteBundle, id: usize) -> Result<Region, SliceError> {
        self.slice_at(bundle, id, 2)
    }

    /// Depth-first list of branches from the root to the deepest level.
    pub fn branches(&self) -> Vec<Vec<usize>> {
        let deepest = self.levels.len() - 1;
        self.level(deepest)
            .iter()
            .map(|&leaf| {
                let mut path = vec![leaf];
                while let Some(p) = self.nodes[*path.last().unwrap()].parent {
                    path.push(p);
                }
                path.reverse();
                path
            })
            .collect()
    }
}

/// An end of the fiber: one tail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FiberEnd {
    pub tail: usize,
    pub name: String,
}

/// An end of the total space: a component of the tail cells, recorded with
/// its `(base vertex, tail)` members.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TotalEnd {
    pub cells: Vec<CellId>,
    pub members: Vec<(usize, usize)>,
}

pub fn ends_of_fiber(bundle: &DiscreteBundle) -> Vec<FiberEnd> {
    bundle.fiber.tails.iter().enumerate().map(|(tail, t)| FiberEnd { tail, name: t.name.clone() }).collect()
}

pub fn ends_of_total(bundle: &DiscreteBundle) -> Vec<TotalEnd> {
    let above = bundle.level_band(Some(top_cut(bundle)), None);
    bundle
        .components(&above)
        .into_iter()
        .map(|cells| {
            let mut members: Vec<(usize, usize)> = cells
                .iter()
                .map(|&c| {
                    let (b, v) = bundle.split(c);
                    (b, bundle.fiber.tail_of(v).expect("horizon cell outside every tail"))
                })
                .collect();
            members.sort_unstable();
            members.dedup();
            TotalEnd { cells, members }
        })
        .collect()
}

/// Sends each fiber end to the total end containing its copy over `b0`.
pub fn end_surjection(bundle: &DiscreteBundle) -> Vec<usize> {
    let ends = ends_of_total(bundle);
    let b0 = bundle.base.b0;
    let map: Vec<usize> = (0..bundle.fiber.tails.len())
        .map(|t| ends.iter().position(|e| e.members.binary_search(&(b0, t)).is_ok()).unwrap())
        .collect();
    for i in 0..ends.len() {
        assert!(map.contains(&i), "end {i} of the total space is not hit");
    }
    map
}

/// Tail mass of a total end: infinite iff some member tail is.
pub fn end_volume_class<S: Scalar>(bundle: &DiscreteBundle, form: &FiberVolume<S>, end: &TotalEnd) -> ExtReal<S> {
    end.members
        .iter()
        .fold(ExtReal::Finite(S::zero()), |acc, &(b, t)| acc + form.tail(bundle, b, t).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scalar::rat;

    fn levels_of(bundle: &DiscreteBundle, r: &Region) -> Vec<i64> {
        let mut l: Vec<i64> = r.ones().map(|c| bundle.level(c)).collect();
        l.sort_unstable();
        l
    }

    #[test]
    fn triv_slice() {
        let triv = fixtures::triv(4);
        assert_eq!(levels_of(&triv, &total_slice(&triv, Cut(1))), vec![0, 1]);
        assert!(total_slice(&triv, Cut(-1)).is_clear());
    }

    #[test]
    fn cyl_slice_is_the_centers() {
        let cyl = fixtures::cyl(4);
        let s = total_slice(&cyl, Cut(0));
        let cells: Vec<_> = s.ones().collect();
        assert_eq!(cells.len(), 3);
        assert!(cells.iter().all(|&c| cyl.split(c).1 == 0));
    }

    #[test]
    fn bounded_pocket_is_absorbed() {
        let joined = fixtures::joined_rays(5, 2);
        // the other bottom vertex reaches the tail, so it stays outside
        assert_eq!(total_slice(&joined, Cut(0)).count_ones(..), 1);
        let pocket = fixtures::pocket(5);
        let s = total_slice(&pocket, Cut(1));
        assert!(s.ones().any(|c| pocket.level(c) == 3));
        assert!(!s.contains(pocket.cell(0, 2)));
    }

    #[test]
    fn thresholds() {
        let triv = fixtures::triv(4);
        assert_eq!(saturating_threshold(&triv, &Subbundle::whole(&triv)).unwrap(), Cut(0));
        let joined = fixtures::joined_rays(6, 3);
        assert_eq!(saturating_threshold(&joined, &Subbundle::whole(&joined)).unwrap(), Cut(0));
    }

    #[test]
    fn triv_tree_is_a_path() {
        let triv = fixtures::triv(4);
        let t = build_tree(&triv, &[Cut(0), Cut(1)]).unwrap();
        assert_eq!(t.levels.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 1]);
        assert_eq!(levels_of(&triv, &t.tse(&triv, 0).unwrap()), vec![0]);
    }

    #[test]
    fn forked_tree_and_shta() {
        let f = fixtures::forked_ray(6, 2);
        let t = build_tree(&f, &[Cut(2), Cut(3)]).unwrap();
        assert_eq!(t.tsuc(0).len(), 2);
        let shta = t.shta(&f, 0).unwrap();
        let mut expect = f.full_region();
        for g in t.tssuc(0) {
            expect.difference_with(&t.node(g).sub.cells);
        }
        assert_eq!(shta, expect);
    }

    #[test]
    fn cyl_tree_has_three_children() {
        let cyl = fixtures::cyl(4);
        let t = build_tree(&cyl, &[Cut(0)]).unwrap();
        assert_eq!(t.tsuc(0).len(), 3);
        let mut union = t.tse(&cyl, 0).unwrap();
        for &c in t.tsuc(0) {
            assert!(union.is_disjoint(&t.node(c).sub.cells));
            union.union_with(&t.node(c).sub.cells);
        }
        assert_eq!(union, cyl.full_region());
    }

    #[test]
    fn horizon_is_enforced() {
        let triv = fixtures::triv(3);
        assert!(matches!(build_tree(&triv, &[Cut(0), Cut(5)]), Err(SliceError::HorizonExceeded { .. })));
        assert!(matches!(build_tree(&triv, &[Cut(1), Cut(0)]), Err(SliceError::NotIncreasing(1))));
    }

    #[test]
    fn end_counts() {
        let triv = fixtures::triv(3);
        assert_eq!((ends_of_fiber(&triv).len(), ends_of_total(&triv).len()), (1, 1));
        assert_eq!(ends_of_total(&fixtures::vec_bundle(3, 3)).len(), 1);
        let cyl = fixtures::cyl(4);
        assert_eq!((ends_of_fiber(&cyl).len(), ends_of_total(&cyl).len()), (4, 3));
        let gamma = end_surjection(&cyl);
        assert_eq!(gamma[0], gamma[1]);
        assert_ne!(gamma[2], gamma[3]);
        assert_ne!(gamma[0], gamma[2]);
    }

    #[test]
    fn end_volume() {
        let cyl = fixtures::cyl(4);
        let mut form = FiberVolume::uniform(&cyl, rat(1, 1), ExtReal::Finite(rat(1, 2)));
        let ends = ends_of_total(&cyl);
        let gamma = end_surjection(&cyl);
        assert_eq!(end_volume_class(&cyl, &form, &ends[gamma[2]]), ExtReal::Finite(rat(3, 2)));
        assert_eq!(end_volume_class(&cyl, &form, &ends[gamma[0]]), ExtReal::Finite(rat(3, 1)));
        *form.tail_mut(&cyl, 1, 0) = ExtReal::Infinite;
        assert!(end_volume_class(&cyl, &form, &ends[gamma[0]]).is_infinite());
    }
}

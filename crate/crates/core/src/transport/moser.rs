//! One-dimensional Moser maps by monotone rearrangement.

use std::sync::Arc;

use super::sampled::SampledMap;
use super::{Density1d, Map1d, SharedDensity, TransportError};

/// `φ = F_src⁻¹ ∘ F_tgt` on `[lo, hi]`, anchored at a finite endpoint; so
/// `φ*src = tgt` there. Outside the interval the map is the identity.
#[derive(Clone)]
pub struct MoserMap {
    pub lo: f64,
    pub hi: f64,
    src: SharedDensity,
    tgt: SharedDensity,
    anchor: f64,
    src_anchor: f64,
    tgt_anchor: f64,
    scale: f64,
}

impl std::fmt::Debug for MoserMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MoserMap").field("lo", &self.lo).field("hi", &self.hi).finish()
    }
}

pub fn mass_tolerance(m: f64) -> f64 {
    1e-12 * m.abs().max(1.0)
}

/// Builds the map carrying `src` to `tgt` on `[lo, hi]`. Bounded intervals
/// need equal masses; on half-lines the map is anchored at the finite end.
pub fn moser_1d(src: SharedDensity, tgt: SharedDensity, lo: f64, hi: f64) -> Result<MoserMap, TransportError> {
    if !(lo < hi) || (lo.is_infinite() && hi.is_infinite()) {
        return Err(TransportError::Layout(format!("bad interval [{lo}, {hi}]")));
    }
    let probe_lo = if lo.is_finite() { lo } else { hi - 1e6 };
    let probe_hi = if hi.is_finite() { hi } else { lo + 1e6 };
    let min = src.lower_bound(probe_lo, probe_hi);
    if !(min > 0.0) {
        return Err(TransportError::NotPositive { lo, hi, min });
    }
    let tmin = tgt.lower_bound(probe_lo, probe_hi);
    if tmin < 0.0 {
        return Err(TransportError::NotPositive { lo, hi, min: tmin });
    }
    let (anchor, scale) = if lo.is_finite() && hi.is_finite() {
        let (ms, mt) = (src.mass(lo, hi), tgt.mass(lo, hi));
        if (ms - mt).abs() > mass_tolerance(ms) {
            return Err(TransportError::MassMismatch { lo, hi, source_mass: ms, target_mass: mt });
        }
        // absorbs rounding so both endpoints stay fixed
        (lo, if mt > 0.0 { ms / mt } else { 1.0 })
    } else if lo.is_finite() {
        (lo, 1.0)
    } else {
        (hi, 1.0)
    };
    Ok(MoserMap {
        lo,
        hi,
        src_anchor: src.cdf(anchor),
        tgt_anchor: tgt.cdf(anchor),
        src,
        tgt,
        anchor,
        scale,
    })
}

impl MoserMap {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Image and derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        if !self.contains(x) {
            return (x, 1.0);
        }
        let m = self.src_anchor + self.scale * (self.tgt.cdf(x) - self.tgt_anchor);
        let y = self.src.inverse_cdf(m).clamp(self.lo, self.hi);
        let d = self.scale * self.tgt.eval(x) / self.src.eval(y);
        (y, d)
    }
}

impl Map1d for MoserMap {
    fn apply(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }
}

/// Moser maps on interior-disjoint intervals between two consecutive forms.
#[derive(Clone, Debug, Default)]
pub struct Stage {
    pub label: String,
    pub maps: Vec<MoserMap>,
}

impl Stage {
    pub fn new(label: impl Into<String>, mut maps: Vec<MoserMap>) -> Result<Self, TransportError> {
        maps.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for w in maps.windows(2) {
            if w[1].lo < w[0].hi {
                return Err(TransportError::Layout(format!(
                    "overlapping stage intervals [{}, {}] and [{}, {}]",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Ok(Stage { label: label.into(), maps })
    }

    pub fn eval(&self, x: f64) -> (f64, f64) {
        let i = self.maps.partition_point(|m| m.hi < x);
        match self.maps.get(i) {
            Some(m) if m.contains(x) => m.eval(x),
            _ => (x, 1.0),
        }
    }

    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.maps.iter().map(|m| (m.lo, m.hi))
    }
}

/// Composite `g_0 ∘ g_1 ∘ … ∘ g_k` of stages on one fiber component.
#[derive(Clone, Debug, Default)]
pub struct FiberMap {
    pub stages: Vec<Stage>,
    /// Sorted, merged change support; the map is the identity elsewhere.
    pub support: Vec<(f64, f64)>,
    pub sampled: Option<SampledMap>,
}

impl FiberMap {
    pub fn new(stages: Vec<Stage>) -> Self {
        let mut iv: Vec<(f64, f64)> = stages.iter().flat_map(|s| s.intervals()).collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<(f64, f64)> = Vec::new();
        for (a, b) in iv {
            match support.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => support.push((a, b)),
            }
        }
        FiberMap { stages, support, sampled: None }
    }

    pub fn single(map: MoserMap) -> Self {
        FiberMap::new(vec![Stage { label: "moser".into(), maps: vec![map] }])
    }

    pub fn identity() -> Self {
        FiberMap::default()
    }

    pub fn in_support(&self, x: f64) -> bool {
        let i = self.support.partition_point(|s| s.1 < x);
        self.support.get(i).is_some_and(|s| s.0 <= x)
    }

    pub fn eval(&self, x: f64) -> (f64, f64) {
        if !self.in_support(x) {
            return (x, 1.0);
        }
        let mut y = x;
        let mut d = 1.0;
        for stage in self.stages.iter().rev() {
            let (y2, d2) = stage.eval(y);
            y = y2;
            d *= d2;
        }
        (y, d)
    }

    /// `g_0 ∘ … ∘ g_{k−1}` only.
    pub fn eval_prefix(&self, x: f64, k: usize) -> (f64, f64) {
        let mut y = x;
        let mut d = 1.0;
        for stage in self.stages[..k.min(self.stages.len())].iter().rev() {
            let (y2, d2) = stage.eval(y);
            y = y2;
            d *= d2;
        }
        (y, d)
    }

    /// Fills in the monotone cubic surrogate from samples of the exact map.
    pub fn sample(&mut self, xs: &[f64]) {
        let ys: Vec<f64> = xs.iter().map(|&x| self.eval(x).0).collect();
        self.sampled = SampledMap::new(xs.to_vec(), ys).ok();
    }
}

impl Map1d for FiberMap {
    fn apply(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }
}

pub fn shared<D: Density1d + 'static>(d: D) -> SharedDensity {
    Arc::new(d)
}

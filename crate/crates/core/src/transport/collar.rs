//! Matching two densities near a cut point while keeping the mass on each
//! side of the cut.

use serde::Serialize;

use super::density::{integrate, kronrod, kronrod_nodes, PlDensity};
use super::moser::{moser_1d, shared, FiberMap, MoserMap, Stage};
use super::{Density1d, SharedDensity, TransportError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollarSettings {
    pub eps: f64,
    /// How often `ε` may be halved before giving up.
    pub eps_halvings: usize,
    /// How often `δ` may be halved (from `ε/4`) for each `ε`.
    pub delta_halvings: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CollarSettings {
    fn default() -> Self {
        CollarSettings { eps: 0.4, eps_halvings: 8, delta_halvings: 6, tol: 1e-13, max_iter: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

#[derive(Clone, Debug, Serialize)]
pub struct HalfCollar {
    pub side: Side,
    /// False when the two densities already agree on this half.
    pub active: bool,
    pub t: f64,
    /// `ln((1 − t)/t)`, the exponent actually used; keeps `t` near 0 or 1
    /// resolvable.
    pub log_odds: f64,
    pub iterations: usize,
    /// `θ(t)` at the returned root.
    pub theta: f64,
    /// Finite-difference `∂θ/∂t` at ten sample points.
    pub theta_slopes: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Collar {
    pub cut: f64,
    pub eps: f64,
    pub delta: f64,
    pub attempts: usize,
    pub minus: HalfCollar,
    pub plus: HalfCollar,
}

const LOG_ODDS_RANGE: f64 = 64.0;

/// `ln S(r)` for the smooth step `S(r) = ψ(1 − r)/(ψ(1 − r) + ψ(r))`,
/// `ψ(x) = e^{−1/x}`, which falls from 1 at `r = 0` to 0 at `r = 1`.
fn ln_step(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if r >= 1.0 {
        return f64::NEG_INFINITY;
    }
    // S = 1/(1 + e^z)
    let z = 1.0 / (1.0 - r) - 1.0 / r;
    if z > 0.0 {
        -(z + (-z).exp().ln_1p())
    } else {
        -z.exp().ln_1p()
    }
}

/// `ζ(s, t)`: 1 for `s ≤ δ`, 0 for `s ≥ ε − δ`, strictly increasing in `t`
/// in between, with `ζ(s, ½)` the plain step.
pub fn zeta(s: f64, t: f64, eps: f64, delta: f64) -> f64 {
    zeta_log(s, ((1.0 - t) / t).ln(), eps, delta)
}

/// `ζ` with `t` given by `u = ln((1 − t)/t)`; `ζ(s, 1 − t)` is `zeta_log(s, −u)`.
pub fn zeta_log(s: f64, u: f64, eps: f64, delta: f64) -> f64 {
    if s <= delta {
        return 1.0;
    }
    if s >= eps - delta {
        return 0.0;
    }
    let r = (s - delta) / (eps - 2.0 * delta);
    (u.exp() * ln_step(r)).exp()
}

/// Panel ends in the transition variable `r ∈ [0, 1]`: uniform on the first
/// half, then geometric toward 1 where `ζ` with extreme `t` has its
/// narrow features.
pub(crate) fn transition_edges() -> Vec<f64> {
    let mut e: Vec<f64> = (0..64).map(|k| 0.5 * k as f64 / 64.0).collect();
    for k in 2..=120 {
        e.push(1.0 - f64::powf(2.0, -(k as f64) / 2.0));
    }
    e.push(1.0);
    e
}

/// Quadrature nodes of `θ` over the transition band, with `ln S` and both
/// densities cached, so each `θ(u)` costs a pass of exponentials.
struct ThetaTable {
    core: f64,
    nodes: Vec<(f64, f64, f64, f64)>,
}

impl ThetaTable {
    fn new(h: &HalfData<'_>) -> Self {
        let core = h.mass(h.tau, 0.0, h.delta) - h.mass(h.omega, 0.0, h.delta);
        let band = h.eps - 2.0 * h.delta;
        let mut nodes = Vec::new();
        for w in transition_edges().windows(2) {
            for (r, wk, _) in kronrod_nodes(w[0], w[1]) {
                let x = h.x(h.delta + r * band);
                nodes.push((wk * band, ln_step(r), h.tau.eval(x), h.omega.eval(x)));
            }
        }
        ThetaTable { core, nodes }
    }

    fn eval(&self, u: f64) -> f64 {
        let (p, q) = (u.exp(), (-u).exp());
        let mut total = 0.0;
        for &(w, ls, tau, omega) in &self.nodes {
            total += w * ((p * ls).exp() * tau - (q * ls).exp() * omega);
        }
        self.core + total
    }
}

struct HalfData<'a> {
    omega: &'a PlDensity,
    tau: &'a PlDensity,
    cut: f64,
    sign: f64,
    eps: f64,
    delta: f64,
}

impl HalfData<'_> {
    fn x(&self, s: f64) -> f64 {
        self.cut + self.sign * s
    }

    fn mass(&self, d: &PlDensity, s0: f64, s1: f64) -> f64 {
        (d.cdf(self.x(s1)) - d.cdf(self.x(s0))) * self.sign
    }

    fn inequalities(&self) -> bool {
        let inner = self.eps - self.delta;
        self.mass(self.tau, 0.0, self.delta) < self.mass(self.omega, 0.0, inner)
            && self.mass(self.omega, 0.0, self.delta) < self.mass(self.tau, 0.0, inner)
    }
}

/// Roots beyond this `|u|` put features below what the quadrature resolves;
/// a narrower collar is tried instead.
const MAX_LOG_ODDS: f64 = 12.0;

/// `θ(u)` by adaptive quadrature, independent of the table.
fn theta_check(h: &HalfData<'_>, u: f64) -> f64 {
    let band = h.eps - 2.0 * h.delta;
    let f = |r: f64| {
        let x = h.x(h.delta + r * band);
        let ls = ln_step(r);
        band * ((u.exp() * ls).exp() * h.tau.eval(x) - ((-u).exp() * ls).exp() * h.omega.eval(x))
    };
    let core = h.mass(h.tau, 0.0, h.delta) - h.mass(h.omega, 0.0, h.delta);
    core + transition_edges().windows(2).map(|w| integrate(&f, w[0], w[1], 1e-18)).sum::<f64>()
}

fn agree_on(a: &PlDensity, b: &PlDensity, lo: f64, hi: f64) -> bool {
    let mut pts = vec![lo, hi];
    pts.extend(a.xs.iter().chain(&b.xs).copied().filter(|&x| x > lo && x < hi));
    pts.iter().all(|&x| a.eval(x) == b.eval(x))
}

/// `None` when the root is too extreme for this collar width.
fn solve_half(h: &HalfData<'_>, side: Side, settings: &CollarSettings) -> Result<Option<HalfCollar>, TransportError> {
    let (lo, hi) = match side {
        Side::Minus => (h.cut - h.eps, h.cut),
        Side::Plus => (h.cut, h.cut + h.eps),
    };
    let active = !agree_on(h.omega, h.tau, lo, hi);
    let table = ThetaTable::new(h);
    let at = |t: f64| table.eval(((1.0 - t) / t).ln());
    let dt = 1e-4;
    let slopes: Vec<f64> = (0..10)
        .map(|i| {
            let t = 0.05 + 0.1 * i as f64;
            (at(t + dt) - at(t - dt)) / (2.0 * dt)
        })
        .collect();
    if !active {
        return Ok(Some(HalfCollar { side, active, t: 0.5, log_odds: 0.0, iterations: 0, theta: 0.0, theta_slopes: slopes }));
    }
    let (u, theta, iterations) = match bisect(&table, h.cut, settings) {
        Ok(r) if r.0.abs() <= MAX_LOG_ODDS => r,
        Ok(_) | Err(TransportError::NoRoot { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if theta_check(h, u).abs() > 4.0 * settings.tol {
        return Ok(None);
    }
    let t = 1.0 / (1.0 + u.exp());
    Ok(Some(HalfCollar { side, active, t, log_odds: u, iterations, theta, theta_slopes: slopes }))
}

/// Root of the decreasing `u ↦ θ(u)`: bracket outward from 0 by doubling,
/// then bisect.
fn bisect(table: &ThetaTable, cut: f64, settings: &CollarSettings) -> Result<(f64, f64, usize), TransportError> {
    let th0 = table.eval(0.0);
    let mut it = 1;
    if th0.abs() < settings.tol {
        return Ok((0.0, th0, it));
    }
    let dir = if th0 > 0.0 { 1.0 } else { -1.0 };
    let (mut inner, mut step) = (0.0, 1.0);
    let mut outer = dir * step;
    let mut best = th0.abs();
    loop {
        it += 1;
        let th = table.eval(outer);
        best = best.min(th.abs());
        if th.abs() < settings.tol {
            return Ok((outer, th, it));
        }
        if (th > 0.0) != (th0 > 0.0) {
            break;
        }
        if step >= LOG_ODDS_RANGE {
            return Err(TransportError::NoRoot { cut, residual: best });
        }
        inner = outer;
        step *= 2.0;
        outer = dir * step;
    }
    let (mut a, mut b) = if inner < outer { (inner, outer) } else { (outer, inner) };
    while it < settings.max_iter {
        it += 1;
        let u = 0.5 * (a + b);
        let th = table.eval(u);
        best = best.min(th.abs());
        if th.abs() < settings.tol {
            return Ok((u, th, it));
        }
        if th > 0.0 {
            a = u;
        } else {
            b = u;
        }
        if b - a < 1e-15 * LOG_ODDS_RANGE {
            break;
        }
    }
    Err(TransportError::NoRoot { cut, residual: best })
}

/// Finds `ε`, `δ` good for every `(ω, τ)` pair at `cut`, then solves for
/// `t` on each half of each pair.
pub fn collar_family(
    members: &[(&PlDensity, &PlDensity)],
    cut: f64,
    settings: &CollarSettings,
) -> Result<Vec<Collar>, TransportError> {
    fn halves<'a>(w: &'a PlDensity, t: &'a PlDensity, cut: f64, eps: f64, delta: f64) -> [HalfData<'a>; 2] {
        [-1.0, 1.0].map(|sign| HalfData { omega: w, tau: t, cut, sign, eps, delta })
    }
    let mut attempts = 0;
    for k in 0..=settings.eps_halvings {
        let eps = settings.eps / f64::powi(2.0, k as i32);
        'delta: for j in 0..=settings.delta_halvings {
            attempts += 1;
            let delta = eps / 4.0 / f64::powi(2.0, j as i32);
            let ok = members.iter().all(|(w, t)| {
                halves(w, t, cut, eps, delta).iter().all(|h| {
                    let (lo, hi) = if h.sign < 0.0 { (cut - eps, cut) } else { (cut, cut + eps) };
                    agree_on(w, t, lo, hi) || h.inequalities()
                })
            });
            if !ok {
                continue;
            }
            let mut out = Vec::new();
            for (w, t) in members {
                let [m, p] = halves(w, t, cut, eps, delta);
                let (Some(minus), Some(plus)) = (solve_half(&m, Side::Minus, settings)?, solve_half(&p, Side::Plus, settings)?)
                else {
                    // a smaller δ does not tame an extreme root; narrow ε instead
                    break 'delta;
                };
                out.push(Collar { cut, eps, delta, attempts, minus, plus });
            }
            return Ok(out);
        }
    }
    Err(TransportError::CollarTooNarrow { cut, attempts })
}

impl Collar {
    pub fn half(&self, side: Side) -> &HalfCollar {
        match side {
            Side::Minus => &self.minus,
            Side::Plus => &self.plus,
        }
    }

    /// Where the modified density equals the target exactly.
    pub fn matched_zone(&self) -> (f64, f64) {
        (self.cut - self.delta, self.cut + self.delta)
    }

    /// Where the modified density can differ from the source.
    pub fn zone(&self, side: Side) -> (f64, f64) {
        let w = self.eps - self.delta;
        match side {
            Side::Minus => (self.cut - w, self.cut),
            Side::Plus => (self.cut, self.cut + w),
        }
    }

    pub fn interval(&self, side: Side) -> (f64, f64) {
        match side {
            Side::Minus => (self.cut - self.eps, self.cut),
            Side::Plus => (self.cut, self.cut + self.eps),
        }
    }

    /// `(1 − μ)ω + λτ` with `λ = ζ(s, t)`, `μ = ζ(s, 1 − t)`.
    pub fn blend(&self, omega: &PlDensity, tau: &PlDensity, x: f64) -> f64 {
        let side = if x < self.cut { Side::Minus } else { Side::Plus };
        let h = self.half(side);
        let s = (x - self.cut).abs();
        if !h.active || s >= self.eps - self.delta {
            return omega.eval(x);
        }
        if s <= self.delta {
            return tau.eval(x);
        }
        let lam = zeta_log(s, h.log_odds, self.eps, self.delta);
        let mu = zeta_log(s, -h.log_odds, self.eps, self.delta);
        (1.0 - mu) * omega.eval(x) + lam * tau.eval(x)
    }
}

#[derive(Clone, Debug)]
struct Zone {
    lo: f64,
    hi: f64,
    collar: usize,
    cdf_lo: f64,
    cdf_hi: f64,
    /// Sum of corrections of all zones up to and including this one.
    offset_after: f64,
    /// Panel ends and the correction `∫_lo^knot (ω′ − ω)` at each.
    knots: Vec<f64>,
    cum: Vec<f64>,
}

const ZONE_PANELS: usize = 96;

/// `ω` modified inside a set of collars; equals `ω` elsewhere.
#[derive(Clone, Debug)]
pub struct CollaredDensity {
    pub omega: PlDensity,
    pub tau: PlDensity,
    pub collars: Vec<Collar>,
    zones: Vec<Zone>,
}

impl CollaredDensity {
    pub fn new(omega: PlDensity, tau: PlDensity, mut collars: Vec<Collar>) -> Self {
        collars.sort_by(|a, b| a.cut.total_cmp(&b.cut));
        let mut out = CollaredDensity { omega, tau, collars, zones: Vec::new() };
        let mut offset = 0.0;
        let mut zones = Vec::new();
        for (i, c) in out.collars.iter().enumerate() {
            for side in [Side::Minus, Side::Plus] {
                if !c.half(side).active {
                    continue;
                }
                let (lo, hi) = c.zone(side);
                let (knots, cum) = out.tabulate(i, lo, hi);
                let cdf_lo = out.omega.cdf(lo) + offset;
                offset += *cum.last().unwrap();
                zones.push(Zone {
                    lo,
                    hi,
                    collar: i,
                    cdf_lo,
                    cdf_hi: out.omega.cdf(hi) + offset,
                    offset_after: offset,
                    knots,
                    cum,
                });
            }
        }
        out.zones = zones;
        out
    }

    fn difference(&self, collar: usize, x: f64) -> f64 {
        self.collars[collar].blend(&self.omega, &self.tau, x) - self.omega.eval(x)
    }

    fn tabulate(&self, collar: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let c = &self.collars[collar];
        let mut knots: Vec<f64> = (0..=ZONE_PANELS).map(|k| a + (b - a) * k as f64 / ZONE_PANELS as f64).collect();
        let band = c.eps - 2.0 * c.delta;
        for sign in [-1.0, 1.0] {
            knots.extend(transition_edges().iter().map(|r| c.cut + sign * (c.delta + r * band)));
        }
        knots.retain(|&e| e >= a && e <= b);
        knots.extend(self.omega.xs.iter().chain(&self.tau.xs).copied().filter(|&x| x > a && x < b));
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let f = |x: f64| self.difference(collar, x);
        let mut cum = vec![0.0];
        for w in knots.windows(2) {
            let last = *cum.last().unwrap();
            cum.push(last + integrate(&f, w[0], w[1], 1e-17));
        }
        (knots, cum)
    }

    fn partial(&self, z: &Zone, x: f64) -> f64 {
        let i = z.knots.partition_point(|&k| k <= x).clamp(1, z.knots.len() - 1) - 1;
        let f = |y: f64| self.difference(z.collar, y);
        z.cum[i] + kronrod(&f, z.knots[i], x)
    }

    fn zone_at(&self, x: f64) -> Option<usize> {
        let i = self.zones.partition_point(|z| z.hi < x);
        (i < self.zones.len() && self.zones[i].lo <= x).then_some(i)
    }
}

impl Density1d for CollaredDensity {
    fn eval(&self, x: f64) -> f64 {
        match self.zone_at(x) {
            Some(i) => self.collars[self.zones[i].collar].blend(&self.omega, &self.tau, x),
            None => self.omega.eval(x),
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        let i = self.zones.partition_point(|z| z.hi <= x);
        let before = if i == 0 { 0.0 } else { self.zones[i - 1].offset_after };
        match self.zones.get(i) {
            Some(z) if z.lo < x => {
                let base = z.cdf_lo - self.omega.cdf(z.lo);
                self.omega.cdf(x) + base + self.partial(z, x)
            }
            _ => self.omega.cdf(x) + before,
        }
    }

    fn inverse_cdf(&self, m: f64) -> f64 {
        let mut before = 0.0;
        for z in &self.zones {
            if m < z.cdf_lo {
                return self.omega.inverse_cdf(m - before);
            }
            if m <= z.cdf_hi {
                return newton(self, m, z.lo, z.hi);
            }
            before = z.offset_after;
        }
        self.omega.inverse_cdf(m - before)
    }

    fn lower_bound(&self, a: f64, b: f64) -> f64 {
        let mut m = self.omega.lower_bound(a, b);
        for z in &self.zones {
            let (lo, hi) = (z.lo.max(a), z.hi.min(b));
            if lo < hi {
                for k in 0..=200 {
                    m = m.min(self.eval(lo + (hi - lo) * k as f64 / 200.0));
                }
            }
        }
        m
    }
}

/// Safeguarded Newton for `cdf(y) = m` on a bracket.
fn newton(d: &CollaredDensity, m: f64, mut a: f64, mut b: f64) -> f64 {
    let (fa, fb) = (d.cdf(a) - m, d.cdf(b) - m);
    if fa >= 0.0 {
        return a;
    }
    if fb <= 0.0 {
        return b;
    }
    let mut y = a + (b - a) * (-fa) / (fb - fa);
    let tol = 4.0 * f64::EPSILON * m.abs().max(1.0);
    for _ in 0..100 {
        let f = d.cdf(y) - m;
        if f.abs() <= tol {
            break;
        }
        if f < 0.0 {
            a = y;
        } else {
            b = y;
        }
        let step = y - f / d.eval(y);
        let next = if step > a && step < b { step } else { 0.5 * (a + b) };
        if (next - y).abs() < 1e-15 || b - a < 1e-15 {
            return next;
        }
        y = next;
    }
    y
}

/// Collar output on one fiber: the modified density and the map carrying
/// `ω` to it, supported in the active half-collars.
pub struct CollarMatch {
    pub density: std::sync::Arc<CollaredDensity>,
    pub map: FiberMap,
    pub stage: Stage,
}

/// Matches `ω` to `τ` near each cut.
pub fn collar_match(
    omega: &PlDensity,
    tau: &PlDensity,
    cuts: &[f64],
    settings: &CollarSettings,
) -> Result<CollarMatch, TransportError> {
    let mut collars = Vec::new();
    for &cut in cuts {
        collars.extend(collar_family(&[(omega, tau)], cut, settings)?);
    }
    let density = std::sync::Arc::new(CollaredDensity::new(omega.clone(), tau.clone(), collars));
    let src: SharedDensity = shared(omega.clone());
    let tgt: SharedDensity = density.clone();
    let mut maps: Vec<MoserMap> = Vec::new();
    for c in &density.collars {
        for side in [Side::Minus, Side::Plus] {
            if c.half(side).active {
                let (lo, hi) = c.interval(side);
                maps.push(moser_1d(src.clone(), tgt.clone(), lo, hi)?);
            }
        }
    }
    let stage = Stage::new("collar", maps)?;
    let map = FiberMap::new(vec![stage.clone()]);
    Ok(CollarMatch { density, map, stage })
}

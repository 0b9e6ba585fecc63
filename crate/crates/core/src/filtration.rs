//! The inductive filtration: per round, cut the bundle twice more, move
//! released volume between the new slices, and leave `ω_n`, `τ_n` agreeing
//! on ever larger pieces.

use serde::Serialize;

use crate::bundle::{
    equal_fiber_integral, fiber_integral, validate_bundle, CellId, Check, DiscreteBundle, FiberVolume, Region,
    VolumeError,
};
use crate::release::{
    approximate_split, pullback, pushforward, released_integral, CoveringMap, ReleaseBase, ReleaseError,
};
use crate::scalar::{Cut, ExtReal, Scalar};
use crate::slicing::{build_tree, saturated_slice, saturating_threshold, top_cut, SliceError, SlicingTree, Subbundle};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FiltrationError {
    #[error("hypotheses fail: {0}")]
    Hypothesis(String),
    #[error("round {round}: {error}")]
    Slice { round: usize, error: SliceError, completed: usize },
    #[error("round {round}: {error}")]
    Release { round: usize, error: ReleaseError },
    #[error("round {round}: {error}")]
    Transfer { round: usize, error: TransferError },
    #[error("round {round}: finite and infinite released integrals mixed on node {node}")]
    Indeterminate { round: usize, node: usize },
    #[error("round {round}: audit failed: {detail}")]
    Audit { round: usize, detail: String },
}

impl FiltrationError {
    pub fn is_horizon(&self) -> bool {
        matches!(self, FiltrationError::Slice { error: SliceError::HorizonExceeded { .. }, .. })
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TransferError {
    #[error("release vertex {0} has no cell inside the region")]
    NoInterior(usize),
    #[error("target {value} at release vertex {vertex} is not positive")]
    NonPositiveTarget { vertex: usize, value: String },
    #[error("target has {got} entries for {expected} release vertices")]
    Shape { got: usize, expected: usize },
}

/// Replaces `form` on the cells of `k` so that its released integral over
/// `k` becomes `w`, keeping every mass positive.
pub fn transfer_volume<S: Scalar>(
    bundle: &DiscreteBundle,
    form: &FiberVolume<S>,
    k: &Region,
    rel: &ReleaseBase,
    w: &[S],
) -> Result<FiberVolume<S>, TransferError> {
    if w.len() != rel.len() {
        return Err(TransferError::Shape { got: w.len(), expected: rel.len() });
    }
    let mut groups = Vec::with_capacity(rel.len());
    for r in 0..rel.len() {
        let cells: Vec<CellId> = rel.cells_in(bundle, r, k).into_iter().filter(|&c| !bundle.is_tail_cell(c)).collect();
        if cells.is_empty() {
            return Err(TransferError::NoInterior(r));
        }
        if !w[r].is_positive() {
            return Err(TransferError::NonPositiveTarget { vertex: r, value: w[r].to_wire() });
        }
        let current = cells.iter().fold(S::zero(), |s, &c| s + form.mass[c].clone());
        groups.push((cells, current));
    }
    let two = S::from_i64(2).unwrap();
    let mut t = S::half();
    for ((_, current), wr) in groups.iter().zip(w) {
        t = S::min_of(t, wr.clone() / (two.clone() * current.clone()));
    }
    let mut out = form.clone();
    for ((cells, current), wr) in groups.iter().zip(w) {
        for &c in cells {
            out.mass[c] = out.mass[c].clone() * t.clone();
        }
        let lowest = cells[0];
        out.mass[lowest] = out.mass[lowest].clone() + (wr.clone() - t.clone() * current.clone());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassStatus {
    BothFinite,
    BothInfinite,
    Mismatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassEntry {
    pub cut: String,
    /// Smallest cell of the superlevel component.
    pub component: CellId,
    pub status: ClassStatus,
    /// `∫̃ω − ∫̃τ` per release vertex when both are finite.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difference: Option<Vec<String>>,
    /// Release vertex where the classes disagree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<(u32, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommensurabilityReport {
    pub entries: Vec<ClassEntry>,
    /// Indices into `entries`.
    pub mismatches: Vec<usize>,
    /// The difference on a finite base is trivially continuous.
    pub smooth_difference: bool,
}

impl CommensurabilityReport {
    pub fn commensurable(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares released finiteness classes of `ω` and `τ` on every unbounded
/// superlevel component at every cut below the horizon.
pub fn check_commensurable<S: Scalar>(
    bundle: &DiscreteBundle,
    omega: &FiberVolume<S>,
    tau: &FiberVolume<S>,
) -> CommensurabilityReport {
    let mut entries = Vec::new();
    let mut cut = Cut(-1);
    while cut <= top_cut(bundle) {
        let above = bundle.level_band(Some(cut), None);
        for comp in bundle.components(&above) {
            if !bundle.reaches_horizon(&comp) {
                continue;
            }
            let region = bundle.region_from(comp.iter().copied());
            let rel = crate::release::release(bundle, &region).expect("level components are gluing invariant");
            let wo = released_integral(bundle, omega, &region, &rel);
            let wt = released_integral(bundle, tau, &region, &rel);
            let mut status = ClassStatus::BothFinite;
            let mut witness = None;
            for (r, (a, b)) in wo.iter().zip(&wt).enumerate() {
                match (a.is_infinite(), b.is_infinite()) {
                    (true, true) => status = ClassStatus::BothInfinite,
                    (false, false) => {}
                    _ => {
                        status = ClassStatus::Mismatch;
                        witness = Some((bundle.base.vertices[rel.vertices[r].base], r));
                        break;
                    }
                }
            }
            let difference = (status == ClassStatus::BothFinite).then(|| {
                wo.iter()
                    .zip(&wt)
                    .map(|(a, b)| (a.as_finite().unwrap().clone() - b.as_finite().unwrap().clone()).to_wire())
                    .collect()
            });
            entries.push(ClassEntry { cut: cut.to_string(), component: comp[0], status, difference, witness });
        }
        cut = cut.next();
    }
    let mismatches = entries.iter().enumerate().filter(|(_, e)| e.status == ClassStatus::Mismatch).map(|(i, _)| i).collect();
    CommensurabilityReport { entries, mismatches, smooth_difference: true }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<Check>,
    pub commensurability: CommensurabilityReport,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail.as_deref().unwrap_or("failed")))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn check(name: &str, failure: Option<String>) -> Check {
    Check { name: name.to_string(), passed: failure.is_none(), detail: failure }
}

/// Everything the filtration needs before it may touch the forms.
pub fn check_hypotheses<S: Scalar>(
    bundle: &DiscreteBundle,
    omega: &FiberVolume<S>,
    tau: &FiberVolume<S>,
) -> HypothesisReport {
    let mut checks = Vec::new();
    let structure = validate_bundle(bundle);
    checks.push(check(
        "bundle_valid",
        (!structure.passed()).then(|| structure.failures().map(|c| c.name.clone()).collect::<Vec<_>>().join(", ")),
    ));
    let form_problem = |name: &str, f: &FiberVolume<S>| f.check(bundle).err().map(|e: VolumeError| format!("{name}: {e}"));
    checks.push(check("omega_valid", form_problem("omega", omega)));
    checks.push(check("tau_valid", form_problem("tau", tau)));
    if checks.iter().any(|c| !c.passed) {
        return HypothesisReport {
            checks,
            commensurability: CommensurabilityReport { entries: vec![], mismatches: vec![], smooth_difference: true },
        };
    }
    checks.push(check(
        "total_connected",
        (bundle.components(&bundle.full_region()).len() != 1).then(|| "total space is disconnected".to_string()),
    ));
    let fo = fiber_integral(bundle, omega);
    let ft = fiber_integral(bundle, tau);
    let bad = (0..bundle.base.len()).find(|&b| fo[b] != ft[b]).map(|b| {
        format!("base vertex {}: omega {} vs tau {}", bundle.base.vertices[b], fo[b], ft[b])
    });
    debug_assert_eq!(bad.is_none(), equal_fiber_integral(bundle, omega, tau));
    checks.push(check("equal_fiber_integral", bad));
    let whole = Subbundle::whole(bundle);
    let ro = released_integral(bundle, omega, &whole.cells, &whole.release);
    let rt = released_integral(bundle, tau, &whole.cells, &whole.release);
    let bad = (0..whole.release.len()).find(|&r| ro[r] != rt[r]).map(|r| {
        let rv = &whole.release.vertices[r];
        format!(
            "base vertex {}, fiber component of vertex {}: omega {} vs tau {}",
            bundle.base.vertices[rv.base], bundle.fiber.vertices[rv.fiber_vertices[0]].id, ro[r], rt[r]
        )
    });
    checks.push(check("equal_released_integral", bad));
    let commensurability = check_commensurable(bundle, omega, tau);
    let detail = commensurability.mismatches.first().map(|&i| {
        let e = &commensurability.entries[i];
        let (b, _) = e.witness.unwrap();
        format!("cut {}: component of cell {} over base vertex {b}", e.cut, e.component)
    });
    checks.push(check("commensurable", detail));
    HypothesisReport { checks, commensurability }
}

/// A base function on a tree node's release base, in wire form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeValues {
    pub node: usize,
    pub depth: usize,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeCut {
    pub node: usize,
    pub cut: String,
}

/// Everything chosen in one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub alpha_odd: String,
    pub alpha_even: String,
    /// Thresholds of the depth-`2n−2` nodes.
    pub thresholds: Vec<NodeCut>,
    pub delta: Vec<NodeValues>,
    pub u: Vec<NodeValues>,
    pub v: Vec<NodeValues>,
    pub beta: Vec<NodeCut>,
    /// Cells where `ω` or `τ` changed this round.
    pub change_support: Vec<CellId>,
}

#[derive(Clone, Debug)]
pub struct FiltrationRun<S> {
    pub alphas: Vec<Cut>,
    pub rounds: Vec<RoundRecord>,
    /// `omegas[n] = ω_n`.
    pub omegas: Vec<FiberVolume<S>>,
    pub taus: Vec<FiberVolume<S>>,
}

impl<S: Scalar> FiltrationRun<S> {
    pub fn start(omega: FiberVolume<S>, tau: FiberVolume<S>) -> Self {
        FiltrationRun { alphas: Vec::new(), rounds: Vec::new(), omegas: vec![omega], taus: vec![tau] }
    }

    pub fn completed(&self) -> usize {
        self.rounds.len()
    }

    pub fn omega(&self) -> &FiberVolume<S> {
        self.omegas.last().unwrap()
    }

    pub fn tau(&self) -> &FiberVolume<S> {
        self.taus.last().unwrap()
    }

    pub fn tree(&self, bundle: &DiscreteBundle) -> Result<SlicingTree, SliceError> {
        build_tree(bundle, &self.alphas)
    }
}

fn wire<S: Scalar>(v: &[S]) -> Vec<String> {
    v.iter().map(Scalar::to_wire).collect()
}

fn finite_part<S: Scalar>(v: Vec<ExtReal<S>>) -> Option<Vec<S>> {
    v.into_iter().map(ExtReal::into_finite).collect()
}

fn add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| x.clone() + y.clone()).collect()
}

fn sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| x.clone() - y.clone()).collect()
}

struct Group {
    a: usize,
    cs: Vec<usize>,
    shta_a: Region,
}

/// Executes round `n = run.completed() + 1`.
pub fn run_round<S: Scalar>(bundle: &DiscreteBundle, run: &mut FiltrationRun<S>) -> Result<(), FiltrationError> {
    let n = run.completed() + 1;
    let done = n - 1;
    let slice_err = |error: SliceError| FiltrationError::Slice { round: n, error, completed: done };
    let rel_err = |error: ReleaseError| FiltrationError::Release { round: n, error };
    let audit = |detail: String| FiltrationError::Audit { round: n, detail };
    let top = top_cut(bundle);
    let omega = run.omega().clone();
    let tau = run.tau().clone();
    let int = |f: &FiberVolume<S>, region: &Region, rel: &ReleaseBase| released_integral(bundle, f, region, rel);

    // α_{2n−1}: above every threshold of the current deepest level
    let prev = build_tree(bundle, &run.alphas).map_err(slice_err)?;
    let mut thresholds = Vec::new();
    let mut lo = run.alphas.last().copied().unwrap_or(Cut(i64::MIN / 4));
    for &c in prev.level(2 * n - 2) {
        let theta = saturating_threshold(bundle, &prev.node(c).sub).map_err(slice_err)?;
        thresholds.push(NodeCut { node: c, cut: theta.to_string() });
        lo = lo.max(theta);
    }
    let alpha_odd = lo.next();
    if alpha_odd > top {
        return Err(slice_err(SliceError::HorizonExceeded { what: format!("cut α{}", 2 * n - 1), horizon: top }));
    }
    let mut alphas = run.alphas.clone();
    alphas.push(alpha_odd);
    let tree = build_tree(bundle, &alphas).map_err(slice_err)?;

    let groups: Vec<Group> = if n == 1 {
        vec![Group { a: 0, cs: vec![0], shta_a: tree.tse(bundle, 0).map_err(slice_err)? }]
    } else {
        tree.level(2 * n - 3)
            .iter()
            .map(|&a| Ok(Group { a, cs: tree.tsuc(a).to_vec(), shta_a: tree.shta(bundle, a).map_err(slice_err)? }))
            .collect::<Result<_, FiltrationError>>()?
    };

    let node_rel = |id: usize| &tree.node(id).sub.release;
    let mut delta: Vec<Option<Vec<S>>> = vec![None; tree.nodes.len()];
    let mut infinite = vec![false; tree.nodes.len()];

    for g in &groups {
        let rel_a = node_rel(g.a);
        let es: Vec<usize> = g.cs.iter().flat_map(|&c| tree.tsuc(c).iter().copied()).collect();
        let kappa: Vec<CoveringMap> = es
            .iter()
            .map(|&e| CoveringMap::inclusion(node_rel(e), rel_a, bundle))
            .collect::<Result<_, _>>()
            .map_err(rel_err)?;
        let d = {
            let t = finite_part(int(&tau, &g.shta_a, rel_a)).ok_or_else(|| audit("infinite Shta slice".into()))?;
            let o = finite_part(int(&omega, &g.shta_a, rel_a)).unwrap();
            sub(&t, &o)
        };
        let mut finite_sum = vec![S::zero(); rel_a.len()];
        let mut inf_sheets = vec![S::zero(); rel_a.len()];
        for (i, &e) in es.iter().enumerate() {
            let cells = &tree.node(e).sub.cells;
            let wo = int(&omega, cells, node_rel(e));
            let wt = int(&tau, cells, node_rel(e));
            match (finite_part(wo.clone()), finite_part(wt.clone())) {
                (Some(o), Some(t)) => {
                    let de = sub(&o, &t);
                    finite_sum = add(&finite_sum, &pushforward(&kappa[i], &de));
                    delta[e] = Some(de);
                }
                _ if wo.iter().all(ExtReal::is_infinite) && wt.iter().all(ExtReal::is_infinite) => {
                    infinite[e] = true;
                    for (p, s) in inf_sheets.iter_mut().enumerate() {
                        *s = s.clone() + S::from_usize(kappa[i].sheets_at(p)).unwrap();
                    }
                }
                _ => return Err(FiltrationError::Indeterminate { round: n, node: e }),
            }
        }
        let rest = sub(&d, &finite_sum);
        for (i, &e) in es.iter().enumerate() {
            if infinite[e] {
                let share: Vec<S> = rest.iter().zip(&inf_sheets).map(|(r, k)| r.clone() / k.clone()).collect();
                delta[e] = Some(pullback(&kappa[i], &share));
            }
        }
        let mut total = vec![S::zero(); rel_a.len()];
        for (i, &e) in es.iter().enumerate() {
            total = add(&total, &pushforward(&kappa[i], delta[e].as_ref().unwrap()));
        }
        if total != d {
            return Err(audit(format!("δ pushforwards do not sum to the slice difference on node {}", g.a)));
        }
    }

    // u_C and v_E
    let mut u_rec = Vec::new();
    let mut v_rec = Vec::new();
    let mut u_of: Vec<Option<Vec<S>>> = vec![None; tree.nodes.len()];
    let mut v_of: Vec<Option<Vec<S>>> = vec![None; tree.nodes.len()];
    let mut sum_delta_of: Vec<Option<Vec<S>>> = vec![None; tree.nodes.len()];
    let mut tse_c: Vec<(usize, Region)> = Vec::new();
    for g in &groups {
        for &c in &g.cs {
            let rel_c = node_rel(c);
            let tse = tree.tse(bundle, c).map_err(slice_err)?;
            let to = finite_part(int(&omega, &tse, rel_c)).unwrap();
            let tt = finite_part(int(&tau, &tse, rel_c)).unwrap();
            let es = tree.tsuc(c);
            let kappa: Vec<CoveringMap> = es
                .iter()
                .map(|&e| CoveringMap::inclusion(node_rel(e), rel_c, bundle))
                .collect::<Result<_, _>>()
                .map_err(rel_err)?;
            let mut sum_delta = vec![S::zero(); rel_c.len()];
            for (i, &e) in es.iter().enumerate() {
                sum_delta = add(&sum_delta, &pushforward(&kappa[i], delta[e].as_ref().unwrap()));
            }
            let whole_o = int(&omega, &tree.node(c).sub.cells, rel_c);
            let whole_t = int(&tau, &tree.node(c).sub.cells, rel_c);
            let mut u = Vec::with_capacity(rel_c.len());
            for p in 0..rel_c.len() {
                let lower = S::max_of(-to[p].clone(), sum_delta[p].clone() - tt[p].clone());
                let upper = whole_o[p].sub_finite(&to[p]);
                let value = match &upper {
                    ExtReal::Finite(up) => {
                        // the gap above the τ-side bound is ∫̃_C τ
                        let gap = up.clone() - (sum_delta[p].clone() - tt[p].clone());
                        if ExtReal::Finite(gap.clone()) != whole_t[p] || !gap.is_positive() {
                            return Err(audit(format!("u bound gap on node {c} is not the released τ volume")));
                        }
                        (lower.clone() + up.clone()) * S::half()
                    }
                    ExtReal::Infinite => lower.clone() + S::one(),
                };
                if !(value > lower && upper.exceeds(&value)) {
                    return Err(audit(format!("u on node {c} leaves its interval")));
                }
                u.push(value);
            }
            let cover = CoveringMap::disjoint_union(&kappa).map_err(rel_err)?;
            let a: Vec<ExtReal<S>> =
                es.iter().flat_map(|&e| int(&omega, &tree.node(e).sub.cells, node_rel(e))).collect();
            let v = approximate_split(&cover, &a, &u).map_err(rel_err)?;
            let mut offset = 0;
            for &e in es {
                let len = node_rel(e).len();
                let ve = v[offset..offset + len].to_vec();
                offset += len;
                v_rec.push(NodeValues { node: e, depth: tree.node(e).depth, values: wire(&ve) });
                v_of[e] = Some(ve);
            }
            u_rec.push(NodeValues { node: c, depth: tree.node(c).depth, values: wire(&u) });
            u_of[c] = Some(u);
            sum_delta_of[c] = Some(sum_delta);
            tse_c.push((c, tse));
        }
    }

    // β_E
    let es: Vec<usize> = tree.level(2 * n - 1).to_vec();
    let mut beta_rec = Vec::new();
    let mut alpha_even = alpha_odd.next();
    for &e in &es {
        let sub_e = &tree.node(e).sub;
        let mut beta = alpha_odd.next();
        if infinite[e] {
            beta = beta.max(saturating_threshold(bundle, sub_e).map_err(slice_err)?.next());
        }
        let de = delta[e].as_ref().unwrap();
        let ve = v_of[e].as_ref().unwrap();
        loop {
            if beta > top {
                return Err(slice_err(SliceError::HorizonExceeded {
                    what: format!("cut β for node {e}"),
                    horizon: top,
                }));
            }
            let slice = saturated_slice(bundle, &sub_e.cells, beta);
            let nonempty = (0..sub_e.release.len()).all(|r| !sub_e.release.cells_in(bundle, r, &slice).is_empty());
            if nonempty {
                let o = finite_part(int(&omega, &slice, &sub_e.release)).unwrap();
                let t = finite_part(int(&tau, &slice, &sub_e.release)).unwrap();
                let ok = (0..o.len()).all(|p| {
                    let m = S::min_of(o[p].clone(), t[p].clone() + de[p].clone());
                    (m - ve[p].clone()).is_positive()
                });
                if ok {
                    break;
                }
            }
            beta = beta.next();
        }
        beta_rec.push(NodeCut { node: e, cut: beta.to_string() });
        alpha_even = alpha_even.max(beta);
    }
    alphas.push(alpha_even);
    let tree = build_tree(bundle, &alphas).map_err(slice_err)?;

    // realize the targets
    let mut new_omega = omega.clone();
    let mut new_tau = tau.clone();
    let transfer = |f: &FiberVolume<S>, k: &Region, rel: &ReleaseBase, w: &[S]| {
        transfer_volume(bundle, f, k, rel, w).map_err(|error| FiltrationError::Transfer { round: n, error })
    };
    for (c, tse) in &tse_c {
        let rel_c = &tree.node(*c).sub.release;
        let u = u_of[*c].as_ref().unwrap();
        let to = finite_part(int(&omega, tse, rel_c)).unwrap();
        let tt = finite_part(int(&tau, tse, rel_c)).unwrap();
        let wo = add(&to, u);
        let wt = sub(&add(&tt, u), sum_delta_of[*c].as_ref().unwrap());
        new_omega = transfer(&new_omega, tse, rel_c, &wo)?;
        new_tau = transfer(&new_tau, tse, rel_c, &wt)?;
    }
    for &e in &es {
        let rel_e = &tree.node(e).sub.release;
        let tse = tree.tse(bundle, e).map_err(slice_err)?;
        let ve = v_of[e].as_ref().unwrap();
        let to = finite_part(int(&omega, &tse, rel_e)).unwrap();
        let tt = finite_part(int(&tau, &tse, rel_e)).unwrap();
        let wo = sub(&to, ve);
        let wt = add(&sub(&tt, ve), delta[e].as_ref().unwrap());
        new_omega = transfer(&new_omega, &tse, rel_e, &wo)?;
        new_tau = transfer(&new_tau, &tse, rel_e, &wt)?;
    }

    let change_support = (0..bundle.cell_count())
        .filter(|&c| new_omega.mass[c] != omega.mass[c] || new_tau.mass[c] != tau.mass[c])
        .collect();
    let delta_rec = es
        .iter()
        .map(|&e| NodeValues { node: e, depth: 2 * n - 1, values: wire(delta[e].as_ref().unwrap()) })
        .collect();
    run.rounds.push(RoundRecord {
        round: n,
        alpha_odd: alpha_odd.to_string(),
        alpha_even: alpha_even.to_string(),
        thresholds,
        delta: delta_rec,
        u: u_rec,
        v: v_rec,
        beta: beta_rec,
        change_support,
    });
    run.alphas = alphas;
    run.omegas.push(new_omega);
    run.taus.push(new_tau);
    Ok(())
}

/// Checks the hypotheses, then runs `rounds` rounds.
pub fn run_filtration<S: Scalar>(
    bundle: &DiscreteBundle,
    omega: &FiberVolume<S>,
    tau: &FiberVolume<S>,
    rounds: usize,
) -> Result<FiltrationRun<S>, (FiltrationError, Option<FiltrationRun<S>>)> {
    let hyp = check_hypotheses(bundle, omega, tau);
    if !hyp.passed() {
        return Err((FiltrationError::Hypothesis(hyp.summary()), None));
    }
    let mut run = FiltrationRun::start(omega.clone(), tau.clone());
    for _ in 0..rounds {
        if let Err(e) = run_round(bundle, &mut run) {
            return Err((e, Some(run)));
        }
    }
    Ok(run)
}

/// A piece of the final cover with matching released integrals.
#[derive(Clone, Debug)]
pub struct Piece {
    pub label: String,
    /// Tree node whose release base the piece is measured on.
    pub node: usize,
    pub cells: Region,
}

/// `Tse M`, `Shta A` for odd depths up to `2N − 3`, and the depth-`2N − 1`
/// nodes; together they partition the bundle.
pub fn pieces<S: Scalar>(bundle: &DiscreteBundle, run: &FiltrationRun<S>) -> Result<Vec<Piece>, SliceError> {
    let tree = run.tree(bundle)?;
    let n = run.completed();
    if n == 0 {
        return Ok(vec![Piece { label: "M".into(), node: 0, cells: bundle.full_region() }]);
    }
    let mut out = vec![Piece { label: "Tse M".into(), node: 0, cells: tree.tse(bundle, 0)? }];
    for depth in (1..2 * n - 1).step_by(2) {
        for &a in tree.level(depth) {
            out.push(Piece { label: format!("Shta node {a}"), node: a, cells: tree.shta(bundle, a)? });
        }
    }
    for &e in tree.level(2 * n - 1) {
        out.push(Piece { label: format!("node {e}"), node: e, cells: tree.node(e).sub.cells.clone() });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantFailure {
    pub round: usize,
    pub relation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub checks: usize,
    pub failures: Vec<InvariantFailure>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Re-derives every relation the filtration promises from the recorded
/// cuts and forms.
pub fn verify_invariants<S: Scalar>(bundle: &DiscreteBundle, run: &FiltrationRun<S>) -> InvariantReport {
    let mut report = InvariantReport { checks: 0, failures: Vec::new() };
    let tree = match run.tree(bundle) {
        Ok(t) => t,
        Err(e) => {
            report.failures.push(InvariantFailure { round: 0, relation: "tree".into(), node: None, detail: e.to_string() });
            return report;
        }
    };
    let int = |f: &FiberVolume<S>, region: &Region, node: usize| {
        released_integral(bundle, f, region, &tree.node(node).sub.release)
    };
    let fail = |report: &mut InvariantReport, round, relation: &str, node, detail: String| {
        report.failures.push(InvariantFailure { round, relation: relation.into(), node, detail });
    };
    let fo0 = fiber_integral(bundle, &run.omegas[0]);
    let ft0 = fiber_integral(bundle, &run.taus[0]);
    for n in 1..=run.completed() {
        let (o0, o1) = (&run.omegas[n - 1], &run.omegas[n]);
        let (t0, t1) = (&run.taus[n - 1], &run.taus[n]);
        let slices = |depth: usize, f: fn(&SlicingTree, &DiscreteBundle, usize) -> Result<Region, SliceError>| {
            tree.level(depth).iter().map(|&id| (id, f(&tree, bundle, id).unwrap())).collect::<Vec<_>>()
        };
        // support
        report.checks += 1;
        let shta_c = slices(2 * n - 2, SlicingTree::shta);
        let mut allowed = bundle.empty_region();
        for (_, r) in &shta_c {
            allowed.union_with(r);
        }
        if let Some(c) = (0..bundle.cell_count())
            .find(|&c| (o1.mass[c] != o0.mass[c] || t1.mass[c] != t0.mass[c]) && !allowed.contains(c))
        {
            let (b, v) = bundle.split(c);
            fail(
                &mut report,
                n,
                "support",
                None,
                format!("cell {c} (base {}, fiber {}) changed outside the Shta slices", bundle.base.vertices[b], bundle.fiber.vertices[v].id),
            );
        }
        for f in [o1, t1] {
            report.checks += 1;
            if let Err(e) = f.check(bundle) {
                fail(&mut report, n, "positivity", None, e.to_string());
            }
        }
        // agreement on Tse M / Shta A
        let agree: Vec<(usize, Region)> =
            if n == 1 { vec![(0, tree.tse(bundle, 0).unwrap())] } else { slices(2 * n - 3, SlicingTree::shta) };
        for (a, r) in &agree {
            report.checks += 1;
            if int(o1, r, *a) != int(t1, r, *a) {
                fail(&mut report, n, "slice agreement", Some(*a), "released ω and τ differ".into());
            }
        }
        // Shta C unchanged
        for (c, r) in &shta_c {
            report.checks += 1;
            if int(o1, r, *c) != int(o0, r, *c) || int(t1, r, *c) != int(t0, r, *c) {
                fail(&mut report, n, "slice conservation", Some(*c), "released integral moved".into());
            }
        }
        // agreement on the new odd level
        for &e in tree.level(2 * n - 1) {
            report.checks += 1;
            let cells = &tree.node(e).sub.cells;
            if int(o1, cells, e) != int(t1, cells, e) {
                fail(&mut report, n, "node agreement", Some(e), "released ω and τ differ".into());
            }
        }
        report.checks += 1;
        if fiber_integral(bundle, o1) != fo0 || fiber_integral(bundle, t1) != ft0 {
            fail(&mut report, n, "conservation", None, "fiber integral changed".into());
        }
    }
    if let Ok(ps) = pieces(bundle, run) {
        let mut seen = bundle.empty_region();
        for p in &ps {
            report.checks += 1;
            if !seen.is_disjoint(&p.cells) {
                fail(&mut report, run.completed(), "pieces", Some(p.node), format!("{} overlaps another piece", p.label));
            }
            seen.union_with(&p.cells);
            if int(run.omega(), &p.cells, p.node) != int(run.tau(), &p.cells, p.node) {
                fail(&mut report, run.completed(), "pieces", Some(p.node), format!("{} has unequal integrals", p.label));
            }
        }
        if seen != bundle.full_region() {
            fail(&mut report, run.completed(), "pieces", None, "pieces do not cover the bundle".into());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scalar::{rat, Rational};
    use crate::slicing::Subbundle;

    fn triv_pair(h: i64) -> (DiscreteBundle, FiberVolume<Rational>, FiberVolume<Rational>) {
        let b = fixtures::triv(h);
        let mut omega = FiberVolume::uniform(&b, rat(1, 1), ExtReal::Finite(rat(1, 4)));
        let mut tau = omega.clone();
        omega.mass[0] = rat(3, 1);
        tau.mass[2] = rat(3, 1);
        (b, omega, tau)
    }

    #[test]
    fn transfer_hits_target() {
        let (b, omega, _) = triv_pair(6);
        let whole = Subbundle::whole(&b);
        let k = saturated_slice(&b, &whole.cells, Cut(2));
        let current = released_integral(&b, &omega, &k, &whole.release);
        let w = vec![current[0].as_finite().unwrap().clone() * rat(2, 1)];
        let out = transfer_volume(&b, &omega, &k, &whole.release, &w).unwrap();
        assert_eq!(released_integral(&b, &out, &k, &whole.release), vec![ExtReal::Finite(w[0].clone())]);
        assert!(out.check(&b).is_ok());
        for c in 3..b.cell_count() {
            assert_eq!(out.mass[c], omega.mass[c]);
        }
        let same = transfer_volume(&b, &omega, &k, &whole.release, &[current[0].as_finite().unwrap().clone()]).unwrap();
        assert_eq!(released_integral(&b, &same, &k, &whole.release), current);
    }

    #[test]
    fn transfer_rejects_bad_targets() {
        let (b, omega, _) = triv_pair(6);
        let whole = Subbundle::whole(&b);
        let k = saturated_slice(&b, &whole.cells, Cut(0));
        assert!(matches!(
            transfer_volume(&b, &omega, &k, &whole.release, &[rat(0, 1)]),
            Err(TransferError::NonPositiveTarget { .. })
        ));
        let out = transfer_volume(&b, &omega, &k, &whole.release, &[rat(7, 1)]).unwrap();
        assert_eq!(out.mass[0], rat(7, 1));
        let empty = b.empty_region();
        assert!(matches!(
            transfer_volume(&b, &omega, &empty, &whole.release, &[rat(1, 1)]),
            Err(TransferError::NoInterior(0))
        ));
    }

    #[test]
    fn identical_forms_are_commensurable() {
        let cyl = fixtures::cyl(4);
        let f = FiberVolume::uniform(&cyl, rat(1, 1), ExtReal::Infinite);
        assert!(check_commensurable(&cyl, &f, &f).commensurable());
        let mut g = f.clone();
        for b in 0..3 {
            *g.tail_mut(&cyl, b, 2) = ExtReal::Finite(rat(1, 1));
        }
        let report = check_commensurable(&cyl, &f, &g);
        assert!(!report.commensurable());
    }

    #[test]
    fn triv_round_one_matches_tse() {
        let (b, omega, tau) = triv_pair(8);
        let run = run_filtration(&b, &omega, &tau, 1).unwrap();
        let tree = run.tree(&b).unwrap();
        let tse = tree.tse(&b, 0).unwrap();
        let sum = |f: &FiberVolume<Rational>| tse.ones().fold(rat(0, 1), |s, c| s + f.mass[c].clone());
        assert_eq!(sum(run.omega()), sum(run.tau()));
        assert!(verify_invariants(&b, &run).passed(), "{:?}", verify_invariants(&b, &run));
    }

    #[test]
    fn zero_rounds_is_identity() {
        let (b, omega, tau) = triv_pair(8);
        let run = run_filtration(&b, &omega, &tau, 0).unwrap();
        assert_eq!(run.omega(), &omega);
        assert!(run.rounds.is_empty());
    }

    #[test]
    fn equal_forms_give_zero_delta() {
        let cyl = fixtures::cyl(10);
        let f = FiberVolume::uniform(&cyl, rat(1, 1), ExtReal::Finite(rat(1, 8)));
        let run = run_filtration(&cyl, &f, &f, 2).unwrap();
        for r in &run.rounds {
            for d in &r.delta {
                assert!(d.values.iter().all(|v| v == "0/1"), "{d:?}");
            }
        }
        assert!(verify_invariants(&cyl, &run).passed());
    }

    #[test]
    fn corrupted_mass_is_localized() {
        let (b, omega, tau) = triv_pair(10);
        let mut run = run_filtration(&b, &omega, &tau, 2).unwrap();
        assert!(verify_invariants(&b, &run).passed());
        let top_finite = (b.fiber.horizon - 1) as usize;
        run.omegas[1].mass[top_finite] = run.omegas[1].mass[top_finite].clone() + rat(1, 1);
        let report = verify_invariants(&b, &run);
        let f = report.failures.iter().find(|f| f.relation == "support").expect("support failure");
        assert_eq!(f.round, 1);
    }

    #[test]
    fn unequal_totals_are_rejected() {
        let (b, omega, mut tau) = triv_pair(6);
        tau.mass[1] = rat(5, 1);
        let (err, partial) = run_filtration(&b, &omega, &tau, 1).unwrap_err();
        assert!(matches!(err, FiltrationError::Hypothesis(_)));
        assert!(partial.is_none());
    }
}

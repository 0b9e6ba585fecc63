//! The command surface. Each command returns an [`Outcome`]; the binary only
//! routes it to files and streams.

use std::path::Path;

use serde::Serialize;

use super::format::{parse, BundleFile};
use super::report::{fmt17, render, F17};
use crate::bundle::{validate_bundle, ValidationReport};
use crate::Volume;
use crate::filtration::{check_hypotheses, run_filtration, verify_invariants, FiltrationError, FiltrationRun, HypothesisReport, InvariantReport, RoundRecord};
use crate::scalar::{Cut, Rational};
use crate::slicing::{build_tree, ends_of_fiber, ends_of_total, end_surjection, end_volume_class, saturating_threshold, SliceError, SlicingTree};
use crate::transport::collar::{Collar, HalfCollar};
use crate::transport::pipeline::{AuditRow, FiberAudit, FiberSolution};
use crate::transport::{solve_transport, CollarSettings, TransportError};
use crate::DiscreteBundle;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_HORIZON: i32 = 3;
/// A computation ran but an audit or numerical step failed.
pub const EXIT_FAILED: i32 = 4;

/// Largest pullback residual a solve may report and still pass.
pub const RESIDUAL_TOLERANCE: f64 = 1e-7;

pub struct Outcome {
    pub code: i32,
    pub report: String,
    pub csv: Option<String>,
    /// What went wrong, for stderr.
    pub message: Option<String>,
}

impl Outcome {
    fn new<T: Serialize>(command: &str, code: i32, message: Option<String>, body: T) -> Self {
        Outcome { code, report: render(command, code, message.clone(), body), csv: None, message }
    }
}

#[derive(Serialize)]
struct Empty {}

fn load(command: &str, path: &Path) -> Result<BundleFile, Outcome> {
    let fail = |msg: String| Outcome::new(command, EXIT_PARSE, Some(msg), Empty {});
    let text = std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

/// Named forms, or `omega`/`tau`, or the first two in the file.
fn pick_forms<'a>(
    command: &str,
    file: &'a BundleFile,
    omega: Option<&str>,
    tau: Option<&str>,
) -> Result<(&'a str, &'a Volume, &'a str, &'a Volume), Outcome> {
    let fail = |msg: String| Outcome::new(command, EXIT_PARSE, Some(msg), Empty {});
    let pick = |want: Option<&str>, fallback: &str, index: usize| -> Result<(&'a str, &'a Volume), Outcome> {
        let found = match want {
            Some(n) => file.forms.iter().find(|(m, _)| m == n),
            None => file.forms.iter().find(|(m, _)| m == fallback).or_else(|| file.forms.get(index)),
        };
        found.map(|(n, f)| (n.as_str(), f)).ok_or_else(|| fail(format!("form `{}` not found", want.unwrap_or(fallback))))
    };
    let (on, o) = pick(omega, "omega", 0)?;
    let (tn, t) = pick(tau, "tau", 1)?;
    Ok((on, o, tn, t))
}

#[derive(Serialize)]
struct FormCheck {
    name: String,
    valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ValidateBody {
    cells: usize,
    base_vertices: usize,
    fiber_vertices: usize,
    structure: ValidationReport,
    forms: Vec<FormCheck>,
}

pub fn cmd_validate(path: &Path) -> Outcome {
    let file = match load("validate", path) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let b = &file.bundle;
    let structure = validate_bundle(b);
    let forms: Vec<FormCheck> = file
        .forms
        .iter()
        .map(|(name, f)| {
            let error = f.check(b).err().map(|e| e.to_string());
            FormCheck { name: name.clone(), valid: error.is_none(), error }
        })
        .collect();
    let failure = structure
        .failures()
        .map(|c| format!("{}: {}", c.name, c.detail.as_deref().unwrap_or("failed")))
        .chain(forms.iter().filter_map(|f| f.error.as_ref().map(|e| format!("form {}: {e}", f.name))))
        .collect::<Vec<_>>();
    let code = if failure.is_empty() { EXIT_PASS } else { EXIT_HYPOTHESIS };
    let message = (!failure.is_empty()).then(|| failure.join("; "));
    let body = ValidateBody { cells: b.cell_count(), base_vertices: b.base.len(), fiber_vertices: b.fiber.len(), structure, forms };
    Outcome::new("validate", code, message, body)
}

#[derive(Serialize)]
pub struct NodeView {
    pub id: usize,
    pub depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub cells: usize,
    pub lowest_level: i64,
    pub release_vertices: usize,
    /// Saturating threshold, when it lies below the horizon.
    pub threshold: Option<String>,
}

#[derive(Serialize)]
pub struct TreeView {
    pub alphas: Vec<String>,
    pub nodes: Vec<NodeView>,
    pub levels: Vec<Vec<usize>>,
}

fn tree_view(bundle: &DiscreteBundle, tree: &SlicingTree) -> TreeView {
    let nodes = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(id, n)| NodeView {
            id,
            depth: n.depth,
            parent: n.parent,
            children: n.children.clone(),
            cells: n.sub.cells.count_ones(..),
            lowest_level: n.sub.cells.ones().map(|c| bundle.level(c)).min().unwrap_or(0),
            release_vertices: n.sub.release.len(),
            threshold: saturating_threshold(bundle, &n.sub).ok().map(|c| c.to_string()),
        })
        .collect();
    TreeView { alphas: tree.alphas.iter().map(Cut::to_string).collect(), nodes, levels: tree.levels.clone() }
}

fn slice_code(e: &SliceError) -> i32 {
    match e {
        SliceError::HorizonExceeded { .. } => EXIT_HORIZON,
        SliceError::NotIncreasing(_) => EXIT_PARSE,
        _ => EXIT_FAILED,
    }
}

pub fn parse_alphas(s: &str) -> Result<Vec<Cut>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(|w| Cut::parse(w).ok_or_else(|| format!("`{w}` is not a half-integer cut")))
        .collect()
}

pub fn cmd_tree(path: &Path, alphas: &[Cut]) -> Outcome {
    let file = match load("tree", path) {
        Ok(f) => f,
        Err(o) => return o,
    };
    match build_tree(&file.bundle, alphas) {
        Ok(tree) => Outcome::new("tree", EXIT_PASS, None, tree_view(&file.bundle, &tree)),
        Err(e) => Outcome::new("tree", slice_code(&e), Some(e.to_string()), Empty {}),
    }
}

#[derive(Serialize)]
struct TotalEndView {
    cells: usize,
    /// `(base vertex id, tail name)` pairs glued into this end.
    members: Vec<(u32, String)>,
    /// Tail mass per form, `"inf"` or `"p/q"`.
    volume: Vec<(String, String)>,
}

#[derive(Serialize)]
struct EndsBody {
    fiber_ends: usize,
    total_ends: usize,
    fiber: Vec<String>,
    total: Vec<TotalEndView>,
    /// Index of the total end each fiber end (over `b0`) maps into.
    surjection: Vec<usize>,
}

pub fn cmd_ends(path: &Path) -> Outcome {
    let file = match load("ends", path) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let b = &file.bundle;
    let fiber = ends_of_fiber(b);
    let total = ends_of_total(b);
    let views = total
        .iter()
        .map(|e| TotalEndView {
            cells: e.cells.len(),
            members: e.members.iter().map(|&(bi, t)| (b.base.vertices[bi], b.fiber.tails[t].name.clone())).collect(),
            volume: file.forms.iter().map(|(n, f)| (n.clone(), end_volume_class(b, f, e).to_wire())).collect(),
        })
        .collect();
    let body = EndsBody {
        fiber_ends: fiber.len(),
        total_ends: total.len(),
        fiber: fiber.into_iter().map(|e| e.name).collect(),
        total: views,
        surjection: end_surjection(b),
    };
    Outcome::new("ends", EXIT_PASS, None, body)
}

/// Fixed choices the solver makes, recorded so a report can be replayed.
#[derive(Serialize)]
struct DesignFlags {
    u_selection: &'static str,
    beta_tie_break: &'static str,
    single_round_mode: &'static str,
    collar_components: &'static str,
    cell_density: &'static str,
    infinite_tail_density: &'static str,
    collar_parameter_search: &'static str,
}

const DESIGN: DesignFlags = DesignFlags {
    u_selection: "midpoint of the open interval; lower bound + 1 when unbounded",
    beta_tie_break: "smallest admissible half-integer",
    single_round_mode: "n = 1 uses A = M, Tse for Shta, tsuc for tssuc",
    collar_components: "components of V_N minus N",
    cell_density: "tent per cell with knots at shared per-boundary floors",
    infinite_tail_density: "constant at the boundary floor",
    collar_parameter_search: "bisection in log-odds of t; epsilon halved on extreme roots",
};

#[derive(Serialize)]
struct Input<'a> {
    omega: &'a str,
    tau: &'a str,
    rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<usize>,
}

#[derive(Serialize)]
struct FiltrationView {
    completed: usize,
    alphas: Vec<String>,
    rounds: Vec<RoundRecord>,
    invariants: InvariantReport,
}

#[derive(Serialize)]
struct RunBody<'a> {
    input: Input<'a>,
    hypotheses: HypothesisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    tree: Option<TreeView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filtration: Option<FiltrationView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transport: Option<TransportView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    family: Option<Vec<FamilyEdge>>,
    design_decisions: DesignFlags,
}

fn filtration_code(e: &FiltrationError) -> i32 {
    match e {
        FiltrationError::Hypothesis(_) => EXIT_HYPOTHESIS,
        e if e.is_horizon() => EXIT_HORIZON,
        _ => EXIT_FAILED,
    }
}

fn filtration_view(bundle: &DiscreteBundle, run: &FiltrationRun<Rational>) -> FiltrationView {
    FiltrationView {
        completed: run.completed(),
        alphas: run.alphas.iter().map(Cut::to_string).collect(),
        rounds: run.rounds.clone(),
        invariants: verify_invariants(bundle, run),
    }
}

/// Common front half of filtrate, solve and family: parse, gate, filtrate.
struct Prepared<'a> {
    body: RunBody<'a>,
    run: Option<FiltrationRun<Rational>>,
    failure: Option<(i32, String)>,
}

fn prepare<'a>(file: &'a BundleFile, names: (&'a str, &'a Volume, &'a str, &'a Volume), rounds: usize, grid: Option<usize>) -> Prepared<'a> {
    let b = &file.bundle;
    let (on, o, tn, t) = names;
    let hypotheses = check_hypotheses(b, o, t);
    let mut body = RunBody {
        input: Input { omega: on, tau: tn, rounds, grid },
        hypotheses,
        tree: None,
        filtration: None,
        transport: None,
        family: None,
        design_decisions: DESIGN,
    };
    if !body.hypotheses.passed() {
        let msg = format!("hypotheses fail: {}", body.hypotheses.summary());
        return Prepared { body, run: None, failure: Some((EXIT_HYPOTHESIS, msg)) };
    }
    let (run, failure) = match run_filtration(b, o, t, rounds) {
        Ok(run) => (run, None),
        Err((e, partial)) => {
            let code = filtration_code(&e);
            match partial {
                Some(run) => (run, Some((code, e.to_string()))),
                None => return Prepared { body, run: None, failure: Some((code, e.to_string())) },
            }
        }
    };
    if let Ok(tree) = run.tree(b) {
        body.tree = Some(tree_view(b, &tree));
    }
    let view = filtration_view(b, &run);
    let failure = failure.or_else(|| {
        (!view.invariants.passed()).then(|| {
            let f = &view.invariants.failures[0];
            (EXIT_FAILED, format!("invariant {} fails in round {}: {}", f.relation, f.round, f.detail))
        })
    });
    body.filtration = Some(view);
    Prepared { body, run: Some(run), failure }
}

pub struct RunOptions<'a> {
    pub rounds: usize,
    pub grid: usize,
    pub omega: Option<&'a str>,
    pub tau: Option<&'a str>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions { rounds: 3, grid: 1000, omega: None, tau: None }
    }
}

pub fn cmd_filtrate(path: &Path, opts: &RunOptions<'_>) -> Outcome {
    let file = match load("filtrate", path) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let names = match pick_forms("filtrate", &file, opts.omega, opts.tau) {
        Ok(n) => n,
        Err(o) => return o,
    };
    let p = prepare(&file, names, opts.rounds, None);
    let (code, msg) = p.failure.map_or((EXIT_PASS, None), |(c, m)| (c, Some(m)));
    Outcome::new("filtrate", code, msg, p.body)
}

#[derive(Serialize)]
struct HalfView {
    active: bool,
    t: F17,
    log_odds: F17,
    iterations: usize,
    theta: F17,
    theta_slopes: Vec<F17>,
}

impl From<&HalfCollar> for HalfView {
    fn from(h: &HalfCollar) -> Self {
        HalfView {
            active: h.active,
            t: F17(h.t),
            log_odds: F17(h.log_odds),
            iterations: h.iterations,
            theta: F17(h.theta),
            theta_slopes: h.theta_slopes.iter().copied().map(F17).collect(),
        }
    }
}

#[derive(Serialize)]
struct CollarView {
    cut: F17,
    eps: F17,
    delta: F17,
    attempts: usize,
    minus: HalfView,
    plus: HalfView,
}

impl From<&Collar> for CollarView {
    fn from(c: &Collar) -> Self {
        CollarView {
            cut: F17(c.cut),
            eps: F17(c.eps),
            delta: F17(c.delta),
            attempts: c.attempts,
            minus: (&c.minus).into(),
            plus: (&c.plus).into(),
        }
    }
}

#[derive(Serialize)]
struct StageView {
    label: String,
    intervals: Vec<[F17; 2]>,
}

#[derive(Serialize)]
struct FiberView {
    base_vertex: u32,
    fiber_component: usize,
    positions: usize,
    domain: [F17; 2],
    max_residual: F17,
    l1_error: F17,
    monotonicity_violations: usize,
    identity_violations: usize,
    identity_points: usize,
    cell_mass_error: F17,
    tau_n_error: F17,
    interpolation_error: F17,
    support: Vec<[F17; 2]>,
    stages: Vec<StageView>,
    collars: Vec<CollarView>,
}

fn fiber_view(f: &FiberSolution, a: &FiberAudit) -> FiberView {
    FiberView {
        base_vertex: a.base_vertex,
        fiber_component: a.fiber_component,
        positions: f.path.vertices.len(),
        domain: [F17(f.domain.0), F17(f.domain.1)],
        max_residual: F17(a.pullback.max_residual),
        l1_error: F17(a.pullback.l1_error),
        monotonicity_violations: a.pullback.monotonicity_violations,
        identity_violations: a.identity_violations,
        identity_points: a.identity_points,
        cell_mass_error: F17(a.cell_mass_error),
        tau_n_error: F17(a.tau_n_error),
        interpolation_error: F17(a.interpolation_error),
        support: a.support.iter().map(|&(x, y)| [F17(x), F17(y)]).collect(),
        stages: f
            .map
            .stages
            .iter()
            .map(|s| StageView { label: s.label.clone(), intervals: s.intervals().map(|(x, y)| [F17(x), F17(y)]).collect() })
            .collect(),
        collars: a.collars.iter().map(CollarView::from).collect(),
    }
}

#[derive(Serialize)]
struct TransportView {
    settings: SettingsView,
    residual_tolerance: F17,
    max_residual: F17,
    monotonicity_violations: usize,
    identity_violations: usize,
    passed: bool,
    fibers: Vec<FiberView>,
}

#[derive(Serialize)]
struct SettingsView {
    eps: F17,
    eps_halvings: usize,
    delta_halvings: usize,
    tol: F17,
    max_iter: usize,
}

#[derive(Serialize)]
struct FamilyEdge {
    base_edge: usize,
    from: u32,
    to: u32,
    fiber_component: usize,
    /// Largest gap between the two endpoint maps on the audit grid.
    max_map_difference: F17,
}

const CSV_HEADER: &str = "base_vertex,fiber_component,x,phi_x,omega,tau,residual\n";

fn csv_rows(rows: &[AuditRow], out: &mut String) {
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.base_vertex,
            r.fiber_component,
            fmt17(r.x),
            fmt17(r.phi_x),
            fmt17(r.omega),
            fmt17(r.tau),
            fmt17(r.residual)
        ));
    }
}

fn transport_code(e: &TransportError) -> i32 {
    match e {
        TransportError::UnsupportedFiberGeometry(_) => EXIT_HORIZON,
        _ => EXIT_FAILED,
    }
}

fn solve_inner(command: &str, path: &Path, opts: &RunOptions<'_>, family: bool) -> Outcome {
    let file = match load(command, path) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let names = match pick_forms(command, &file, opts.omega, opts.tau) {
        Ok(n) => n,
        Err(o) => return o,
    };
    let b = &file.bundle;
    let mut p = prepare(&file, names, opts.rounds, Some(opts.grid));
    if family && !b.monodromy.is_trivial() {
        // family mode is for product-like bundles only
        p.body.hypotheses.checks.push(crate::bundle::Check {
            name: "trivial_monodromy".into(),
            passed: false,
            detail: Some("family mode needs trivial monodromy".into()),
        });
        let msg = "family mode needs trivial monodromy".to_string();
        return Outcome::new(command, EXIT_HYPOTHESIS, Some(msg), p.body);
    }
    if let Some((code, msg)) = p.failure {
        return Outcome::new(command, code, Some(msg), p.body);
    }
    let run = p.run.as_ref().unwrap();
    let settings = CollarSettings::default();
    let mut solution = match solve_transport(b, run, &settings) {
        Ok(s) => s,
        Err(e) => return Outcome::new(command, transport_code(&e), Some(e.to_string()), p.body),
    };
    let mut csv = String::from(CSV_HEADER);
    let mut fibers = Vec::new();
    let (mut worst, mut mono, mut ident) = (0.0f64, 0usize, 0usize);
    for f in solution.fibers.iter_mut() {
        let (a, rows) = f.audit(opts.grid);
        csv_rows(&rows, &mut csv);
        worst = worst.max(a.pullback.max_residual);
        mono += a.pullback.monotonicity_violations;
        ident += a.identity_violations;
        fibers.push(fiber_view(f, &a));
    }
    let passed = worst < RESIDUAL_TOLERANCE && mono == 0 && ident == 0;
    if family {
        p.body.family = Some(family_edges(b, &solution.fibers, opts.grid));
    }
    p.body.transport = Some(TransportView {
        settings: SettingsView {
            eps: F17(settings.eps),
            eps_halvings: settings.eps_halvings,
            delta_halvings: settings.delta_halvings,
            tol: F17(settings.tol),
            max_iter: settings.max_iter,
        },
        residual_tolerance: F17(RESIDUAL_TOLERANCE),
        max_residual: F17(worst),
        monotonicity_violations: mono,
        identity_violations: ident,
        passed,
        fibers,
    });
    let (code, msg) = if passed {
        (EXIT_PASS, None)
    } else {
        (EXIT_FAILED, Some(format!("transport audit fails: residual {worst:e}, {mono} monotonicity and {ident} identity violations")))
    };
    let mut out = Outcome::new(command, code, msg, p.body);
    out.csv = Some(csv);
    out
}

fn family_edges(b: &DiscreteBundle, fibers: &[FiberSolution], grid: usize) -> Vec<FamilyEdge> {
    let mut out = Vec::new();
    for (e, &(x, y)) in b.base.edges.iter().enumerate() {
        let over = |base: usize| fibers.iter().filter(move |f| f.path.base == base);
        for fx in over(x) {
            let Some(fy) = over(y).find(|f| f.path.component == fx.path.component) else { continue };
            let lo = fx.domain.0.max(fy.domain.0);
            let hi = fx.domain.1.min(fy.domain.1);
            let diff = crate::transport::audit::grid_points(lo, hi, grid)
                .into_iter()
                .map(|t| (fx.map.eval(t).0 - fy.map.eval(t).0).abs())
                .fold(0.0, f64::max);
            out.push(FamilyEdge {
                base_edge: e,
                from: b.base.vertices[x],
                to: b.base.vertices[y],
                fiber_component: fx.path.component,
                max_map_difference: F17(diff),
            });
        }
    }
    out
}

pub fn cmd_solve(path: &Path, opts: &RunOptions<'_>) -> Outcome {
    solve_inner("solve", path, opts, false)
}

/// Solve for a bundle with trivial monodromy, reporting how the fiber maps
/// vary along base edges.
pub fn cmd_family(path: &Path, opts: &RunOptions<'_>) -> Outcome {
    solve_inner("family", path, opts, true)
}

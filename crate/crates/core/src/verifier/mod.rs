//! Branch-and-bound verification of Lyapunov conditions.
//!
//! Three questions are answered over the uncertain closed loop, all reduced
//! to maximizing an indefinite quadratic of stacked network iterates:
//!
//! * the worst one-step difference `V(g(x) + w) - V(x)` over the region
//!   minus the excluded box, for every admissible disturbance;
//! * the largest successor value `V(g(x) + w)` over a given box;
//! * the smallest `V` on the boundary of a polytope.
//!
//! Nodes carry an interval box over the decision vector, a partial
//! activation pattern per network copy, the state of the excluded-box
//! complement disjunction, and accumulated spatial cuts.  Bounding combines
//! affine network enclosures, interval constraint tightening, and a
//! difference-of-convex overestimate of the quadratic; once every binary
//! decision is fixed the model is the exact quadratic restricted to the
//! node.  Search is best-first on the upper bound, the bound is inherited
//! monotonically by children, and every reported incumbent is re-evaluated
//! through the exact dynamics, so verdicts never depend on the relaxation
//! being tight.

mod encoding;
mod relax;

pub use encoding::{Assignment, BinaryKind, EncRow, MilEncoding};

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::dynamics::UncertainSystem;
use crate::geometry::{AxisBox, Polytope};
use crate::lyapunov::{self, LyapCandidate};
use crate::{Error, Result, Vector};

use relax::{dc_bound, tighten, AffForm, BoundInfo, CopyTrace, QuadModel, Row, VBox};

/// Knobs of the branch-and-bound search.
#[derive(Debug, Clone)]
pub struct VerifierConfig {
    /// Certification margin: the decrease check passes only when the
    /// difference is at most `-eps_margin` everywhere.
    pub eps_margin: f64,
    /// Absolute gap at which level-set bounds stop refining.
    pub gap_tol: f64,
    /// Maximum number of processed nodes before giving up.
    pub node_cap: u64,
    /// Optional CSV log with one line per processed node.
    pub node_log: Option<PathBuf>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            eps_margin: 1e-6,
            gap_tol: 1e-6,
            node_cap: 200_000,
            node_log: None,
        }
    }
}

impl VerifierConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eps_margin > 0.0 && self.eps_margin.is_finite()) {
            return Err(Error::invalid("certification margin must be positive"));
        }
        if !(self.gap_tol > 0.0 && self.gap_tol.is_finite()) {
            return Err(Error::invalid("gap tolerance must be positive"));
        }
        if self.node_cap == 0 {
            return Err(Error::invalid("node cap must be at least one"));
        }
        Ok(())
    }
}

/// An admissible pair witnessing a nonnegative one-step difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(rename = "dV")]
    pub dv: f64,
}

impl Counterexample {
    pub fn state(&self) -> Vector {
        Vector::from_vec(self.x.clone())
    }

    pub fn disturbance(&self) -> Vector {
        Vector::from_vec(self.w.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("counterexample serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedFile {
            path: "<inline json>".into(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::MalformedFile { reason, .. } => Error::MalformedFile {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    /// Checks the pair is admissible for `sys` and that the stored
    /// difference matches a re-evaluation within `tol`.
    pub fn validate(&self, sys: &UncertainSystem, cand: &LyapCandidate, tol: f64) -> Result<()> {
        let x = self.state();
        let w = self.disturbance();
        if x.len() != sys.dim() || w.len() != sys.dim() {
            return Err(Error::dim(sys.dim(), x.len(), "counterexample state"));
        }
        if !sys.roi().contains(&x) {
            return Err(Error::invalid("counterexample state outside the region"));
        }
        if inside_open(sys.excluded(), &x) {
            return Err(Error::invalid(
                "counterexample state inside the excluded box",
            ));
        }
        if w.amax() > sys.disturbance_radius(&x) + tol {
            return Err(Error::invalid("counterexample disturbance above the bound"));
        }
        let dv = lyapunov::eval_dv(cand, sys, &x, &w)?;
        if (dv - self.dv).abs() > tol * (1.0 + dv.abs()) {
            return Err(Error::invalid(format!(
                "stored difference {} does not match re-evaluation {dv}",
                self.dv
            )));
        }
        Ok(())
    }
}

/// Outcome of a decrease verification.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// The difference is at most `ub <= -eps_margin` everywhere.
    Certified { ub: f64 },
    /// An exact admissible pair with nonnegative difference.
    Counterexample(Counterexample),
    /// Budget exhausted inside the margin band; `ub` is still a sound upper
    /// bound and `best` the largest difference actually evaluated.
    Indeterminate { ub: f64, best: f64 },
}

/// Full record of a decrease verification run.
#[derive(Debug)]
pub struct VerifierOutcome {
    pub verdict: Verdict,
    /// Processed node count.
    pub nodes: u64,
    /// Wall time of the search; diagnostic only, never serialized.
    pub wall: Duration,
    /// `(node id, value)` whenever the best exact value improved.
    pub incumbent_history: Vec<(u64, f64)>,
    /// Global upper bound at each processed node, nonincreasing.
    pub ub_history: Vec<f64>,
}

/// Two-sided answer of a level-set query.
#[derive(Debug, Clone)]
pub struct LevelBound {
    /// Sound bound: an upper bound for maxima, a lower bound for minima.
    pub bound: f64,
    /// Best value attained by an exactly evaluated feasible point.
    pub attained: f64,
    /// `|bound - attained|`.
    pub gap: f64,
    pub nodes: u64,
    /// Whether the gap closed below tolerance within the node budget.
    pub converged: bool,
}

/// Maximizes the one-step difference `V(g(x) + w) - V(x)` over the region
/// minus the interior of the excluded box and all admissible disturbances.
/// Certifies when the maximum provably stays below `-eps_margin`, returns an
/// exactly evaluated counterexample when a nonnegative difference is found,
/// and reports indeterminate when the node cap ends the search inside the
/// margin band.
pub fn max_dv(
    sys: &UncertainSystem,
    cand: &LyapCandidate,
    cfg: &VerifierConfig,
) -> Result<VerifierOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let prob = Problem::delta_v(sys, cand)?;
    let engine = Engine {
        prob,
        mode: Mode::Threshold {
            eps: cfg.eps_margin,
        },
        cap: cfg.node_cap,
    };
    let run = engine.run();
    if let Some(path) = &cfg.node_log {
        write_node_log(path, &run.log)?;
    }
    let verdict = match run.end {
        RunEnd::Violated => {
            let (x, w) = run.best_pair.clone().expect("violation carries a witness");
            Verdict::Counterexample(Counterexample {
                x: x.iter().copied().collect(),
                w: w.iter().copied().collect(),
                dv: run.best,
            })
        }
        RunEnd::Closed if run.bound <= -cfg.eps_margin => Verdict::Certified { ub: run.bound },
        _ => Verdict::Indeterminate {
            ub: run.bound,
            best: run.best,
        },
    };
    Ok(VerifierOutcome {
        verdict,
        nodes: run.nodes,
        wall: start.elapsed(),
        incumbent_history: run.incumbent_history,
        ub_history: run.ub_history,
    })
}

/// Two-sided bound on the maximum of the one-step difference, refined until
/// the gap closes below `gap_tol`.  Returns `(upper bound, best attained)`;
/// unlike [`max_dv`] a nonnegative value does not stop the search.
pub fn max_dv_bound(
    sys: &UncertainSystem,
    cand: &LyapCandidate,
    cfg: &VerifierConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let prob = Problem::delta_v(sys, cand)?;
    let engine = Engine {
        prob,
        mode: Mode::Gap { tol: cfg.gap_tol },
        cap: cfg.node_cap,
    };
    let run = engine.run();
    Ok((run.bound, run.best))
}

/// Maximizes `V(g(x) + w)` over `x` in `within` and all admissible
/// disturbances.  The bound is sound even when the node cap fires first;
/// `converged` reports whether the gap closed.
pub fn max_v_successor(
    sys: &UncertainSystem,
    cand: &LyapCandidate,
    within: &AxisBox,
    cfg: &VerifierConfig,
) -> Result<LevelBound> {
    cfg.validate()?;
    let prob = Problem::successor(sys, cand, within)?;
    let engine = Engine {
        prob,
        mode: Mode::Gap { tol: cfg.gap_tol },
        cap: cfg.node_cap,
    };
    let run = engine.run();
    if let Some(path) = &cfg.node_log {
        write_node_log(path, &run.log)?;
    }
    let gap = (run.bound - run.best).max(0.0);
    Ok(LevelBound {
        bound: run.bound,
        attained: run.best,
        gap,
        nodes: run.nodes,
        converged: run.end == RunEnd::Closed && gap <= cfg.gap_tol,
    })
}

/// Minimizes `V` over the boundary of `region` by maximizing `-V` on each
/// facet.  `bound` is a sound lower bound on the boundary minimum and
/// `attained` the smallest value of an exactly evaluated boundary point.
pub fn min_v_boundary(
    sys: &UncertainSystem,
    cand: &LyapCandidate,
    region: &Polytope,
    cfg: &VerifierConfig,
) -> Result<LevelBound> {
    cfg.validate()?;
    if region.dim() != sys.dim() {
        return Err(Error::dim(sys.dim(), region.dim(), "boundary region"));
    }
    let mut bound = f64::INFINITY;
    let mut attained = f64::INFINITY;
    let mut nodes = 0u64;
    let mut converged = true;
    let mut log = Vec::new();
    for facet in 0..region.num_facets() {
        let prob = Problem::boundary(sys, cand, region, facet)?;
        let engine = Engine {
            prob,
            mode: Mode::Gap { tol: cfg.gap_tol },
            cap: cfg.node_cap,
        };
        let run = engine.run();
        nodes += run.nodes;
        let facet_gap = (run.bound - run.best).max(0.0);
        converged &= run.end == RunEnd::Closed && facet_gap <= cfg.gap_tol;
        bound = bound.min(-run.bound);
        attained = attained.min(-run.best);
        log.extend(run.log);
    }
    if let Some(path) = &cfg.node_log {
        write_node_log(path, &log)?;
    }
    let gap = (attained - bound).max(0.0);
    Ok(LevelBound {
        bound,
        attained,
        gap,
        nodes,
        converged,
    })
}

fn write_node_log(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = String::with_capacity(32 * (lines.len() + 1));
    text.push_str("node,depth,ub,incumbent\n");
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn inside_open(bx: &AxisBox, x: &Vector) -> bool {
    (0..bx.dim()).all(|c| x[c] > bx.lo()[c] && x[c] < bx.hi()[c])
}

fn vcat(x: &Vector, w: &Vector) -> Vector {
    let mut v = Vector::zeros(x.len() + w.len());
    v.rows_mut(0, x.len()).copy_from(x);
    v.rows_mut(x.len(), w.len()).copy_from(w);
    v
}

fn pad_row(a: &Vector, d: usize) -> Vector {
    let mut out = Vector::zeros(d);
    out.rows_mut(0, a.len()).copy_from(a);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    DeltaV,
    Successor,
    BoundaryNeg,
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    /// Prove the objective stays at or below `-eps`, or find a point at or
    /// above zero.
    Threshold { eps: f64 },
    /// Shrink `bound - attained` below `tol`.
    Gap { tol: f64 },
}

/// State of the excluded-box complement disjunction on a node.
#[derive(Debug, Clone)]
enum CompState {
    /// The operation has no complement constraint.
    Absent,
    /// The node box already avoids the open interior.
    Satisfied,
    /// Per-facet selector decisions, `2c` for the upper side of coordinate
    /// `c` and `2c + 1` for the lower.
    Open(Vec<Option<bool>>),
}

#[derive(Debug)]
struct Node {
    id: u64,
    depth: u32,
    /// Inherited upper bound; tightened monotonically after assessment.
    ub: f64,
    vbox: VBox,
    /// Branch decision per flattened hidden neuron, per network copy.
    pattern: Vec<Vec<Option<bool>>>,
    comp: CompState,
    /// Spatial cuts in eigencoordinate directions.
    cuts: Vec<Row>,
}

impl Node {
    fn child(&self, id: u64) -> Node {
        Node {
            id,
            depth: self.depth + 1,
            ub: self.ub,
            vbox: self.vbox.clone(),
            pattern: self.pattern.clone(),
            comp: self.comp.clone(),
            cuts: self.cuts.clone(),
        }
    }
}

#[derive(Debug)]
enum Plan {
    Neuron { copy: usize, idx: usize },
    Selector { idx: usize },
    Spatial { dir: Vector, lo: f64, hi: f64 },
    /// Nothing left to branch on; the bound cannot be improved.
    Leaf,
}

struct Open(Node);

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // Highest bound first; ties resolved toward the older node so the
        // search order is deterministic.
        self.0
            .ub
            .total_cmp(&other.0.ub)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

/// Applies the complement rules: clips the box along decided selectors,
/// detects boxes already outside the open interior, discards unreachable
/// facets, and forces the last undecided facet.  Returns false when no
/// escape remains.
fn refresh_comp(comp: &mut CompState, vbox: &mut VBox, bx: &AxisBox) -> bool {
    let CompState::Open(sel) = comp else {
        return true;
    };
    let n = bx.dim();
    // A selector decided false confines the box to that side.  Branch-false
    // children rely on the sibling covering the escape region.
    for c in 0..n {
        if sel[2 * c] == Some(false) && bx.hi()[c] < vbox.hi[c] {
            vbox.hi[c] = bx.hi()[c];
        }
        if sel[2 * c + 1] == Some(false) && bx.lo()[c] > vbox.lo[c] {
            vbox.lo[c] = bx.lo()[c];
        }
        if vbox.lo[c] > vbox.hi[c] {
            return false;
        }
    }
    if (0..n).any(|c| vbox.hi[c] <= bx.lo()[c] || vbox.lo[c] >= bx.hi()[c]) {
        *comp = CompState::Satisfied;
        return true;
    }
    loop {
        if let Some(idx) = sel.iter().position(|s| *s == Some(true)) {
            let c = idx / 2;
            if idx % 2 == 0 {
                if bx.hi()[c] > vbox.lo[c] {
                    vbox.lo[c] = bx.hi()[c];
                }
            } else if bx.lo()[c] < vbox.hi[c] {
                vbox.hi[c] = bx.lo()[c];
            }
            if vbox.lo[c] > vbox.hi[c] {
                return false;
            }
            *comp = CompState::Satisfied;
            return true;
        }
        let mut changed = false;
        for c in 0..n {
            if sel[2 * c].is_none() && vbox.hi[c] < bx.hi()[c] {
                sel[2 * c] = Some(false);
                changed = true;
            }
            if sel[2 * c + 1].is_none() && vbox.lo[c] > bx.lo()[c] {
                sel[2 * c + 1] = Some(false);
                changed = true;
            }
        }
        let undecided: Vec<usize> = sel
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect();
        if undecided.is_empty() {
            return false;
        }
        if undecided.len() == 1 {
            sel[undecided[0]] = Some(true);
            changed = true;
        }
        if !changed {
            return true;
        }
    }
}

/// Projected gradient ascent on the node model, clamped to the box.  Only a
/// heuristic: its result is re-evaluated exactly before use.
fn ascend(model: &QuadModel, vbox: &VBox, start: &Vector) -> Vector {
    let mut v = vbox.clamp(start);
    let mut val = model.eval(&v);
    let mut step = 0.5 / model.h.amax().max(1e-9);
    for _ in 0..25 {
        let g = model.grad(&v);
        let next = vbox.clamp(&(&v + &g * step));
        let next_val = model.eval(&next);
        if next_val > val {
            v = next;
            val = next_val;
            step *= 1.3;
        } else {
            step *= 0.4;
        }
    }
    v
}

/// Enclosures of one node: the sign rows implied by fixed neurons, the
/// per-copy traces, and the stacked basis forms entering the objective.
struct Enclosed {
    rows: Vec<Row>,
    traces: Vec<CopyTrace>,
    zx: Option<AffForm>,
    zy: Option<AffForm>,
}

/// One verification question, independent of search state.
struct Problem<'a> {
    sys: &'a UncertainSystem,
    cand: &'a LyapCandidate,
    shape: Shape,
    n: usize,
    d: usize,
    with_w: bool,
    root_box: VBox,
    root_comp: CompState,
    base_rows: Vec<Row>,
    /// Boundary operation: facet normal and offset.
    facet: Option<(Vector, f64)>,
    /// Boundary operation: region whose facet is searched.
    region: Option<Polytope>,
    /// Boundary operation: a known feasible facet point.
    anchor: Option<Vector>,
    /// Successor operation: the box of starting states.
    level_box: Option<AxisBox>,
    num_copies: usize,
    hidden: usize,
    /// Hidden layer of each flattened neuron index.
    flat_layer: Vec<usize>,
    /// Downstream weight gain of each hidden layer: the product of later
    /// layers' infinity norms, converting a pre-activation error into an
    /// output-scale score.
    layer_gain: Vec<f64>,
}

fn neuron_layout(net: &crate::relu::ReluNetwork) -> (Vec<usize>, Vec<f64>) {
    let layers = net.layers();
    let hidden = layers.len() - 1;
    let mut flat_layer = Vec::new();
    for (li, layer) in layers.iter().take(hidden).enumerate() {
        flat_layer.extend(std::iter::repeat_n(li, layer.bias.len()));
    }
    let inf_norm = |m: &crate::Matrix| {
        (0..m.nrows()).fold(0.0f64, |acc, i| acc.max(m.row(i).iter().map(|v| v.abs()).sum()))
    };
    let mut layer_gain = vec![1.0; hidden];
    for li in (0..hidden).rev() {
        let next = inf_norm(&layers[li + 1].weight);
        layer_gain[li] = next
            * if li + 1 < hidden {
                layer_gain[li + 1]
            } else {
                1.0
            };
    }
    (flat_layer, layer_gain)
}

impl<'a> Problem<'a> {
    fn delta_v(sys: &'a UncertainSystem, cand: &'a LyapCandidate) -> Result<Problem<'a>> {
        if cand.state_dim() != sys.dim() {
            return Err(Error::dim(
                sys.dim(),
                cand.state_dim(),
                "candidate state dimension",
            ));
        }
        let n = sys.dim();
        let k = cand.k();
        let bbox = sys.roi().bounding_box()?;
        let nu_max = (0..n).fold(0.0f64, |m, i| {
            m.max(bbox.lo()[i].abs()).max(bbox.hi()[i].abs())
        });
        let r_max = sys.error_bound().eval_at_norm(nu_max);
        let with_w = r_max > 0.0;
        let d = if with_w { 2 * n } else { n };
        let mut lo = Vector::zeros(d);
        let mut hi = Vector::zeros(d);
        for i in 0..n {
            lo[i] = bbox.lo()[i];
            hi[i] = bbox.hi()[i];
        }
        for i in n..d {
            lo[i] = -r_max;
            hi[i] = r_max;
        }
        let base_rows = (0..sys.roi().num_facets())
            .map(|f| {
                let (a, b) = sys.roi().facet(f);
                Row {
                    a: pad_row(&a, d),
                    lo: f64::NEG_INFINITY,
                    hi: b,
                }
            })
            .collect();
        let (flat_layer, layer_gain) = neuron_layout(sys.net());
        Ok(Problem {
            sys,
            cand,
            shape: Shape::DeltaV,
            n,
            d,
            with_w,
            root_box: VBox::new(lo, hi),
            root_comp: CompState::Open(vec![None; 2 * n]),
            base_rows,
            facet: None,
            region: None,
            anchor: None,
            level_box: None,
            num_copies: if k == 0 { 1 } else { 2 * k },
            hidden: sys.net().hidden_neurons(),
            flat_layer,
            layer_gain,
        })
    }

    fn successor(
        sys: &'a UncertainSystem,
        cand: &'a LyapCandidate,
        within: &AxisBox,
    ) -> Result<Problem<'a>> {
        if cand.state_dim() != sys.dim() || within.dim() != sys.dim() {
            return Err(Error::dim(sys.dim(), within.dim(), "successor box"));
        }
        let n = sys.dim();
        let k = cand.k();
        let nu_max = (0..n).fold(0.0f64, |m, i| {
            m.max(within.lo()[i].abs()).max(within.hi()[i].abs())
        });
        let r_max = sys.error_bound().eval_at_norm(nu_max);
        let with_w = r_max > 0.0;
        let d = if with_w { 2 * n } else { n };
        let mut lo = Vector::zeros(d);
        let mut hi = Vector::zeros(d);
        for i in 0..n {
            lo[i] = within.lo()[i];
            hi[i] = within.hi()[i];
        }
        for i in n..d {
            lo[i] = -r_max;
            hi[i] = r_max;
        }
        let (flat_layer, layer_gain) = neuron_layout(sys.net());
        Ok(Problem {
            sys,
            cand,
            shape: Shape::Successor,
            n,
            d,
            with_w,
            root_box: VBox::new(lo, hi),
            root_comp: CompState::Absent,
            base_rows: Vec::new(),
            facet: None,
            region: None,
            anchor: None,
            level_box: Some(within.clone()),
            num_copies: k + 1,
            hidden: sys.net().hidden_neurons(),
            flat_layer,
            layer_gain,
        })
    }

    fn boundary(
        sys: &'a UncertainSystem,
        cand: &'a LyapCandidate,
        region: &Polytope,
        facet: usize,
    ) -> Result<Problem<'a>> {
        if cand.state_dim() != sys.dim() {
            return Err(Error::dim(
                sys.dim(),
                cand.state_dim(),
                "candidate state dimension",
            ));
        }
        let n = sys.dim();
        let k = cand.k();
        let bbox = region.bounding_box()?;
        let d = n;
        let (fa, fb) = region.facet(facet);
        let mut base_rows: Vec<Row> = (0..region.num_facets())
            .map(|f| {
                let (a, b) = region.facet(f);
                Row {
                    a: pad_row(&a, d),
                    lo: f64::NEG_INFINITY,
                    hi: b,
                }
            })
            .collect();
        base_rows.push(Row {
            a: pad_row(&fa, d),
            lo: fb,
            hi: fb,
        });
        // A known feasible facet point anchors the attained side.
        let scale = 1e-9 * (1.0 + fb.abs());
        let on_facet: Vec<&Vector> = region
            .vertices()
            .iter()
            .filter(|v| (fa.dot(v) - fb).abs() <= scale)
            .collect();
        let anchor = if on_facet.is_empty() {
            let proj = &fa * (fb / fa.norm_squared());
            region.contains(&proj).then_some(proj)
        } else {
            let mut mean = Vector::zeros(n);
            for v in &on_facet {
                mean += *v;
            }
            mean /= on_facet.len() as f64;
            Some(mean)
        };
        let (flat_layer, layer_gain) = neuron_layout(sys.net());
        Ok(Problem {
            sys,
            cand,
            shape: Shape::BoundaryNeg,
            n,
            d,
            with_w: false,
            root_box: VBox::new(bbox.lo().clone(), bbox.hi().clone()),
            root_comp: CompState::Absent,
            base_rows,
            facet: Some((fa, fb)),
            region: Some(region.clone()),
            anchor,
            level_box: None,
            num_copies: k,
            hidden: sys.net().hidden_neurons(),
            flat_layer,
            layer_gain,
        })
    }

    fn root(&self) -> Node {
        Node {
            id: 0,
            depth: 0,
            ub: f64::INFINITY,
            vbox: self.root_box.clone(),
            pattern: vec![vec![None; self.hidden]; self.num_copies],
            comp: self.root_comp.clone(),
            cuts: Vec::new(),
        }
    }

    /// Intersects the disturbance block with the radius admitted by the
    /// largest state norm in the box.  Sound because the bound is
    /// nondecreasing in the norm; exact in the limit of point boxes.
    fn recouple_w(&self, vbox: &mut VBox) -> bool {
        if !self.with_w {
            return true;
        }
        let n = self.n;
        let nu_hi = (0..n).fold(0.0f64, |m, c| {
            m.max(vbox.lo[c].abs()).max(vbox.hi[c].abs())
        });
        let r = self.sys.error_bound().eval_at_norm(nu_hi);
        for c in 0..n {
            if vbox.lo[n + c] < -r {
                vbox.lo[n + c] = -r;
            }
            if vbox.hi[n + c] > r {
                vbox.hi[n + c] = r;
            }
            if vbox.lo[n + c] > vbox.hi[n + c] {
                return false;
            }
        }
        true
    }

    fn chain_step(
        &self,
        input: &AffForm,
        fixes: &[Option<bool>],
        vbox: &VBox,
        rows: &mut Vec<Row>,
        traces: &mut Vec<CopyTrace>,
    ) -> Option<AffForm> {
        let (out, trace, mut sign_rows) =
            relax::enclose_network(self.sys.net(), input, fixes, vbox)?;
        rows.append(&mut sign_rows);
        traces.push(trace);
        let zero = Vector::zeros(self.n);
        Some(input.linear_map(self.sys.a(), &zero).add(&out))
    }

    /// Propagates every network copy and stacks the basis forms the
    /// objective needs.  `None` when a branch decision contradicts the
    /// interval bounds on this box.
    fn enclose(&self, pattern: &[Vec<Option<bool>>], vbox: &VBox) -> Option<Enclosed> {
        let n = self.n;
        let k = self.cand.k();
        let x_form = AffForm::var_slice(self.d, 0, n);
        let w_form = self.with_w.then(|| AffForm::var_slice(self.d, n, n));
        let mut rows = Vec::new();
        let mut traces = Vec::new();
        match self.shape {
            Shape::DeltaV => {
                let mut xb = vec![x_form];
                let mut ci = 0;
                // One copy even at order zero: the first nominal step feeds
                // the successor basis.
                for i in 0..k.max(1) {
                    let g = self.chain_step(&xb[i], &pattern[ci], vbox, &mut rows, &mut traces)?;
                    ci += 1;
                    xb.push(g);
                }
                let y = match &w_form {
                    Some(w) => xb[1].add(w),
                    None => xb[1].clone(),
                };
                let mut yb = vec![y];
                for j in 0..k {
                    let g = self.chain_step(&yb[j], &pattern[ci], vbox, &mut rows, &mut traces)?;
                    ci += 1;
                    yb.push(g);
                }
                let zx_refs: Vec<&AffForm> = xb[..=k].iter().collect();
                let zy_refs: Vec<&AffForm> = yb[..=k].iter().collect();
                Some(Enclosed {
                    rows,
                    traces,
                    zx: Some(AffForm::stack(&zx_refs)),
                    zy: Some(AffForm::stack(&zy_refs)),
                })
            }
            Shape::Successor => {
                let g = self.chain_step(&x_form, &pattern[0], vbox, &mut rows, &mut traces)?;
                let y = match &w_form {
                    Some(w) => g.add(w),
                    None => g,
                };
                let mut yb = vec![y];
                for j in 0..k {
                    let g =
                        self.chain_step(&yb[j], &pattern[j + 1], vbox, &mut rows, &mut traces)?;
                    yb.push(g);
                }
                let zy_refs: Vec<&AffForm> = yb[..=k].iter().collect();
                Some(Enclosed {
                    rows,
                    traces,
                    zx: None,
                    zy: Some(AffForm::stack(&zy_refs)),
                })
            }
            Shape::BoundaryNeg => {
                let mut xb = vec![x_form];
                for i in 0..k {
                    let g = self.chain_step(&xb[i], &pattern[i], vbox, &mut rows, &mut traces)?;
                    xb.push(g);
                }
                let zx_refs: Vec<&AffForm> = xb[..=k].iter().collect();
                Some(Enclosed {
                    rows,
                    traces,
                    zx: Some(AffForm::stack(&zx_refs)),
                    zy: None,
                })
            }
        }
    }

    fn model(&self, enc: &Enclosed, vbox: &VBox) -> QuadModel {
        let mut model = QuadModel::new(self.d);
        let p = self.cand.p();
        if let Some(zy) = &enc.zy {
            model.add_quadratic(p, zy, 1.0, vbox);
        }
        if let Some(zx) = &enc.zx {
            model.add_quadratic(p, zx, -1.0, vbox);
        }
        model.finish();
        model
    }

    /// Tightens the node in place and bounds it.  Returns the raw upper
    /// bound, the branch plan, and candidate points for incumbent
    /// extraction; `None` when the node is infeasible.  `prune_at` is the
    /// value below which the caller prunes, letting the bound skip its
    /// interior refinement when the cheap bound already clears it.
    fn assess(&self, node: &mut Node, prune_at: f64) -> Option<(f64, Plan, Vec<Vector>)> {
        if node.vbox.is_empty() {
            return None;
        }
        if !refresh_comp(&mut node.comp, &mut node.vbox, self.sys.excluded()) {
            return None;
        }
        if !self.recouple_w(&mut node.vbox) {
            return None;
        }
        let mut enc = self.enclose(&node.pattern, &node.vbox)?;
        let mut rows = Vec::new();
        for round in 0..2 {
            rows = enc.rows.clone();
            rows.extend(self.base_rows.iter().cloned());
            rows.extend(node.cuts.iter().cloned());
            if !tighten(&mut node.vbox, &rows, if round == 0 { 3 } else { 1 }) {
                return None;
            }
            if !refresh_comp(&mut node.comp, &mut node.vbox, self.sys.excluded()) {
                return None;
            }
            if !self.recouple_w(&mut node.vbox) {
                return None;
            }
            if round == 0 {
                // Rebuild on the tightened box; the forms stay sound on any
                // sub-box, so the final tightening needs no third pass.
                enc = self.enclose(&node.pattern, &node.vbox)?;
            }
        }
        let model = self.model(&enc, &node.vbox);
        let info = dc_bound(&model, &node.vbox, &node.cuts, &rows, prune_at);
        let cands = vec![
            info.v_point.clone(),
            node.vbox.mid(),
            ascend(&model, &node.vbox, &info.v_point),
        ];
        let plan = self.plan(node, &enc, &info, model.sigma);
        // Temporary diagnostics, stripped before release.
        if std::env::var_os("ROACERT_BB_DEBUG").is_some() && node.id % 50_000 == 1 {
            let unfixed = node
                .pattern
                .iter()
                .map(|p| p.iter().filter(|s| s.is_none()).count())
                .collect::<Vec<_>>();
            let secant_best = info.scores.iter().cloned().fold(0.0f64, f64::max);
            eprintln!(
                "BB id={} depth={} ub={:.4} sigma={:.4} secant={:.4} unfixed={:?} plan={:?} box={:?}",
                node.id, node.depth, info.ub, model.sigma, secant_best, unfixed,
                match &plan { Plan::Neuron{..} => "neuron", Plan::Selector{..} => "sel", Plan::Spatial{..} => "spatial", Plan::Leaf => "leaf" },
                (0..self.d).map(|i| (node.vbox.hi[i] - node.vbox.lo[i]) as f32).collect::<Vec<_>>()
            );
        }
        Some((info.ub, plan, cands))
    }

    fn plan(&self, node: &Node, enc: &Enclosed, info: &BoundInfo, sigma: f64) -> Plan {
        // Excluded-box selectors first: there are at most 2n and deciding
        // them confines the box, which shrinks the admissible disturbance.
        if let CompState::Open(sel) = &node.comp {
            if let Some(idx) = sel.iter().position(|s| s.is_none()) {
                return Plan::Selector { idx };
            }
        }
        // Most damaging unfixed neuron: secant gap scaled by its layer's
        // downstream weight gain.
        let mut neuron: Option<(usize, usize)> = None;
        let mut neuron_score = 0.0;
        for (ci, trace) in enc.traces.iter().enumerate() {
            for (j, eff) in trace.eff.iter().enumerate() {
                if node.pattern[ci][j].is_none() && *eff == relax::Eff::Unstable {
                    let (lo, hi) = trace.pre_iv[j];
                    let gap = -lo * hi / (hi - lo);
                    let score = gap * self.layer_gain[self.flat_layer[j]];
                    if neuron.is_none() || score > neuron_score {
                        neuron = Some((ci, j));
                        neuron_score = score;
                    }
                }
            }
        }
        // Spatial: the eigendirection with the largest secant gap incurred
        // at the bounding maximizer; splitting anywhere else cannot move
        // this node's bound.
        let mut pick: Option<usize> = None;
        let mut best_gap = 0.0;
        for i in 0..self.d {
            let (lo, hi) = info.sbox[i];
            if hi - lo <= 1e-12 {
                continue;
            }
            if info.gaps[i] > best_gap {
                best_gap = info.gaps[i];
                pick = Some(i);
            }
        }
        // The interval slack `sigma` is the bound error attributable to
        // unfixed neurons, the incurred gap the error attributable to the
        // convex directions; branch on whichever dominates.
        if let Some(i) = pick {
            if best_gap > 2.0 * sigma || neuron.is_none() {
                return Plan::Spatial {
                    dir: info.basis.column(i).clone_owned(),
                    lo: info.sbox[i].0,
                    hi: info.sbox[i].1,
                };
            }
        }
        if let Some((copy, idx)) = neuron {
            return Plan::Neuron { copy, idx };
        }
        // No incurred gap and no neuron: fall back to the worst-case gap,
        // then to the widest eigeninterval.
        let mut best_score = 0.0;
        for i in 0..self.d {
            let (lo, hi) = info.sbox[i];
            if hi - lo <= 1e-12 {
                continue;
            }
            if info.scores[i] > best_score {
                best_score = info.scores[i];
                pick = Some(i);
            }
        }
        if pick.is_none() {
            let mut widest = 1e-12;
            for i in 0..self.d {
                let (lo, hi) = info.sbox[i];
                if hi - lo > widest {
                    widest = hi - lo;
                    pick = Some(i);
                }
            }
        }
        match pick {
            Some(i) => Plan::Spatial {
                dir: info.basis.column(i).clone_owned(),
                lo: info.sbox[i].0,
                hi: info.sbox[i].1,
            },
            None => Plan::Leaf,
        }
    }

    /// Repairs a relaxation point into an exactly feasible pair and
    /// evaluates the true objective there.
    fn incumbent(&self, v: &Vector) -> Option<(f64, Vector, Vector)> {
        let n = self.n;
        let x0 = v.rows(0, n).clone_owned();
        let w0 = if self.with_w {
            v.rows(n, n).clone_owned()
        } else {
            Vector::zeros(n)
        };
        match self.shape {
            Shape::DeltaV => {
                let mut x = x0;
                let bx = self.sys.excluded();
                if inside_open(bx, &x) {
                    // Cheapest exit through one facet.
                    let mut best: Option<(f64, usize, f64)> = None;
                    for c in 0..n {
                        let up = bx.hi()[c] - x[c];
                        if best.is_none_or(|(dist, _, _)| up < dist) {
                            best = Some((up, c, bx.hi()[c]));
                        }
                        let dn = x[c] - bx.lo()[c];
                        if best.is_none_or(|(dist, _, _)| dn < dist) {
                            best = Some((dn, c, bx.lo()[c]));
                        }
                    }
                    let (_, c, target) = best?;
                    x[c] = target;
                }
                if !self.sys.roi().contains(&x) {
                    // Pull toward the origin onto the region.
                    let ra = self.sys.roi().a();
                    let rb = self.sys.roi().b();
                    let mut t = 1.0f64;
                    for f in 0..self.sys.roi().num_facets() {
                        let act: f64 = (0..n).map(|c| ra[(f, c)] * x[c]).sum();
                        if act > rb[f] {
                            if rb[f] <= 0.0 || act <= 0.0 {
                                return None;
                            }
                            t = t.min(rb[f] / act);
                        }
                    }
                    x *= t * (1.0 - 1e-9);
                    if inside_open(bx, &x) || !self.sys.roi().contains(&x) {
                        return None;
                    }
                }
                let r = self.sys.disturbance_radius(&x);
                let w = Vector::from_fn(n, |c, _| w0[c].clamp(-r, r));
                let val = lyapunov::eval_dv(self.cand, self.sys, &x, &w).ok()?;
                if val.is_finite() {
                    Some((val, x, w))
                } else {
                    None
                }
            }
            Shape::Successor => {
                let b = self.level_box.as_ref().expect("successor box");
                let x = Vector::from_fn(n, |c, _| x0[c].clamp(b.lo()[c], b.hi()[c]));
                let r = self.sys.disturbance_radius(&x);
                let w = Vector::from_fn(n, |c, _| w0[c].clamp(-r, r));
                let y = self.sys.nominal(&x) + &w;
                let val = lyapunov::eval_v(self.cand, self.sys, &y).ok()?;
                if val.is_finite() {
                    Some((val, x, w))
                } else {
                    None
                }
            }
            Shape::BoundaryNeg => {
                let (fa, fb) = self.facet.as_ref().expect("boundary facet");
                let mut x = &x0 + fa * ((fb - fa.dot(&x0)) / fa.norm_squared());
                let region = self.region.as_ref().expect("boundary region");
                if !region.contains(&x) {
                    x = self.anchor.clone()?;
                }
                let val = -lyapunov::eval_v(self.cand, self.sys, &x).ok()?;
                if val.is_finite() {
                    Some((val, x, Vector::zeros(n)))
                } else {
                    None
                }
            }
        }
    }

    /// Deterministic starting points likely to attain or approach the
    /// optimum: region vertices, excluded-box faces and corners, level-box
    /// corners, or facet points, each with outward disturbance variants.
    fn seeds(&self) -> Vec<Vector> {
        let n = self.n;
        let mut states: Vec<Vector> = Vec::new();
        match self.shape {
            Shape::DeltaV => {
                let roi = self.sys.roi();
                if roi.vertices().is_empty() {
                    if let Ok(bb) = roi.bounding_box() {
                        states.extend(bb.corners());
                    }
                } else {
                    states.extend(roi.vertices().iter().cloned());
                }
                let bx = self.sys.excluded();
                let center = bx.center();
                for c in 0..n {
                    for val in [bx.lo()[c], bx.hi()[c]] {
                        let mut x = center.clone();
                        x[c] = val;
                        states.push(x);
                    }
                }
                states.extend(bx.corners());
            }
            Shape::Successor => {
                let b = self.level_box.as_ref().expect("successor box");
                states.push(b.center());
                states.extend(b.corners());
            }
            Shape::BoundaryNeg => {
                let (fa, fb) = self.facet.as_ref().expect("boundary facet");
                let scale = 1e-9 * (1.0 + fb.abs());
                if let Some(region) = &self.region {
                    for vtx in region.vertices() {
                        if (fa.dot(vtx) - fb).abs() <= scale {
                            states.push(vtx.clone());
                        }
                    }
                }
                states.extend(self.anchor.iter().cloned());
            }
        }
        let mut out = Vec::new();
        for x in states {
            if self.with_w {
                let r = self.sys.disturbance_radius(&x);
                let dir = match self.shape {
                    Shape::Successor => self.sys.nominal(&x),
                    _ => x.clone(),
                };
                let outward = Vector::from_fn(n, |c, _| r * dir[c].signum());
                out.push(vcat(&x, &Vector::zeros(n)));
                out.push(vcat(&x, &outward));
            } else {
                out.push(x);
            }
        }
        out
    }

    /// Debug sentinel: random points of the node that satisfy all its
    /// constraints must evaluate at or below the node bound.
    #[cfg(debug_assertions)]
    fn spot_check(&self, node: &Node, ub: f64) {
        use rand::Rng as _;
        use rand::SeedableRng as _;
        if !ub.is_finite() {
            return;
        }
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(node.id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        'sample: for _ in 0..3 {
            let v = Vector::from_fn(self.d, |i, _| {
                let (lo, hi) = (node.vbox.lo[i], node.vbox.hi[i]);
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            });
            for row in self.base_rows.iter().chain(&node.cuts) {
                let act = row.a.dot(&v);
                if act < row.lo - 1e-9 || act > row.hi + 1e-9 {
                    continue 'sample;
                }
            }
            if let Some(val) = self.exact_value_in_node(node, &v) {
                debug_assert!(
                    val <= ub + 1e-7,
                    "exact value {val} above node bound {ub} at node {}",
                    node.id
                );
            }
        }
    }

    /// Exact objective at `v` when the point belongs to the node's
    /// subproblem (admissible, in shape, compatible with fixed neurons).
    #[cfg(debug_assertions)]
    fn exact_value_in_node(&self, node: &Node, v: &Vector) -> Option<f64> {
        let n = self.n;
        let x = v.rows(0, n).clone_owned();
        let w = if self.with_w {
            v.rows(n, n).clone_owned()
        } else {
            Vector::zeros(n)
        };
        match self.shape {
            Shape::DeltaV => {
                if w.amax() > self.sys.disturbance_radius(&x)
                    || !self.sys.roi().contains(&x)
                    || inside_open(self.sys.excluded(), &x)
                {
                    return None;
                }
            }
            Shape::Successor => {
                if w.amax() > self.sys.disturbance_radius(&x) {
                    return None;
                }
            }
            Shape::BoundaryNeg => {
                let (fa, fb) = self.facet.as_ref()?;
                if (fa.dot(&x) - fb).abs() > 1e-9 {
                    return None;
                }
            }
        }
        for (ci, input) in self.copy_inputs(&x, &w).iter().enumerate() {
            let trace = self.sys.net().eval_trace(input);
            let mut flat = 0;
            for pre in &trace[..trace.len() - 1] {
                for j in 0..pre.len() {
                    match node.pattern[ci][flat + j] {
                        Some(true) if pre[j] < -1e-9 => return None,
                        Some(false) if pre[j] > 1e-9 => return None,
                        _ => {}
                    }
                }
                flat += pre.len();
            }
        }
        match self.shape {
            Shape::DeltaV => lyapunov::eval_dv(self.cand, self.sys, &x, &w).ok(),
            Shape::Successor => {
                let y = self.sys.nominal(&x) + &w;
                lyapunov::eval_v(self.cand, self.sys, &y).ok()
            }
            Shape::BoundaryNeg => lyapunov::eval_v(self.cand, self.sys, &x).ok().map(|v| -v),
        }
    }

    /// True inputs of each network copy at an exact point, in the same
    /// order the enclosure visits them.
    #[cfg(debug_assertions)]
    fn copy_inputs(&self, x: &Vector, w: &Vector) -> Vec<Vector> {
        let k = self.cand.k();
        let mut inputs = Vec::new();
        match self.shape {
            Shape::DeltaV => {
                let mut cur = x.clone();
                let mut first = None;
                for i in 0..k.max(1) {
                    inputs.push(cur.clone());
                    cur = self.sys.nominal(&cur);
                    if i == 0 {
                        first = Some(cur.clone());
                    }
                }
                let mut cur = first.expect("one state copy") + w;
                for _ in 0..k {
                    inputs.push(cur.clone());
                    cur = self.sys.nominal(&cur);
                }
            }
            Shape::Successor => {
                inputs.push(x.clone());
                let mut cur = self.sys.nominal(x) + w;
                for _ in 0..k {
                    inputs.push(cur.clone());
                    cur = self.sys.nominal(&cur);
                }
            }
            Shape::BoundaryNeg => {
                let mut cur = x.clone();
                for _ in 0..k {
                    inputs.push(cur.clone());
                    cur = self.sys.nominal(&cur);
                }
            }
        }
        inputs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunEnd {
    /// The queue emptied or the mode target was met; the bound is final.
    Closed,
    /// Threshold mode found an exact nonnegative value.
    Violated,
    /// The node cap fired first.
    Capped,
}

struct Run {
    end: RunEnd,
    bound: f64,
    best: f64,
    best_pair: Option<(Vector, Vector)>,
    nodes: u64,
    incumbent_history: Vec<(u64, f64)>,
    ub_history: Vec<f64>,
    log: Vec<String>,
}

struct Engine<'a> {
    prob: Problem<'a>,
    mode: Mode,
    cap: u64,
}

impl Engine<'_> {
    fn run(&self) -> Run {
        let prob = &self.prob;
        let mut heap: BinaryHeap<Open> = BinaryHeap::new();
        let mut next_id = 1u64;
        let mut nodes = 0u64;
        let mut best = f64::NEG_INFINITY;
        let mut best_pair: Option<(Vector, Vector)> = None;
        let mut max_pruned = f64::NEG_INFINITY;
        let mut unresolved = f64::NEG_INFINITY;
        let mut incumbent_history = Vec::new();
        let mut ub_history = Vec::new();
        let mut log = Vec::new();

        for v in prob.seeds() {
            if let Some((val, x, w)) = prob.incumbent(&v) {
                if val > best {
                    best = val;
                    best_pair = Some((x, w));
                    incumbent_history.push((0, val));
                }
            }
        }
        if matches!(self.mode, Mode::Threshold { .. }) && best >= 0.0 {
            return Run {
                end: RunEnd::Violated,
                bound: f64::INFINITY,
                best,
                best_pair,
                nodes,
                incumbent_history,
                ub_history,
                log,
            };
        }

        heap.push(Open(prob.root()));
        let (end, raw_bound) = loop {
            let Some(Open(mut node)) = heap.pop() else {
                break (RunEnd::Closed, max_pruned.max(unresolved));
            };
            let global = node.ub.max(max_pruned).max(unresolved);
            ub_history.push(global);
            match self.mode {
                Mode::Threshold { eps } => {
                    if global <= -eps {
                        break (RunEnd::Closed, global);
                    }
                }
                Mode::Gap { tol } => {
                    if global - best <= tol {
                        break (RunEnd::Closed, global);
                    }
                }
            }
            if nodes >= self.cap {
                break (RunEnd::Capped, global);
            }
            nodes += 1;
            let prune_at = match self.mode {
                Mode::Threshold { eps } => -eps,
                Mode::Gap { .. } => best,
            };
            let Some((raw_ub, plan, cands)) = prob.assess(&mut node, prune_at) else {
                log.push(format!(
                    "{},{},{},{}",
                    node.id,
                    node.depth,
                    f64::NEG_INFINITY,
                    best
                ));
                continue;
            };
            let ub = raw_ub.min(node.ub);
            node.ub = ub;
            for v in &cands {
                if let Some((val, x, w)) = prob.incumbent(v) {
                    if val > best {
                        best = val;
                        best_pair = Some((x, w));
                        incumbent_history.push((node.id, val));
                    }
                }
            }
            log.push(format!("{},{},{},{}", node.id, node.depth, ub, best));
            if matches!(self.mode, Mode::Threshold { .. }) && best >= 0.0 {
                break (RunEnd::Violated, global);
            }
            #[cfg(debug_assertions)]
            prob.spot_check(&node, ub);
            let prune = match self.mode {
                Mode::Threshold { eps } => ub <= -eps,
                Mode::Gap { .. } => ub <= best,
            };
            if prune {
                if ub > max_pruned {
                    max_pruned = ub;
                }
                continue;
            }
            match plan {
                Plan::Neuron { copy, idx } => {
                    for phase in [true, false] {
                        let mut child = node.child(next_id);
                        next_id += 1;
                        child.pattern[copy][idx] = Some(phase);
                        heap.push(Open(child));
                    }
                }
                Plan::Selector { idx } => {
                    for phase in [true, false] {
                        let mut child = node.child(next_id);
                        next_id += 1;
                        if let CompState::Open(sel) = &mut child.comp {
                            sel[idx] = Some(phase);
                        }
                        heap.push(Open(child));
                    }
                }
                Plan::Spatial { dir, lo, hi } => {
                    let mid = 0.5 * (lo + hi);
                    for (cut_lo, cut_hi) in [(lo, mid), (mid, hi)] {
                        let mut child = node.child(next_id);
                        next_id += 1;
                        child.cuts.push(Row {
                            a: dir.clone(),
                            lo: cut_lo,
                            hi: cut_hi,
                        });
                        heap.push(Open(child));
                    }
                }
                Plan::Leaf => {
                    if ub > unresolved {
                        unresolved = ub;
                    }
                }
            }
        };
        Run {
            end,
            bound: raw_bound.max(best),
            best,
            best_pair,
            nodes,
            incumbent_history,
            ub_history,
            log,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errmodel::ErrorBound;
    use crate::geometry::AxisBox;
    use crate::relu::ReluNetwork;
    use crate::testutil::{netted_system, toy_system};
    use crate::Matrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> VerifierConfig {
        VerifierConfig::default()
    }

    #[test]
    fn contraction_is_certified_with_tight_bound() {
        let sys = toy_system(0.5, 0.0);
        let cand = LyapCandidate::identity(0, 2);
        let out = max_dv(&sys, &cand, &quiet()).unwrap();
        let Verdict::Certified { ub } = out.verdict else {
            panic!("expected certification, got {:?}", out.verdict);
        };
        // The difference -0.75 |x|^2 peaks on the excluded-box face.
        assert!(ub >= -0.0075 - 1e-9, "ub = {ub}");
        assert!(ub <= -1e-6);
        assert!(out.nodes < 100);
        let mut grid_max = f64::NEG_INFINITY;
        let m = 400;
        for i in 0..=m {
            for j in 0..=m {
                let x = Vector::from_vec(vec![
                    -1.0 + 2.0 * i as f64 / m as f64,
                    -1.0 + 2.0 * j as f64 / m as f64,
                ]);
                if x.amax() < 0.1 {
                    continue;
                }
                let dv = lyapunov::eval_dv(&cand, &sys, &x, &Vector::zeros(2)).unwrap();
                if dv > grid_max {
                    grid_max = dv;
                }
            }
        }
        assert!(grid_max <= ub + 1e-9, "grid {grid_max} above bound {ub}");
    }

    #[test]
    fn expansion_produces_a_valid_counterexample() {
        let sys = UncertainSystem::new_unchecked(
            Matrix::identity(2, 2) * 2.0,
            ReluNetwork::zero(2, 2),
            ErrorBound::exact(),
            AxisBox::centered(2, 1.0).unwrap().to_polytope(),
            AxisBox::centered(2, 0.1).unwrap(),
        );
        let cand = LyapCandidate::identity(0, 2);
        let out = max_dv(&sys, &cand, &quiet()).unwrap();
        let Verdict::Counterexample(cex) = out.verdict else {
            panic!("expected a counterexample, got {:?}", out.verdict);
        };
        // |2x|^2 - |x|^2 = 3 |x|^2 peaks at the region corner with value 6.
        assert!((cex.dv - 6.0).abs() <= 1e-6, "dv = {}", cex.dv);
        cex.validate(&sys, &cand, 1e-9).unwrap();
    }

    #[test]
    fn netted_systems_agree_with_grid_search() {
        for seed in 0..4u64 {
            let sys = netted_system(200 + seed);
            for k in [0usize, 1] {
                let cand = LyapCandidate::identity(k, 2);
                let out = max_dv(&sys, &cand, &quiet()).unwrap();
                let mut grid_max = f64::NEG_INFINITY;
                let m = 120;
                for i in 0..=m {
                    for j in 0..=m {
                        let x = Vector::from_vec(vec![
                            -1.0 + 2.0 * i as f64 / m as f64,
                            -1.0 + 2.0 * j as f64 / m as f64,
                        ]);
                        if x.amax() < 0.1 {
                            continue;
                        }
                        let dv =
                            lyapunov::eval_dv(&cand, &sys, &x, &Vector::zeros(2)).unwrap();
                        if dv > grid_max {
                            grid_max = dv;
                        }
                    }
                }
                match out.verdict {
                    Verdict::Certified { ub } => {
                        assert!(
                            grid_max <= ub + 1e-7,
                            "seed {seed} k {k}: grid {grid_max} above certified {ub}"
                        );
                    }
                    Verdict::Counterexample(cex) => {
                        cex.validate(&sys, &cand, 1e-9).unwrap();
                        assert!(cex.dv >= 0.0);
                        assert!(
                            grid_max >= -0.05,
                            "seed {seed} k {k}: counterexample on a clearly decreasing system"
                        );
                    }
                    Verdict::Indeterminate { ub, best } => {
                        panic!("seed {seed} k {k}: budget exceeded (ub {ub}, best {best})")
                    }
                }
            }
        }
    }

    #[test]
    fn gap_bound_on_contraction_closes() {
        let sys = toy_system(0.5, 0.0);
        let cand = LyapCandidate::identity(0, 2);
        let (bound, attained) = max_dv_bound(&sys, &cand, &quiet()).unwrap();
        assert!((bound + 0.0075).abs() <= 1e-6, "bound = {bound}");
        assert!((attained + 0.0075).abs() <= 1e-6, "attained = {attained}");
        assert!(bound >= attained - 1e-12);
    }

    #[test]
    fn bounds_dominate_random_feasible_pairs() {
        let cases: [(UncertainSystem, u64); 2] =
            [(toy_system(0.5, 0.02), 61), (netted_system(7), 62)];
        for (sys, rng_seed) in cases {
            let cand = LyapCandidate::identity(0, 2);
            let (bound, _) = max_dv_bound(&sys, &cand, &quiet()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let bb = sys.roi().bounding_box().unwrap();
            let mut checked = 0;
            while checked < 20_000 {
                let x = bb.sample(&mut rng);
                if !sys.roi().contains(&x) || inside_open(sys.excluded(), &x) {
                    continue;
                }
                let r = sys.disturbance_radius(&x);
                let w = if r > 0.0 {
                    Vector::from_fn(2, |_, _| rng.random_range(-r..=r))
                } else {
                    Vector::zeros(2)
                };
                let dv = lyapunov::eval_dv(&cand, &sys, &x, &w).unwrap();
                assert!(dv <= bound + 1e-7, "dv {dv} above bound {bound} at {x:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn successor_level_bound_examples() {
        let cand = LyapCandidate::identity(0, 2);
        let b = AxisBox::centered(2, 0.1).unwrap();

        // Everything maps to the origin: the successor value is zero.
        let sys = toy_system(0.0, 0.0);
        let lb = max_v_successor(&sys, &cand, &b, &quiet()).unwrap();
        assert!(lb.bound >= 0.0 && lb.bound <= 1e-6, "bound = {}", lb.bound);
        assert!(lb.converged);

        // Contraction plus disturbance peaks at the corner successor
        // (0.06, 0.06) with squared norm 0.0072.
        let sys = toy_system(0.5, 0.01);
        let lb = max_v_successor(&sys, &cand, &b, &quiet()).unwrap();
        assert!(lb.bound >= 0.0072 - 1e-9, "bound = {}", lb.bound);
        assert!(lb.bound <= 0.0072 + 1e-4, "bound = {}", lb.bound);
        assert!((lb.attained - 0.0072).abs() <= 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10_000 {
            let x = b.sample(&mut rng);
            let w = Vector::from_fn(2, |_, _| rng.random_range(-0.01..=0.01));
            let y = sys.nominal(&x) + w;
            let v = lyapunov::eval_v(&cand, &sys, &y).unwrap();
            assert!(v <= lb.bound + 1e-9);
        }
    }

    #[test]
    fn boundary_minimum_examples() {
        let sys = toy_system(0.5, 0.0);
        let region = AxisBox::centered(2, 1.0).unwrap().to_polytope();

        let cand = LyapCandidate::identity(0, 2);
        let lb = min_v_boundary(&sys, &cand, &region, &quiet()).unwrap();
        assert!((lb.bound - 1.0).abs() <= 1e-6, "bound = {}", lb.bound);
        assert!((lb.attained - 1.0).abs() <= 1e-6);
        assert!(lb.converged);

        // Anisotropic values: the facet minima are 1 (at (1, 0)) and 4, so
        // the boundary minimum stays 1.
        let skew =
            LyapCandidate::new(0, Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0])).unwrap();
        let lb = min_v_boundary(&sys, &skew, &region, &quiet()).unwrap();
        assert!((lb.bound - 1.0).abs() <= 1e-6, "bound = {}", lb.bound);
        for t in 0..=100 {
            let s = -1.0 + 2.0 * t as f64 / 100.0;
            for x in [
                Vector::from_vec(vec![1.0, s]),
                Vector::from_vec(vec![-1.0, s]),
                Vector::from_vec(vec![s, 1.0]),
                Vector::from_vec(vec![s, -1.0]),
            ] {
                let v = lyapunov::eval_v(&skew, &sys, &x).unwrap();
                assert!(v >= lb.bound - 1e-9);
            }
        }
    }

    #[test]
    fn histories_are_monotone_under_small_budget() {
        let sys = netted_system(11);
        let cand = LyapCandidate::identity(1, 2);
        let mut cfg = quiet();
        cfg.node_cap = 40;
        let out = max_dv(&sys, &cand, &cfg).unwrap();
        assert!(!out.ub_history.is_empty());
        for pair in out.ub_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "upper bound increased");
        }
        for pair in out.incumbent_history.windows(2) {
            assert!(pair[1].1 > pair[0].1, "incumbent did not improve");
        }
        assert!(out.nodes <= 40);
    }

    #[test]
    fn node_log_csv_is_written() {
        let dir = std::env::temp_dir().join("roacert-verifier-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("nodes.csv");
        let sys = toy_system(0.5, 0.0);
        let cand = LyapCandidate::identity(0, 2);
        let mut cfg = quiet();
        cfg.node_log = Some(path.clone());
        max_dv(&sys, &cand, &cfg).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("node,depth,ub,incumbent"));
        assert!(lines.next().is_some(), "log has no data lines");
    }

    #[test]
    fn counterexample_json_shape_and_roundtrip() {
        let cex = Counterexample {
            x: vec![0.5, -0.25],
            w: vec![0.01, 0.0],
            dv: 0.125,
        };
        let text = cex.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = value.as_object().unwrap();
        assert_eq!(obj.len(), 3);
        assert!(obj.contains_key("x"));
        assert!(obj.contains_key("w"));
        assert!(obj.contains_key("dV"));
        let back = Counterexample::from_json(&text).unwrap();
        assert_eq!(back, cex);
        let dir = std::env::temp_dir().join("roacert-verifier-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cex.json");
        cex.save(&path).unwrap();
        assert_eq!(Counterexample::load(&path).unwrap(), cex);
    }

    #[test]
    fn determinism_across_repeated_runs() {
        let sys = netted_system(13);
        let cand = LyapCandidate::identity(0, 2);
        let out1 = max_dv(&sys, &cand, &quiet()).unwrap();
        let out2 = max_dv(&sys, &cand, &quiet()).unwrap();
        assert_eq!(out1.verdict, out2.verdict);
        assert_eq!(out1.nodes, out2.nodes);
        assert_eq!(out1.ub_history, out2.ub_history);
        assert_eq!(out1.incumbent_history, out2.incumbent_history);
    }
}

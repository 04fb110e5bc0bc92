//! Exact mixed-integer linear encoding of the verification feasible set.
//!
//! The encoding describes `{(x, w) : x in X \ int(B), |w|_inf <= bound(x)}`
//! together with the network copies that define the basis chains.  Every
//! unstable hidden neuron contributes one binary and four big-M rows; stable
//! neurons are folded into equalities.  The complement of the excluded box
//! is selected by one binary per facet with at least one set, and the
//! infinity norm entering the disturbance bound is pinned by signed selector
//! binaries.  The branch-and-bound engine works on interval relaxations of
//! the same data; this module is the reference description used to validate
//! it.

use crate::dynamics::UncertainSystem;
use crate::error::Error;
use crate::geometry::AxisBox;
use crate::lyapunov::LyapCandidate;
use crate::relu::{ActivationBounds, NeuronStatus};
use crate::{Matrix, Result, Vector};

/// Sparse linear row `lo <= sum coeffs . vars <= hi`.  Indices below the
/// continuous count refer to continuous variables, the rest to binaries.
#[derive(Debug, Clone)]
pub struct EncRow {
    pub coeffs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

/// What a binary variable selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    /// Activation of one unstable hidden neuron in one network copy.
    Neuron {
        copy: usize,
        layer: usize,
        index: usize,
    },
    /// Escape through one facet of the excluded box (`upper` for the
    /// `x_c >= hi_c` side).
    ComplementFacet { coord: usize, upper: bool },
    /// Coordinate and sign attaining the infinity norm of the state.
    NormSelector { coord: usize, upper: bool },
}

/// One network copy: where its input lives and where its hidden
/// post-activation variables start, plus the interval bounds that sized the
/// big-M constants.
#[derive(Debug)]
struct CopyVars {
    input_off: usize,
    hidden_off: Vec<usize>,
    binary_idx: Vec<Vec<Option<usize>>>,
    bounds: ActivationBounds,
}

/// Complete assignment: continuous values followed by binary values.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub values: Vec<f64>,
    pub binaries: Vec<bool>,
}

/// Mixed-integer linear encoding of the robust difference constraint system.
#[derive(Debug)]
pub struct MilEncoding {
    n: usize,
    k: usize,
    num_continuous: usize,
    var_lo: Vec<f64>,
    var_hi: Vec<f64>,
    rows: Vec<EncRow>,
    binaries: Vec<BinaryKind>,
    x_off: usize,
    w_off: Option<usize>,
    nu_off: Option<usize>,
    y_off: usize,
    chain_x: Vec<usize>,
    chain_y: Vec<usize>,
    copies: Vec<CopyVars>,
}

/// Interval image of `a u + add` for `u` in `bx`.
fn affine_image(a: &Matrix, bx: &AxisBox, add_lo: &Vector, add_hi: &Vector) -> Result<AxisBox> {
    let c = (bx.lo() + bx.hi()) * 0.5;
    let r = (bx.hi() - bx.lo()) * 0.5;
    let c2 = a * c;
    let r2 = a.abs() * r;
    AxisBox::new(&c2 - &r2 + add_lo, c2 + r2 + add_hi)
}

struct Builder {
    var_lo: Vec<f64>,
    var_hi: Vec<f64>,
    rows: Vec<EncRow>,
    binaries: Vec<BinaryKind>,
}

impl Builder {
    fn alloc(&mut self, count: usize, lo: f64, hi: f64) -> usize {
        let off = self.var_lo.len();
        self.var_lo.extend(std::iter::repeat_n(lo, count));
        self.var_hi.extend(std::iter::repeat_n(hi, count));
        off
    }

    fn alloc_box(&mut self, bx: &AxisBox) -> usize {
        let off = self.var_lo.len();
        for i in 0..bx.dim() {
            self.var_lo.push(bx.lo()[i]);
            self.var_hi.push(bx.hi()[i]);
        }
        off
    }
}

impl MilEncoding {
    /// Builds the encoding for the one-step difference problem of `sys` at
    /// basis order `cand.k()`.  Pre-activation bounds come from interval
    /// propagation: the state chain starts from the region bounding box and
    /// the successor chain is widened by the disturbance bound.
    pub fn build(sys: &UncertainSystem, cand: &LyapCandidate) -> Result<MilEncoding> {
        let n = sys.dim();
        if cand.state_dim() != n {
            return Err(Error::dim(n, cand.state_dim(), "candidate state dimension"));
        }
        let k = cand.k();
        let net = sys.net();
        let roi_box = sys.roi().bounding_box()?;
        let nu_max = (0..n).fold(0.0f64, |m, i| {
            m.max(roi_box.lo()[i].abs()).max(roi_box.hi()[i].abs())
        });
        let r_max = sys.error_bound().eval_at_norm(nu_max);
        let with_w = r_max > 0.0;
        let need_nu = with_w
            && sys
                .error_bound()
                .pieces()
                .iter()
                .any(|p| p.gamma > 0.0);

        // Interval boxes along both chains size every big-M constant.
        let x_copies = k.max(1);
        let mut chi_boxes = vec![roi_box.clone()];
        let mut copy_bounds = Vec::new();
        for i in 0..x_copies {
            let ab = net.interval_bounds(&chi_boxes[i])?;
            let (out_lo, out_hi) = {
                let (lo, hi) = ab.output();
                (lo.clone(), hi.clone())
            };
            chi_boxes.push(affine_image(sys.a(), &chi_boxes[i], &out_lo, &out_hi)?);
            copy_bounds.push(ab);
        }
        let widen = Vector::from_element(n, r_max);
        let y_box = AxisBox::new(chi_boxes[1].lo() - &widen, chi_boxes[1].hi() + &widen)?;
        let mut psi_boxes = vec![y_box.clone()];
        for j in 0..k {
            let ab = net.interval_bounds(&psi_boxes[j])?;
            let (out_lo, out_hi) = {
                let (lo, hi) = ab.output();
                (lo.clone(), hi.clone())
            };
            psi_boxes.push(affine_image(sys.a(), &psi_boxes[j], &out_lo, &out_hi)?);
            copy_bounds.push(ab);
        }
        for ab in &copy_bounds {
            for l in 0..ab.num_layers() {
                let (lo, hi) = ab.layer(l);
                for i in 0..lo.len() {
                    if lo[i] > hi[i] {
                        return Err(Error::invalid("pre-activation lower bound above upper"));
                    }
                    if !lo[i].is_finite() || !hi[i].is_finite() {
                        return Err(Error::invalid("unbounded big-M constant"));
                    }
                }
            }
        }

        let mut b = Builder {
            var_lo: Vec::new(),
            var_hi: Vec::new(),
            rows: Vec::new(),
            binaries: Vec::new(),
        };
        let x_off = b.alloc_box(&roi_box);
        let w_off = with_w.then(|| b.alloc(n, -r_max, r_max));
        let nu_off = need_nu.then(|| b.alloc(1, 0.0, nu_max));
        let chain_x: Vec<usize> = (1..=x_copies).map(|i| b.alloc_box(&chi_boxes[i])).collect();
        let y_off = b.alloc_box(&y_box);
        let chain_y: Vec<usize> = (1..=k).map(|j| b.alloc_box(&psi_boxes[j])).collect();

        // Network binaries first, in copy order, so the binary list mirrors
        // the branch order of the solver.
        let mut copies = Vec::new();
        for (ci, ab) in copy_bounds.iter().enumerate() {
            let statuses = ab.statuses();
            let mut binary_idx = Vec::new();
            for layer_status in &statuses {
                let mut layer_idx = Vec::new();
                for (j, st) in layer_status.iter().enumerate() {
                    if *st == NeuronStatus::Unstable {
                        let bi = b.binaries.len();
                        b.binaries.push(BinaryKind::Neuron {
                            copy: ci,
                            layer: binary_idx.len(),
                            index: j,
                        });
                        layer_idx.push(Some(bi));
                    } else {
                        layer_idx.push(None);
                    }
                }
                binary_idx.push(layer_idx);
            }
            let input_off = if ci < x_copies {
                if ci == 0 { x_off } else { chain_x[ci - 1] }
            } else if ci == x_copies {
                y_off
            } else {
                chain_y[ci - x_copies - 1]
            };
            copies.push(CopyVars {
                input_off,
                hidden_off: Vec::new(),
                binary_idx,
                bounds: ab.clone(),
            });
        }
        let comp_bin_off = b.binaries.len();
        for c in 0..n {
            b.binaries.push(BinaryKind::ComplementFacet { coord: c, upper: true });
            b.binaries.push(BinaryKind::ComplementFacet { coord: c, upper: false });
        }
        let norm_bin_off = b.binaries.len();
        if need_nu {
            for c in 0..n {
                b.binaries.push(BinaryKind::NormSelector { coord: c, upper: true });
                b.binaries.push(BinaryKind::NormSelector { coord: c, upper: false });
            }
        }

        // Hidden post-activation variables and the four-inequality blocks.
        for ci in 0..copies.len() {
            let mut cur_in = copies[ci].input_off;
            let mut cur_width = n;
            let hidden = copies[ci].bounds.num_layers() - 1;
            for l in 0..hidden {
                let (m_lo, m_hi) = {
                    let (lo, hi) = copies[ci].bounds.layer(l);
                    (lo.clone(), hi.clone())
                };
                let width = m_lo.len();
                let z_off = b.var_lo.len();
                for j in 0..width {
                    b.var_lo.push(0.0);
                    b.var_hi.push(m_hi[j].max(0.0));
                }
                copies[ci].hidden_off.push(z_off);
                let layer = &sys.net().layers()[l];
                for j in 0..width {
                    let mut base: Vec<(usize, f64)> = vec![(z_off + j, 1.0)];
                    for r in 0..cur_width {
                        let wv = layer.weight[(j, r)];
                        if wv != 0.0 {
                            base.push((cur_in + r, -wv));
                        }
                    }
                    match copies[ci].binary_idx[l][j] {
                        None => {
                            let st = classify(m_lo[j], m_hi[j]);
                            match st {
                                NeuronStatus::Active => {
                                    // z = pre
                                    b.rows.push(EncRow {
                                        coeffs: base,
                                        lo: layer.bias[j],
                                        hi: layer.bias[j],
                                    });
                                }
                                NeuronStatus::Inactive => {
                                    b.var_hi[z_off + j] = 0.0;
                                }
                                NeuronStatus::Unstable => unreachable!(),
                            }
                        }
                        Some(bi) => {
                            let t = num_continuous_placeholder(bi);
                            // z >= pre
                            b.rows.push(EncRow {
                                coeffs: base.clone(),
                                lo: layer.bias[j],
                                hi: f64::INFINITY,
                            });
                            // z <= pre - m_lo (1 - t)
                            let mut row = base.clone();
                            row.push((t, -m_lo[j]));
                            b.rows.push(EncRow {
                                coeffs: row,
                                lo: f64::NEG_INFINITY,
                                hi: layer.bias[j] - m_lo[j],
                            });
                            // z <= m_hi t
                            b.rows.push(EncRow {
                                coeffs: vec![(z_off + j, 1.0), (t, -m_hi[j])],
                                lo: f64::NEG_INFINITY,
                                hi: 0.0,
                            });
                        }
                    }
                }
                cur_in = z_off;
                cur_width = width;
            }
        }

        // Chain equalities: state_next = A state + net output.
        let last_layer = net.layers().last().expect("network has layers");
        let chain_rows = |state_off: usize, next_off: usize, copy: &CopyVars, b: &mut Builder| {
            let z_last = *copy.hidden_off.last().unwrap_or(&copy.input_off);
            let z_width = if copy.hidden_off.is_empty() {
                n
            } else {
                last_layer.weight.ncols()
            };
            for c in 0..n {
                let mut coeffs = vec![(next_off + c, 1.0)];
                for r in 0..n {
                    let av = sys.a()[(c, r)];
                    if av != 0.0 {
                        coeffs.push((state_off + r, -av));
                    }
                }
                for r in 0..z_width {
                    let wv = last_layer.weight[(c, r)];
                    if wv != 0.0 {
                        coeffs.push((z_last + r, -wv));
                    }
                }
                b.rows.push(EncRow {
                    coeffs,
                    lo: last_layer.bias[c],
                    hi: last_layer.bias[c],
                });
            }
        };
        for i in 0..x_copies {
            let state_off = if i == 0 { x_off } else { chain_x[i - 1] };
            chain_rows(state_off, chain_x[i], &copies[i], &mut b);
        }
        // y = chi_1 + w.
        for c in 0..n {
            let mut coeffs = vec![(y_off + c, 1.0), (chain_x[0] + c, -1.0)];
            if let Some(w) = w_off {
                coeffs.push((w + c, -1.0));
            }
            b.rows.push(EncRow {
                coeffs,
                lo: 0.0,
                hi: 0.0,
            });
        }
        for j in 0..k {
            let state_off = if j == 0 { y_off } else { chain_y[j - 1] };
            chain_rows(state_off, chain_y[j], &copies[x_copies + j], &mut b);
        }

        let num_continuous = b.var_lo.len();
        // Rewrite binary indices now that the continuous count is final.
        for row in &mut b.rows {
            for (idx, _) in &mut row.coeffs {
                if *idx >= PLACEHOLDER {
                    *idx = num_continuous + (*idx - PLACEHOLDER);
                }
            }
        }

        // Region polytope rows.
        let (ra, rb) = (sys.roi().a(), sys.roi().b());
        for fi in 0..sys.roi().num_facets() {
            let mut coeffs = Vec::new();
            for c in 0..n {
                let v = ra[(fi, c)];
                if v != 0.0 {
                    coeffs.push((x_off + c, v));
                }
            }
            b.rows.push(EncRow {
                coeffs,
                lo: f64::NEG_INFINITY,
                hi: rb[fi],
            });
        }

        // Complement of the excluded box: one facet must be violated.
        let bx = sys.excluded();
        let mut sum_row = Vec::new();
        for c in 0..n {
            let s_hi = num_continuous + comp_bin_off + 2 * c;
            let s_lo = s_hi + 1;
            sum_row.push((s_hi, 1.0));
            sum_row.push((s_lo, 1.0));
            // upper: x_c >= X_lo + (B_hi - X_lo) s
            b.rows.push(EncRow {
                coeffs: vec![(x_off + c, 1.0), (s_hi, -(bx.hi()[c] - roi_box.lo()[c]))],
                lo: roi_box.lo()[c],
                hi: f64::INFINITY,
            });
            // lower: x_c <= X_hi - (X_hi - B_lo) s
            b.rows.push(EncRow {
                coeffs: vec![(x_off + c, 1.0), (s_lo, roi_box.hi()[c] - bx.lo()[c])],
                lo: f64::NEG_INFINITY,
                hi: roi_box.hi()[c],
            });
        }
        b.rows.push(EncRow {
            coeffs: sum_row,
            lo: 1.0,
            hi: f64::INFINITY,
        });

        // Infinity norm gadget and disturbance bound rows.
        if let Some(nu) = nu_off {
            let big_m = 2.0 * nu_max;
            let mut sum_row = Vec::new();
            for c in 0..n {
                b.rows.push(EncRow {
                    coeffs: vec![(nu, 1.0), (x_off + c, -1.0)],
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
                b.rows.push(EncRow {
                    coeffs: vec![(nu, 1.0), (x_off + c, 1.0)],
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
                let sel_hi = num_continuous + norm_bin_off + 2 * c;
                let sel_lo = sel_hi + 1;
                sum_row.push((sel_hi, 1.0));
                sum_row.push((sel_lo, 1.0));
                // nu <= +-x_c + M (1 - sel)
                b.rows.push(EncRow {
                    coeffs: vec![(nu, 1.0), (x_off + c, -1.0), (sel_hi, big_m)],
                    lo: f64::NEG_INFINITY,
                    hi: big_m,
                });
                b.rows.push(EncRow {
                    coeffs: vec![(nu, 1.0), (x_off + c, 1.0), (sel_lo, big_m)],
                    lo: f64::NEG_INFINITY,
                    hi: big_m,
                });
            }
            b.rows.push(EncRow {
                coeffs: sum_row,
                lo: 1.0,
                hi: 1.0,
            });
        }
        if let Some(w) = w_off {
            for piece in sys.error_bound().pieces() {
                for c in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut coeffs = vec![(w + c, sign)];
                        if piece.gamma > 0.0 {
                            let nu = nu_off.expect("norm variable present");
                            coeffs.push((nu, -piece.gamma));
                        }
                        b.rows.push(EncRow {
                            coeffs,
                            lo: f64::NEG_INFINITY,
                            hi: piece.delta,
                        });
                    }
                }
            }
        }

        Ok(MilEncoding {
            n,
            k,
            num_continuous,
            var_lo: b.var_lo,
            var_hi: b.var_hi,
            rows: b.rows,
            binaries: b.binaries,
            x_off,
            w_off,
            nu_off,
            y_off,
            chain_x,
            chain_y,
            copies,
        })
    }

    pub fn num_continuous(&self) -> usize {
        self.num_continuous
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries.len()
    }

    pub fn binaries(&self) -> &[BinaryKind] {
        &self.binaries
    }

    pub fn num_network_binaries(&self) -> usize {
        self.binaries
            .iter()
            .filter(|b| matches!(b, BinaryKind::Neuron { .. }))
            .count()
    }

    pub fn rows(&self) -> &[EncRow] {
        &self.rows
    }

    /// Checks an assignment against every variable bound and row, with an
    /// absolute-plus-relative tolerance.
    pub fn check(&self, asg: &Assignment, tol: f64) -> bool {
        if asg.values.len() != self.num_continuous || asg.binaries.len() != self.binaries.len() {
            return false;
        }
        for i in 0..self.num_continuous {
            let v = asg.values[i];
            if !v.is_finite() {
                return false;
            }
            let slack = tol * (1.0 + self.var_lo[i].abs().max(self.var_hi[i].abs()));
            if v < self.var_lo[i] - slack || v > self.var_hi[i] + slack {
                return false;
            }
        }
        let full = |idx: usize| -> f64 {
            if idx < self.num_continuous {
                asg.values[idx]
            } else if asg.binaries[idx - self.num_continuous] {
                1.0
            } else {
                0.0
            }
        };
        for row in &self.rows {
            let act: f64 = row.coeffs.iter().map(|&(i, a)| a * full(i)).sum();
            let scale = 1.0 + row.lo.abs().min(row.hi.abs()).min(1e12) + act.abs();
            if act < row.lo - tol * scale || act > row.hi + tol * scale {
                return false;
            }
        }
        true
    }

    /// The assignment induced by the true forward pass at `(x, w)`.  Errors
    /// when the pair is infeasible: outside the region, inside the interior
    /// of the excluded box, or with a disturbance above the bound.
    pub fn assignment_for(&self, sys: &UncertainSystem, x: &Vector, w: &Vector) -> Result<Assignment> {
        let n = self.n;
        if x.len() != n || w.len() != n {
            return Err(Error::dim(n, x.len(), "assignment input"));
        }
        if !sys.roi().contains(x) {
            return Err(Error::invalid("state outside the region"));
        }
        let bx = sys.excluded();
        let escape = (0..n).fold(f64::NEG_INFINITY, |m, c| {
            m.max(x[c] - bx.hi()[c]).max(bx.lo()[c] - x[c])
        });
        if escape < 0.0 {
            return Err(Error::invalid("state strictly inside the excluded box"));
        }
        let radius = sys.disturbance_radius(x);
        if w.amax() > radius + 1e-12 {
            return Err(Error::invalid("disturbance above the bound"));
        }
        if self.w_off.is_none() && w.amax() > 1e-12 {
            return Err(Error::invalid("nonzero disturbance on an exact system"));
        }

        let mut values = vec![0.0; self.num_continuous];
        let mut binaries = vec![false; self.binaries.len()];
        for c in 0..n {
            values[self.x_off + c] = x[c];
        }
        if let Some(off) = self.w_off {
            for c in 0..n {
                values[off + c] = w[c];
            }
        }
        if let Some(nu) = self.nu_off {
            values[nu] = x.amax();
        }

        // Chains and copies through the true network.
        let x_copies = self.k.max(1);
        let mut state = x.clone();
        for i in 0..x_copies {
            let next = self.fill_copy(sys, i, &state, &mut values, &mut binaries);
            for c in 0..n {
                values[self.chain_x[i] + c] = next[c];
            }
            state = next;
        }
        let mut y = Vector::zeros(n);
        for c in 0..n {
            y[c] = values[self.chain_x[0] + c] + w[c];
            values[self.y_off + c] = y[c];
        }
        let mut state = y;
        for j in 0..self.k {
            let next = self.fill_copy(sys, x_copies + j, &state, &mut values, &mut binaries);
            for c in 0..n {
                values[self.chain_y[j] + c] = next[c];
            }
            state = next;
        }

        // Complement selector: the facet with the largest escape margin.
        let mut best = (0usize, f64::NEG_INFINITY);
        for c in 0..n {
            let up = x[c] - bx.hi()[c];
            let dn = bx.lo()[c] - x[c];
            if up > best.1 {
                best = (2 * c, up);
            }
            if dn > best.1 {
                best = (2 * c + 1, dn);
            }
        }
        let comp_off = self
            .binaries
            .iter()
            .position(|b| matches!(b, BinaryKind::ComplementFacet { .. }))
            .expect("complement binaries present");
        binaries[comp_off + best.0] = true;

        if self.nu_off.is_some() {
            let norm_off = self
                .binaries
                .iter()
                .position(|b| matches!(b, BinaryKind::NormSelector { .. }))
                .expect("norm binaries present");
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..n {
                if x[c] > best.1 {
                    best = (2 * c, x[c]);
                }
                if -x[c] > best.1 {
                    best = (2 * c + 1, -x[c]);
                }
            }
            binaries[norm_off + best.0] = true;
        }
        Ok(Assignment { values, binaries })
    }

    /// Forward pass of copy `ci` at `input`, filling hidden variables and
    /// neuron binaries; returns `A input + net(input)`.
    fn fill_copy(
        &self,
        sys: &UncertainSystem,
        ci: usize,
        input: &Vector,
        values: &mut [f64],
        binaries: &mut [bool],
    ) -> Vector {
        let copy = &self.copies[ci];
        let trace = sys.net().eval_trace(input);
        let hidden = copy.hidden_off.len();
        for l in 0..hidden {
            let pre = &trace[l];
            for j in 0..pre.len() {
                let post = pre[j].max(0.0);
                values[copy.hidden_off[l] + j] = post;
                if let Some(bi) = copy.binary_idx[l][j] {
                    binaries[bi] = pre[j] >= 0.0;
                }
            }
        }
        sys.a() * input + trace.last().expect("network output")
    }

    /// Whether some binary assignment completes `(x, w)` to a feasible point.
    /// All binary combinations are enumerated, with the continuous variables
    /// forced by the chosen patterns, so this is exponential and meant for
    /// tiny instances.
    pub fn feasible(&self, sys: &UncertainSystem, x: &Vector, w: &Vector, tol: f64) -> Result<bool> {
        let nb = self.binaries.len();
        if nb > 22 {
            return Err(Error::invalid("too many binaries to enumerate"));
        }
        let n = self.n;
        let mut values = vec![0.0; self.num_continuous];
        for c in 0..n {
            values[self.x_off + c] = x[c];
        }
        if let Some(off) = self.w_off {
            for c in 0..n {
                values[off + c] = w[c];
            }
        }
        if let Some(nu) = self.nu_off {
            values[nu] = x.amax();
        }
        for mask in 0u64..(1u64 << nb) {
            let binaries: Vec<bool> = (0..nb).map(|i| mask >> i & 1 == 1).collect();
            // Force every copy with the selected patterns.
            let x_copies = self.k.max(1);
            let mut state = x.clone();
            let mut vals = values.clone();
            for i in 0..x_copies {
                state = self.force_copy(sys, i, &state, &binaries, &mut vals);
                for c in 0..n {
                    vals[self.chain_x[i] + c] = state[c];
                }
            }
            let mut y = Vector::zeros(n);
            for c in 0..n {
                y[c] = vals[self.chain_x[0] + c] + w.get(c).copied().unwrap_or(0.0);
                vals[self.y_off + c] = y[c];
            }
            let mut state = y;
            for j in 0..self.k {
                state = self.force_copy(sys, x_copies + j, &state, &binaries, &mut vals);
                for c in 0..n {
                    vals[self.chain_y[j] + c] = state[c];
                }
            }
            let asg = Assignment {
                values: vals,
                binaries,
            };
            if self.check(&asg, tol) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Pattern-forced forward pass: unstable neurons follow their binary,
    /// stable neurons their interval status.
    fn force_copy(
        &self,
        sys: &UncertainSystem,
        ci: usize,
        input: &Vector,
        binaries: &[bool],
        values: &mut [f64],
    ) -> Vector {
        let copy = &self.copies[ci];
        let net = sys.net();
        let mut cur = input.clone();
        let hidden = copy.hidden_off.len();
        for l in 0..hidden {
            let layer = &net.layers()[l];
            let pre = &layer.weight * &cur + &layer.bias;
            let mut post = Vector::zeros(pre.len());
            for j in 0..pre.len() {
                let on = match copy.binary_idx[l][j] {
                    Some(bi) => binaries[bi],
                    None => {
                        let (lo, hi) = copy.bounds.layer(l);
                        classify(lo[j], hi[j]) == NeuronStatus::Active
                    }
                };
                post[j] = if on { pre[j] } else { 0.0 };
                values[copy.hidden_off[l] + j] = post[j];
            }
            cur = post;
        }
        let last = net.layers().last().expect("network output layer");
        sys.a() * input + &last.weight * cur + &last.bias
    }
}

fn classify(lo: f64, hi: f64) -> NeuronStatus {
    crate::relu::classify_neuron(lo, hi)
}

/// Binary indices are recorded against this placeholder while the continuous
/// count is still growing, then rebased.
const PLACEHOLDER: usize = usize::MAX / 2;

fn num_continuous_placeholder(binary: usize) -> usize {
    PLACEHOLDER + binary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errmodel::{ErrorBound, ErrorPiece, Provenance};
    use crate::geometry::AxisBox;
    use crate::relu::{Layer, ReluNetwork};
    use crate::testutil::random_net;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scaled_net(arch: &[usize], seed: u64, scale: f64) -> ReluNetwork {
        let base = random_net(arch, seed);
        let layers: Vec<_> = base
            .layers()
            .iter()
            .map(|l| Layer::new(l.weight.clone() * scale, l.bias.clone() * scale).unwrap())
            .collect();
        ReluNetwork::new(layers).unwrap()
    }

    fn exact_system(seed: u64) -> UncertainSystem {
        UncertainSystem::new(
            Matrix::identity(2, 2) * 0.5,
            scaled_net(&[2, 4, 2], seed, 0.3),
            ErrorBound::exact(),
            AxisBox::centered(2, 1.0).unwrap().to_polytope(),
            AxisBox::centered(2, 0.1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn forward_assignments_satisfy_all_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [0usize, 1] {
            let sys = exact_system(50 + k as u64);
            let cand = LyapCandidate::identity(k, 2);
            let enc = MilEncoding::build(&sys, &cand).unwrap();
            let mut checked = 0;
            while checked < 1000 {
                let x = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                if x.amax() < 0.1 {
                    continue;
                }
                let w = Vector::zeros(2);
                let asg = enc.assignment_for(&sys, &x, &w).unwrap();
                assert!(enc.check(&asg, 1e-9));
                checked += 1;
            }
        }
    }

    #[test]
    fn flipped_neuron_binary_is_rejected() {
        let sys = exact_system(51);
        let cand = LyapCandidate::identity(1, 2);
        let enc = MilEncoding::build(&sys, &cand).unwrap();
        let x = Vector::from_vec(vec![0.7, -0.4]);
        let w = Vector::zeros(2);
        let asg = enc.assignment_for(&sys, &x, &w).unwrap();
        assert!(enc.check(&asg, 1e-9));
        // Flipping a neuron binary breaks one of the four inequalities as
        // long as the pre-activation is not exactly zero.
        let mut flipped = 0;
        for bi in 0..enc.num_binaries() {
            if !matches!(enc.binaries()[bi], BinaryKind::Neuron { .. }) {
                continue;
            }
            let mut bad = asg.clone();
            bad.binaries[bi] = !bad.binaries[bi];
            if !enc.check(&bad, 1e-9) {
                flipped += 1;
            }
        }
        assert!(flipped > 0);
    }

    /// Network with exactly four unstable neurons over the unit box.
    fn tiny_unstable_system() -> UncertainSystem {
        let net = ReluNetwork::new(vec![
            Layer::new(
                Matrix::from_row_slice(4, 2, &[0.3, 0.0, 0.0, 0.3, 0.2, 0.2, 0.2, -0.2]),
                Vector::from_vec(vec![0.05, -0.05, 0.1, -0.1]),
            )
            .unwrap(),
            Layer::new(
                Matrix::from_row_slice(2, 4, &[0.2, -0.1, 0.1, 0.0, 0.0, 0.2, -0.1, 0.1]),
                Vector::from_vec(vec![0.0, 0.0]),
            )
            .unwrap(),
        ])
        .unwrap();
        UncertainSystem::new(
            Matrix::identity(2, 2) * 0.5,
            net,
            ErrorBound::exact(),
            AxisBox::centered(2, 1.0).unwrap().to_polytope(),
            AxisBox::centered(2, 0.1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn tiny_net_projection_matches_brute_force() {
        let sys = tiny_unstable_system();
        let cand = LyapCandidate::identity(0, 2);
        let enc = MilEncoding::build(&sys, &cand).unwrap();
        assert_eq!(enc.num_network_binaries(), 4);
        assert_eq!(enc.num_binaries(), 8);
        let w = Vector::zeros(2);
        let bx = sys.excluded();
        let m = 41;
        for i in 0..m {
            for j in 0..m {
                let x = Vector::from_vec(vec![
                    -1.1 + 2.2 * i as f64 / (m - 1) as f64,
                    -1.1 + 2.2 * j as f64 / (m - 1) as f64,
                ]);
                // Signed margin of the true feasible region.
                let inside_roi = (0..2).fold(f64::INFINITY, |acc, c| {
                    acc.min(1.0 - x[c].abs())
                });
                let escape = (0..2).fold(f64::NEG_INFINITY, |acc, c| {
                    acc.max(x[c] - bx.hi()[c]).max(bx.lo()[c] - x[c])
                });
                let margin = inside_roi.min(escape);
                if margin.abs() <= 1e-7 {
                    continue;
                }
                let feasible = enc.feasible(&sys, &x, &w, 1e-9).unwrap();
                assert_eq!(feasible, margin > 0.0, "at {:?}", x);
            }
        }
    }

    #[test]
    fn all_active_net_needs_no_network_binaries() {
        // Large positive biases keep every hidden neuron active on the box.
        let net = ReluNetwork::new(vec![
            Layer::new(
                Matrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]),
                Vector::from_vec(vec![5.0, 5.0]),
            )
            .unwrap(),
            Layer::new(
                Matrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]),
                Vector::from_vec(vec![-0.5, -0.5]),
            )
            .unwrap(),
        ])
        .unwrap();
        let sys = UncertainSystem::new(
            Matrix::identity(2, 2) * 0.5,
            net,
            ErrorBound::exact(),
            AxisBox::centered(2, 1.0).unwrap().to_polytope(),
            AxisBox::centered(2, 0.1).unwrap(),
        )
        .unwrap();
        let enc = MilEncoding::build(&sys, &LyapCandidate::identity(1, 2)).unwrap();
        assert_eq!(enc.num_network_binaries(), 0);
        let x = Vector::from_vec(vec![0.5, 0.5]);
        let asg = enc.assignment_for(&sys, &x, &Vector::zeros(2)).unwrap();
        assert!(enc.check(&asg, 1e-9));
    }

    #[test]
    fn norm_selectors_pin_the_disturbance_bound() {
        let bound = ErrorBound::new(
            vec![
                ErrorPiece {
                    gamma: 0.1,
                    delta: 0.01,
                },
                ErrorPiece {
                    gamma: 0.0,
                    delta: 0.05,
                },
            ],
            Provenance::Sampled,
            None,
            None,
        )
        .unwrap();
        let sys = UncertainSystem::new(
            Matrix::identity(2, 2) * 0.5,
            scaled_net(&[2, 3, 2], 60, 0.2),
            bound,
            AxisBox::centered(2, 1.0).unwrap().to_polytope(),
            AxisBox::centered(2, 0.1).unwrap(),
        )
        .unwrap();
        let cand = LyapCandidate::identity(0, 2);
        let enc = MilEncoding::build(&sys, &cand).unwrap();
        let x = Vector::from_vec(vec![-0.6, 0.2]);
        // Bound at |x| = 0.6 is min(0.07, 0.05) = 0.05.
        let ok = Vector::from_vec(vec![0.049, 0.0]);
        let too_big = Vector::from_vec(vec![0.052, 0.0]);
        let asg = enc.assignment_for(&sys, &x, &ok).unwrap();
        assert!(enc.check(&asg, 1e-9));
        assert!(enc.feasible(&sys, &x, &ok, 1e-9).unwrap());
        assert!(!enc.feasible(&sys, &x, &too_big, 1e-9).unwrap());
        assert!(enc.assignment_for(&sys, &x, &too_big).is_err());
        // The gadget also rejects points whose norm sits below what a piece
        // would need: at |x| = 0.15 the bound is min(0.025, 0.05) = 0.025.
        let small = Vector::from_vec(vec![0.15, 0.0]);
        assert!(enc.feasible(&sys, &small, &Vector::from_vec(vec![0.024, 0.0]), 1e-9).unwrap());
        assert!(!enc.feasible(&sys, &small, &Vector::from_vec(vec![0.03, 0.0]), 1e-9).unwrap());
    }
}

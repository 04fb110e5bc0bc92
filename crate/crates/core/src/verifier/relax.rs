//! Sound relaxations for branch-and-bound nodes.
//!
//! A node's continuous state is an axis box over the decision vector `v`,
//! which is the state `x` alone or the stacked pair `[x; w]`.  The network
//! chains are propagated through the box as affine enclosures `G v + c` with
//! a componentwise error radius `e`: neurons that are fixed by branching or
//! stable on the box stay affine, every other neuron contributes a secant
//! enclosure and widens `e`.  The objective then splits into a quadratic
//! model plus an interval slack, and the quadratic is bounded from above by
//! overestimating its convex eigendirections with secants.

use nalgebra::linalg::SymmetricEigen;

use crate::relu::ReluNetwork;
use crate::{symmat, Matrix, Vector};

/// Axis-aligned interval box over the node decision vector.
#[derive(Debug, Clone)]
pub(crate) struct VBox {
    pub lo: Vector,
    pub hi: Vector,
}

impl VBox {
    pub fn new(lo: Vector, hi: Vector) -> Self {
        VBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn mid(&self) -> Vector {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn rad(&self) -> Vector {
        (&self.hi - &self.lo) * 0.5
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim()).any(|i| self.lo[i] > self.hi[i])
    }

    pub fn clamp(&self, v: &Vector) -> Vector {
        Vector::from_fn(self.dim(), |i, _| v[i].clamp(self.lo[i], self.hi[i]))
    }
}

/// Linear constraint `lo <= a . v <= hi` over the decision vector.
#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub a: Vector,
    pub lo: f64,
    pub hi: f64,
}

/// Interval bound tightening.  Shrinks `vbox` with every row for the given
/// number of sweeps; returns false when a row is interval-infeasible.  The
/// tightened bounds are padded by a small slack so feasible points are never
/// clipped away by rounding.
pub(crate) fn tighten(vbox: &mut VBox, rows: &[Row], sweeps: usize) -> bool {
    let d = vbox.dim();
    let pad = 1e-12;
    for _ in 0..sweeps {
        for row in rows {
            // Activity interval of a.v over the current box.
            let mut act_lo = 0.0;
            let mut act_hi = 0.0;
            for i in 0..d {
                let a = row.a[i];
                if a > 0.0 {
                    act_lo += a * vbox.lo[i];
                    act_hi += a * vbox.hi[i];
                } else if a < 0.0 {
                    act_lo += a * vbox.hi[i];
                    act_hi += a * vbox.lo[i];
                }
            }
            let slack = 1e-9 * (1.0 + act_lo.abs().max(act_hi.abs()));
            if act_lo > row.hi + slack || act_hi < row.lo - slack {
                return false;
            }
            for i in 0..d {
                let a = row.a[i];
                if a == 0.0 {
                    continue;
                }
                let (own_lo, own_hi) = if a > 0.0 {
                    (a * vbox.lo[i], a * vbox.hi[i])
                } else {
                    (a * vbox.hi[i], a * vbox.lo[i])
                };
                let rest_lo = act_lo - own_lo;
                let rest_hi = act_hi - own_hi;
                // lo <= a v_i + rest <= hi pins v_i to an interval.
                let (mut cand_lo, mut cand_hi) = if a > 0.0 {
                    ((row.lo - rest_hi) / a, (row.hi - rest_lo) / a)
                } else {
                    ((row.hi - rest_lo) / a, (row.lo - rest_hi) / a)
                };
                cand_lo -= pad * (1.0 + cand_lo.abs());
                cand_hi += pad * (1.0 + cand_hi.abs());
                if cand_lo > vbox.lo[i] {
                    vbox.lo[i] = cand_lo;
                }
                if cand_hi < vbox.hi[i] {
                    vbox.hi[i] = cand_hi;
                }
                if vbox.lo[i] > vbox.hi[i] {
                    return false;
                }
            }
        }
    }
    true
}

/// Affine enclosure `G v + c + diag(e) [-1, 1]` of a vector quantity.
#[derive(Debug, Clone)]
pub(crate) struct AffForm {
    pub g: Matrix,
    pub c: Vector,
    pub e: Vector,
}

impl AffForm {
    /// Enclosure selecting `v[offset .. offset + n]` exactly.
    pub fn var_slice(d: usize, offset: usize, n: usize) -> Self {
        let mut g = Matrix::zeros(n, d);
        for i in 0..n {
            g[(i, offset + i)] = 1.0;
        }
        AffForm {
            g,
            c: Vector::zeros(n),
            e: Vector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    /// Exact image under the affine map `w, b`.
    pub fn linear_map(&self, w: &Matrix, b: &Vector) -> Self {
        AffForm {
            g: w * &self.g,
            c: w * &self.c + b,
            e: w.abs() * &self.e,
        }
    }

    pub fn add(&self, other: &AffForm) -> Self {
        AffForm {
            g: &self.g + &other.g,
            c: &self.c + &other.c,
            e: &self.e + &other.e,
        }
    }

    /// Componentwise interval over the box, error radii included.
    pub fn interval(&self, vbox: &VBox) -> (Vector, Vector) {
        let mid = vbox.mid();
        let rad = vbox.rad();
        let center = &self.g * mid + &self.c;
        let spread = self.g.abs() * rad + &self.e;
        (&center - &spread, center + spread)
    }

    pub fn stack(parts: &[&AffForm]) -> Self {
        let d = parts[0].g.ncols();
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut g = Matrix::zeros(total, d);
        let mut c = Vector::zeros(total);
        let mut e = Vector::zeros(total);
        let mut at = 0;
        for p in parts {
            g.rows_mut(at, p.len()).copy_from(&p.g);
            c.rows_mut(at, p.len()).copy_from(&p.c);
            e.rows_mut(at, p.len()).copy_from(&p.e);
            at += p.len();
        }
        AffForm { g, c, e }
    }
}

/// Effective neuron behaviour on a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Eff {
    Active,
    Inactive,
    Unstable,
}

/// Per-copy record of hidden pre-activations on a node.
#[derive(Debug)]
pub(crate) struct CopyTrace {
    /// Flattened hidden pre-activation rows `(a, c, e)` with `pre = a.v + c`.
    pub pre_rows: Vec<(Vector, f64, f64)>,
    pub pre_iv: Vec<(f64, f64)>,
    pub eff: Vec<Eff>,
}

/// Propagates one network copy through the enclosure.  `fixes` holds the
/// branch decision per flattened hidden neuron.  Returns the output
/// enclosure, the trace, and the sign rows implied by fixed neurons, or
/// `None` when a fix contradicts the interval bounds.
pub(crate) fn enclose_network(
    net: &ReluNetwork,
    input: &AffForm,
    fixes: &[Option<bool>],
    vbox: &VBox,
) -> Option<(AffForm, CopyTrace, Vec<Row>)> {
    let n_layers = net.layers().len();
    let mut cur = input.clone();
    let mut trace = CopyTrace {
        pre_rows: Vec::new(),
        pre_iv: Vec::new(),
        eff: Vec::new(),
    };
    let mut rows = Vec::new();
    let mut flat = 0;
    for (li, layer) in net.layers().iter().enumerate() {
        let pre = cur.linear_map(&layer.weight, &layer.bias);
        if li + 1 == n_layers {
            return Some((pre, trace, rows));
        }
        let (lo, hi) = pre.interval(vbox);
        let width = pre.len();
        let d = vbox.dim();
        let mut g = Matrix::zeros(width, d);
        let mut c = Vector::zeros(width);
        let mut e = Vector::zeros(width);
        for j in 0..width {
            let a_row = pre.g.row(j).transpose();
            trace.pre_rows.push((a_row.clone(), pre.c[j], pre.e[j]));
            trace.pre_iv.push((lo[j], hi[j]));
            let eff = match fixes[flat + j] {
                Some(true) => {
                    if hi[j] < 0.0 {
                        return None;
                    }
                    rows.push(Row {
                        a: a_row,
                        lo: -pre.c[j] - pre.e[j],
                        hi: f64::INFINITY,
                    });
                    Eff::Active
                }
                Some(false) => {
                    if lo[j] > 0.0 {
                        return None;
                    }
                    rows.push(Row {
                        a: a_row,
                        lo: f64::NEG_INFINITY,
                        hi: -pre.c[j] + pre.e[j],
                    });
                    Eff::Inactive
                }
                None => {
                    if lo[j] >= 0.0 {
                        Eff::Active
                    } else if hi[j] <= 0.0 {
                        Eff::Inactive
                    } else {
                        Eff::Unstable
                    }
                }
            };
            trace.eff.push(eff);
            match eff {
                Eff::Active => {
                    g.row_mut(j).copy_from(&pre.g.row(j));
                    c[j] = pre.c[j];
                    e[j] = pre.e[j];
                }
                Eff::Inactive => {}
                Eff::Unstable => {
                    // relu(p) = lam p + [0, -lam lo] on [lo, hi]; recenter.
                    let lam = hi[j] / (hi[j] - lo[j]);
                    let shift = -lam * lo[j] * 0.5;
                    g.row_mut(j).copy_from(&(pre.g.row(j) * lam));
                    c[j] = lam * pre.c[j] + shift;
                    e[j] = lam * pre.e[j] + shift;
                }
            }
        }
        flat += width;
        cur = AffForm { g, c, e };
    }
    unreachable!("network has at least one layer");
}

/// Quadratic objective model of a node: the objective equals
/// `v' H v + 2 lin . v + c0` up to an absolute error of `sigma`.
#[derive(Debug)]
pub(crate) struct QuadModel {
    pub h: Matrix,
    pub lin: Vector,
    pub c0: f64,
    pub sigma: f64,
}

impl QuadModel {
    pub fn new(d: usize) -> Self {
        QuadModel {
            h: Matrix::zeros(d, d),
            lin: Vector::zeros(d),
            c0: 0.0,
            sigma: 0.0,
        }
    }

    /// Adds `sign * z' P z` for the enclosed quantity `z`.
    pub fn add_quadratic(&mut self, p: &Matrix, z: &AffForm, sign: f64, vbox: &VBox) {
        self.h += (z.g.transpose() * p * &z.g) * sign;
        self.lin += z.g.transpose() * (p * &z.c) * sign;
        self.c0 += (p * &z.c).dot(&z.c) * sign;
        if z.e.iter().any(|&r| r > 0.0) {
            // |z' P z - zhat' P zhat| <= 2 sum |(P zhat)_j| e_j + e' |P| e
            // over the affine range of zhat.
            let (lo, hi) = z.interval(vbox);
            let a_lo = &lo + &z.e;
            let a_hi = &hi - &z.e;
            let m = z.len();
            let mut slack = 0.0;
            for j in 0..m {
                let mut row_lo = 0.0;
                let mut row_hi = 0.0;
                for kk in 0..m {
                    let pjk = p[(j, kk)];
                    if pjk > 0.0 {
                        row_lo += pjk * a_lo[kk];
                        row_hi += pjk * a_hi[kk];
                    } else if pjk < 0.0 {
                        row_lo += pjk * a_hi[kk];
                        row_hi += pjk * a_lo[kk];
                    }
                }
                slack += 2.0 * row_lo.abs().max(row_hi.abs()) * z.e[j];
                for kk in 0..m {
                    slack += p[(j, kk)].abs() * z.e[j] * z.e[kk];
                }
            }
            self.sigma += slack;
        }
    }

    pub fn finish(&mut self) {
        symmat::symmetrize(&mut self.h);
    }

    pub fn eval(&self, v: &Vector) -> f64 {
        (&self.h * v).dot(v) + 2.0 * self.lin.dot(v) + self.c0
    }

    pub fn grad(&self, v: &Vector) -> Vector {
        &self.h * v * 2.0 + &self.lin * 2.0
    }
}

/// Result of bounding a node relaxation.
#[derive(Debug)]
pub(crate) struct BoundInfo {
    /// Sound upper bound on the objective over the node.
    pub ub: f64,
    /// Approximate maximizer of the relaxation, mapped back to `v` space and
    /// clamped into the box.
    pub v_point: Vector,
    /// Eigenbasis of the model Hessian (columns).
    pub basis: Matrix,
    /// Interval of each eigencoordinate over the node.
    pub sbox: Vec<(f64, f64)>,
    /// Worst-case secant gap per eigencoordinate; negative when the
    /// coordinate is not overestimated.
    pub scores: Vec<f64>,
    /// Secant gap actually incurred at the bounding maximizer, zero at the
    /// interval endpoints; splitting a coordinate pays off only when this
    /// is large.
    pub gaps: Vec<f64>,
}

/// Maximum of the separable majorant with linear term `b` over `sbox`,
/// together with a first-order correction covering any inexactness of the
/// inner solve.  Returns the value and the maximizer.
fn separable_max(a: &[f64], b: &[f64], sbox: &[(f64, f64)], constant: f64) -> (f64, Vec<f64>) {
    let s_tilde = pg_box_max(a, b, sbox);
    let mut val = constant;
    let mut corr = 0.0;
    for i in 0..a.len() {
        val += a[i] * s_tilde[i] * s_tilde[i] + b[i] * s_tilde[i];
        let grad = 2.0 * a[i] * s_tilde[i] + b[i];
        let (lo, hi) = sbox[i];
        corr += (grad * (lo - s_tilde[i]))
            .max(grad * (hi - s_tilde[i]))
            .max(0.0);
    }
    (val + corr, s_tilde)
}

/// Subgradient steps spent improving the Lagrangian row bound per node.
const ROW_BOUND_STEPS: usize = 12;

/// Interior maximizer of the separable majorant over `sbox` intersected
/// with the rows, by log-barrier Newton in the eigencoordinates.  Returns
/// the final iterate and barrier weight; `None` when no strictly interior
/// point is found.
fn barrier_max(
    a: &[f64],
    b: &[f64],
    sbox: &[(f64, f64)],
    cons: &[(Vec<f64>, f64)],
    scale: f64,
) -> Option<(Vec<f64>, f64)> {
    let d = a.len();
    let interior = |s: &[f64]| -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..d {
            m = m.min(s[i] - sbox[i].0).min(sbox[i].1 - s[i]);
        }
        for (q, h) in cons {
            let act: f64 = q.iter().zip(s).map(|(qi, si)| qi * si).sum();
            m = m.min(h - act);
        }
        m
    };
    let width: Vec<f64> = sbox.iter().map(|&(lo, hi)| (hi - lo).max(1e-12)).collect();
    let mut s: Vec<f64> = sbox.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    // Phase one: push the midpoint off any violated rows.
    for _ in 0..25 {
        let mut worst = f64::INFINITY;
        let mut grad = vec![0.0f64; d];
        for i in 0..d {
            let lo_slack = s[i] - sbox[i].0;
            let hi_slack = sbox[i].1 - s[i];
            if lo_slack < worst {
                worst = lo_slack;
                grad = vec![0.0; d];
                grad[i] = 1.0;
            }
            if hi_slack < worst {
                worst = hi_slack;
                grad = vec![0.0; d];
                grad[i] = -1.0;
            }
        }
        for (q, h) in cons {
            let act: f64 = q.iter().zip(&s).map(|(qi, si)| qi * si).sum();
            if h - act < worst {
                worst = h - act;
                grad = q.iter().map(|qi| -qi).collect();
            }
        }
        if worst > 0.0 {
            break;
        }
        let gn: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gn <= 1e-12 {
            return None;
        }
        for i in 0..d {
            s[i] = (s[i] + 0.1 * width[i] * grad[i] / gn).clamp(sbox[i].0, sbox[i].1);
        }
    }
    let min_width = width.iter().cloned().fold(f64::INFINITY, f64::min);
    if interior(&s) <= 1e-12 * (1.0 + min_width) {
        return None;
    }
    let mut mu = 0.01 * scale;
    let target_mu = 1e-9 * scale;
    while mu > target_mu {
        for _ in 0..15 {
            // Gradient and Hessian of objective plus barrier.
            let mut g = vec![0.0f64; d];
            let mut h = vec![vec![0.0f64; d]; d];
            for i in 0..d {
                g[i] = 2.0 * a[i] * s[i] + b[i];
                h[i][i] = 2.0 * a[i] - 1e-12;
                let lo_slack = (s[i] - sbox[i].0).max(1e-300);
                let hi_slack = (sbox[i].1 - s[i]).max(1e-300);
                g[i] += mu / lo_slack - mu / hi_slack;
                h[i][i] -= mu / (lo_slack * lo_slack) + mu / (hi_slack * hi_slack);
            }
            for (q, hh) in cons {
                let act: f64 = q.iter().zip(&s).map(|(qi, si)| qi * si).sum();
                let slack = (hh - act).max(1e-300);
                for i in 0..d {
                    g[i] -= mu * q[i] / slack;
                    for j in 0..d {
                        h[i][j] -= mu * q[i] * q[j] / (slack * slack);
                    }
                }
            }
            // Solve -H step = g for the ascent step.
            let mut hm = Matrix::zeros(d, d);
            let mut gv = Vector::zeros(d);
            for i in 0..d {
                gv[i] = g[i];
                for j in 0..d {
                    hm[(i, j)] = -h[i][j];
                }
            }
            let Some(chol) = hm.cholesky() else { break };
            let step = chol.solve(&gv);
            // Backtrack into the interior.
            let mut t = 1.0f64;
            for _ in 0..60 {
                let cand: Vec<f64> = (0..d).map(|i| s[i] + t * step[i]).collect();
                if interior(&cand) > 0.0 {
                    s = cand;
                    break;
                }
                t *= 0.5;
            }
            let decrement: f64 = (0..d).map(|i| g[i] * step[i]).sum();
            if decrement.abs() <= 1e-14 * scale {
                break;
            }
        }
        mu *= 0.1;
    }
    Some((s, mu / 0.1))
}

/// DC bound: eigen-split the model Hessian, overestimate convex directions
/// by secants over their intervals, maximize the resulting separable concave
/// function over the box, and add a first-order correction so the bound is
/// sound regardless of how well the inner solve converged.  Linear rows are
/// folded in through Lagrange multipliers: for any fixed penalty the
/// penalized separable maximum still bounds the row-constrained maximum, and
/// an interior-point solve picks a near-optimal penalty.  `early` skips the
/// interior refinement when the box bound alone already proves it: callers
/// pass the value below which the node gets pruned anyway.
pub(crate) fn dc_bound(
    model: &QuadModel,
    vbox: &VBox,
    cuts: &[Row],
    rows: &[Row],
    early: f64,
) -> BoundInfo {
    let d = vbox.dim();
    let eig = SymmetricEigen::new(model.h.clone());
    let u = eig.eigenvectors;
    let lambda = eig.eigenvalues;
    let mid = vbox.mid();
    let rad = vbox.rad();
    let mut sbox = Vec::with_capacity(d);
    for i in 0..d {
        let col = u.column(i);
        let center: f64 = col.dot(&mid);
        let spread: f64 = col.iter().zip(rad.iter()).map(|(a, r)| a.abs() * r).sum();
        let mut lo = center - spread;
        let mut hi = center + spread;
        // Spatial cuts are stored as plain rows; the ones aligned with the
        // current eigenvector tighten the eigencoordinate directly.
        for cut in cuts {
            let mut same = true;
            let mut flipped = true;
            for j in 0..d {
                if (cut.a[j] - col[j]).abs() > 1e-9 {
                    same = false;
                }
                if (cut.a[j] + col[j]).abs() > 1e-9 {
                    flipped = false;
                }
            }
            if same {
                lo = lo.max(cut.lo);
                hi = hi.min(cut.hi);
            } else if flipped {
                lo = lo.max(-cut.hi);
                hi = hi.min(-cut.lo);
            }
        }
        sbox.push((lo, hi));
    }
    if sbox.iter().any(|&(lo, hi)| lo > hi) {
        return BoundInfo {
            ub: f64::NEG_INFINITY,
            v_point: vbox.mid(),
            basis: u,
            sbox,
            scores: vec![-1.0; d],
            gaps: vec![0.0; d],
        };
    }
    // Separable concave majorant: g_i(s) = a_i s^2 + b_i s (+ const).
    let ut_lin = u.transpose() * &model.lin;
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut constant = model.c0;
    let mut scores = vec![-1.0; d];
    for i in 0..d {
        let (lo, hi) = sbox[i];
        let beta = 2.0 * ut_lin[i];
        if lambda[i] > 0.0 {
            // Secant of lambda s^2 over [lo, hi].
            a[i] = 0.0;
            b[i] = lambda[i] * (lo + hi) + beta;
            constant -= lambda[i] * lo * hi;
            scores[i] = lambda[i] * (hi - lo) * (hi - lo) * 0.25;
        } else {
            a[i] = lambda[i];
            b[i] = beta;
        }
    }
    let (val0, s0) = separable_max(&a, &b, &sbox, constant);
    let mut best_val = val0;
    let mut best_s = s0.clone();

    // One-sided constraints q . s <= h in eigencoordinates, finite sides
    // only, skipping rows that cannot improve on the box intervals.
    let mut cons: Vec<(Vec<f64>, f64)> = Vec::new();
    if val0 + model.sigma > early {
        for row in rows {
            let nz = row.a.iter().filter(|c| c.abs() > 1e-12).count();
            if nz == 0 {
                continue;
            }
            let q0 = u.transpose() * &row.a;
            if row.hi.is_finite() {
                cons.push((q0.iter().copied().collect(), row.hi));
            }
            if row.lo.is_finite() {
                cons.push((q0.iter().map(|c| -c).collect(), -row.lo));
            }
        }
    }
    let mut interior_done = false;
    if !cons.is_empty() {
        // Interior-point dual: solve the row-constrained relaxation by
        // barrier Newton, then bound through the multipliers it implies.
        if let Some((s_f, mu_f)) = barrier_max(&a, &b, &sbox, &cons, 1.0 + val0.abs()) {
            let mut b_pen = b.clone();
            let mut c_pen = constant;
            for (q, h) in &cons {
                let act: f64 = q.iter().zip(&s_f).map(|(qi, si)| qi * si).sum();
                let lam = mu_f / (h - act).max(1e-300);
                c_pen += lam * h;
                for i in 0..d {
                    b_pen[i] -= lam * q[i];
                }
            }
            let (val, _) = separable_max(&a, &b_pen, &sbox, c_pen);
            if val < best_val {
                best_val = val;
                best_s = s_f;
            }
            interior_done = true;
        }
    }
    if !cons.is_empty() && !interior_done {
        let m = cons.len();
        let mut mult = vec![0.0f64; m];
        let mut s_cur = s0;
        let scale = 1.0 + val0.abs();
        for step in 0..ROW_BOUND_STEPS {
            // Subgradient of the dual value at the current multipliers.
            let mut sub = vec![0.0f64; m];
            let mut viol2 = 0.0f64;
            for (j, (q, h)) in cons.iter().enumerate() {
                let act: f64 = q.iter().zip(&s_cur).map(|(qi, si)| qi * si).sum();
                sub[j] = h - act;
                if sub[j] < 0.0 {
                    viol2 += sub[j] * sub[j];
                }
            }
            // A row-feasible maximizer leaves nothing for the penalty to cut.
            if viol2 <= 1e-20 {
                break;
            }
            let t = 0.3 * scale / (viol2.sqrt() * (step as f64 + 1.0).sqrt());
            for j in 0..m {
                if sub[j] < 0.0 {
                    mult[j] -= t * sub[j];
                } else {
                    mult[j] = (mult[j] - 0.3 * t * sub[j]).max(0.0);
                }
            }
            let mut b_pen = b.clone();
            let mut c_pen = constant;
            for (j, (q, h)) in cons.iter().enumerate() {
                if mult[j] == 0.0 {
                    continue;
                }
                c_pen += mult[j] * h;
                for i in 0..d {
                    b_pen[i] -= mult[j] * q[i];
                }
            }
            let (val, s_new) = separable_max(&a, &b_pen, &sbox, c_pen);
            s_cur = s_new;
            if val < best_val {
                best_val = val;
                best_s = s_cur.clone();
            }
        }
    }
    let mut gaps = vec![0.0f64; d];
    for i in 0..d {
        if lambda[i] > 0.0 {
            let (lo, hi) = sbox[i];
            gaps[i] = (lambda[i] * (best_s[i] - lo) * (hi - best_s[i])).max(0.0);
        }
    }
    let s_vec = Vector::from_vec(best_s);
    let v_point = vbox.clamp(&(&u * &s_vec));
    BoundInfo {
        ub: best_val + model.sigma,
        v_point,
        basis: u,
        sbox,
        scores,
        gaps,
    }
}

/// Projected gradient ascent for a separable concave quadratic
/// `sum a_i s_i^2 + b_i s_i` (`a_i <= 0`) over a box, finished by an exact
/// per-coordinate pass.
pub(crate) fn pg_box_max(a: &[f64], b: &[f64], sbox: &[(f64, f64)]) -> Vec<f64> {
    let d = a.len();
    let mut s: Vec<f64> = sbox.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let curvature = a.iter().fold(0.0f64, |m, &ai| m.max(2.0 * ai.abs()));
    let step = 1.0 / curvature.max(1e-12);
    for _ in 0..40 {
        let mut moved = 0.0f64;
        for i in 0..d {
            let grad = 2.0 * a[i] * s[i] + b[i];
            let next = (s[i] + step * grad).clamp(sbox[i].0, sbox[i].1);
            moved = moved.max((next - s[i]).abs());
            s[i] = next;
        }
        if moved <= 1e-14 {
            break;
        }
    }
    // The separable structure admits a closed-form polish.
    for i in 0..d {
        let (lo, hi) = sbox[i];
        s[i] = if a[i] < 0.0 {
            (-b[i] / (2.0 * a[i])).clamp(lo, hi)
        } else if b[i] > 0.0 {
            hi
        } else if b[i] < 0.0 {
            lo
        } else {
            s[i]
        };
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_net;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_box(rng: &mut ChaCha8Rng, d: usize) -> VBox {
        let lo = Vector::from_fn(d, |_, _| rng.random_range(-1.0..0.0));
        let hi = Vector::from_fn(d, |_, _| rng.random_range(0.1..1.0));
        VBox::new(lo, hi)
    }

    fn sample(rng: &mut ChaCha8Rng, vbox: &VBox) -> Vector {
        Vector::from_fn(vbox.dim(), |i, _| {
            rng.random_range(vbox.lo[i]..=vbox.hi[i])
        })
    }

    #[test]
    fn enclosure_contains_network_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let net = random_net(&[2, 5, 4, 2], 100 + seed);
            let vbox = random_box(&mut rng, 2);
            let input = AffForm::var_slice(2, 0, 2);
            let fixes = vec![None; net.hidden_neurons()];
            let (out, _, _) = enclose_network(&net, &input, &fixes, &vbox).unwrap();
            let (lo, hi) = out.interval(&vbox);
            for _ in 0..200 {
                let x = sample(&mut rng, &vbox);
                let y = net.eval(&x);
                let center = &out.g * &x + &out.c;
                for j in 0..2 {
                    assert!(y[j] >= center[j] - out.e[j] - 1e-9);
                    assert!(y[j] <= center[j] + out.e[j] + 1e-9);
                    assert!(y[j] >= lo[j] - 1e-9 && y[j] <= hi[j] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn enclosure_is_exact_when_pattern_fixed() {
        let net = random_net(&[2, 4, 2], 42);
        let vbox = VBox::new(Vector::from_vec(vec![0.1, 0.1]), Vector::from_vec(vec![0.4, 0.3]));
        let probe = Vector::from_vec(vec![0.2, 0.2]);
        let pattern = net.activation_pattern(&probe);
        let fixes: Vec<Option<bool>> = pattern.iter().flatten().map(|&b| Some(b)).collect();
        let input = AffForm::var_slice(2, 0, 2);
        let (out, _, _) = enclose_network(&net, &input, &fixes, &vbox).unwrap();
        assert!(out.e.iter().all(|&r| r == 0.0));
        // Exactness holds at points sharing the pattern.
        let y = net.eval(&probe);
        let model = &out.g * &probe + &out.c;
        assert!((y - model).amax() <= 1e-12);
    }

    #[test]
    fn contradictory_fix_is_detected() {
        // One neuron with pre = x_0 + 5, strictly positive on the box.
        let net = crate::relu::ReluNetwork::new(vec![
            crate::relu::Layer::new(
                Matrix::from_row_slice(1, 1, &[1.0]),
                Vector::from_vec(vec![5.0]),
            )
            .unwrap(),
            crate::relu::Layer::new(
                Matrix::from_row_slice(1, 1, &[1.0]),
                Vector::from_vec(vec![0.0]),
            )
            .unwrap(),
        ])
        .unwrap();
        let vbox = VBox::new(Vector::from_vec(vec![-1.0]), Vector::from_vec(vec![1.0]));
        let input = AffForm::var_slice(1, 0, 1);
        assert!(enclose_network(&net, &input, &[Some(false)], &vbox).is_none());
        assert!(enclose_network(&net, &input, &[Some(true)], &vbox).is_some());
    }

    #[test]
    fn tighten_preserves_planted_point_and_detects_conflicts() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let d = 3;
            let mut vbox = VBox::new(Vector::from_element(d, -2.0), Vector::from_element(d, 2.0));
            let point = sample(&mut rng, &vbox);
            let rows: Vec<Row> = (0..6)
                .map(|_| {
                    let a = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
                    let val: f64 = a.dot(&point);
                    Row {
                        a,
                        lo: val - rng.random_range(0.0..0.5),
                        hi: val + rng.random_range(0.0..0.5),
                    }
                })
                .collect();
            assert!(tighten(&mut vbox, &rows, 3));
            for i in 0..d {
                assert!(point[i] >= vbox.lo[i] && point[i] <= vbox.hi[i]);
            }
        }
        // x_0 >= 1 and x_0 <= -1 cannot both hold.
        let mut vbox = VBox::new(Vector::from_element(1, -2.0), Vector::from_element(1, 2.0));
        let rows = vec![
            Row {
                a: Vector::from_vec(vec![1.0]),
                lo: 1.0,
                hi: f64::INFINITY,
            },
            Row {
                a: Vector::from_vec(vec![1.0]),
                lo: f64::NEG_INFINITY,
                hi: -1.0,
            },
        ];
        assert!(!tighten(&mut vbox, &rows, 3));
    }

    #[test]
    fn dc_bound_dominates_model_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let d = 4;
            let mut model = QuadModel::new(d);
            model.h = symmat::random_symmetric(d, &mut rng);
            model.lin = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            model.c0 = rng.random_range(-1.0..1.0);
            let vbox = random_box(&mut rng, d);
            let info = dc_bound(&model, &vbox, &[], &[], f64::NEG_INFINITY);
            for _ in 0..300 {
                let v = sample(&mut rng, &vbox);
                assert!(
                    model.eval(&v) <= info.ub + 1e-9,
                    "relaxation fell below the model"
                );
            }
        }
    }

    #[test]
    fn dc_bound_exact_for_concave_model() {
        // maximize -|v|^2 + 2 b . v on a box away from the vertex.
        let d = 2;
        let mut model = QuadModel::new(d);
        model.h = Matrix::identity(d, d) * -1.0;
        model.lin = Vector::from_vec(vec![0.3, -0.2]);
        let vbox = VBox::new(Vector::from_element(d, -1.0), Vector::from_element(d, 1.0));
        let info = dc_bound(&model, &vbox, &[], &[], f64::NEG_INFINITY);
        // Unconstrained max at v = lin with value |lin|^2.
        let expect = 0.3f64 * 0.3 + 0.2 * 0.2;
        assert!((info.ub - expect).abs() <= 1e-9);
        assert!((model.eval(&info.v_point) - expect).abs() <= 1e-9);
    }

    #[test]
    fn secant_cut_tightens_bound() {
        // Convex model v^2 on [-1, 1]: the secant relaxation is exact at
        // interval endpoints, so the bound only drops when a cut shrinks
        // the reach of the eigencoordinate.  The central half interval has
        // endpoint value 1/4, and the secant there is tight.
        let mut model = QuadModel::new(1);
        model.h = Matrix::from_row_slice(1, 1, &[1.0]);
        let vbox = VBox::new(Vector::from_element(1, -1.0), Vector::from_element(1, 1.0));
        let root = dc_bound(&model, &vbox, &[], &[], f64::NEG_INFINITY);
        assert!((root.ub - 1.0).abs() <= 1e-12);
        let dir = root.basis.column(0).clone_owned();
        let half = Row {
            a: dir.clone(),
            lo: -0.5,
            hi: 0.5,
        };
        let inner = dc_bound(&model, &vbox, &[half], &[], f64::NEG_INFINITY);
        assert!((inner.ub - 0.25).abs() <= 1e-12, "ub = {}", inner.ub);
        // A cut stored with the opposite orientation must land on the same
        // eigencoordinate.
        let flipped = Row {
            a: -dir,
            lo: -0.5,
            hi: 0.5,
        };
        let via_flip = dc_bound(&model, &vbox, &[flipped], &[], f64::NEG_INFINITY);
        assert!((via_flip.ub - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn pg_box_max_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let d = 3;
            let a: Vec<f64> = (0..d).map(|_| -rng.random_range(0.0..2.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sbox: Vec<(f64, f64)> = (0..d)
                .map(|_| {
                    let lo = rng.random_range(-1.0..0.0);
                    (lo, lo + rng.random_range(0.1..2.0))
                })
                .collect();
            let s = pg_box_max(&a, &b, &sbox);
            for i in 0..d {
                let expect = if a[i] < 0.0 {
                    (-b[i] / (2.0 * a[i])).clamp(sbox[i].0, sbox[i].1)
                } else if b[i] > 0.0 {
                    sbox[i].1
                } else if b[i] < 0.0 {
                    sbox[i].0
                } else {
                    s[i]
                };
                assert!((s[i] - expect).abs() <= 1e-9);
            }
        }
    }
}

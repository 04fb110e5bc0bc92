//! Candidate proposals as analytic centers: minimize the log barrier of the
//! current cut set intersected with the spectral box `eps_int I <= P <=
//! (1 - eps_int) I` by damped Newton over the symmetric coordinate space,
//! with a projected-subgradient phase I to find a strictly feasible start and
//! a trace test for cheap infeasibility certificates.

use crate::lyapunov::{LyapCandidate, SampleSet};
use crate::symmat;
use crate::{Error, Matrix, Result, Vector};

/// Solver controls for [`analytic_center`].
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    /// Stop when the barrier gradient norm falls below this.
    pub newton_tol: f64,
    pub max_newton_steps: usize,
    pub max_phase1_steps: usize,
    /// Spectral interior margin: candidates satisfy
    /// `eps_int I <= P <= (1 - eps_int) I`.
    pub eps_int: f64,
    /// Armijo slope fraction for backtracking.
    pub armijo: f64,
    /// Step shrink factor for backtracking.
    pub shrink: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            newton_tol: 1e-9,
            max_newton_steps: 200,
            max_phase1_steps: 4000,
            eps_int: 1e-6,
            armijo: 0.25,
            shrink: 0.5,
        }
    }
}

impl LearnerConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.newton_tol > 0.0
            && self.max_newton_steps > 0
            && self.max_phase1_steps > 0
            && self.eps_int > 0.0
            && self.eps_int < 0.5
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("learner config values out of range"))
        }
    }
}

/// What the learner concluded.
#[derive(Debug, Clone)]
pub enum Proposal {
    Candidate(LyapCandidate),
    /// The cut set provably excludes every positive definite `P` (trace
    /// test: some cut matrix is positive semidefinite).
    Infeasible,
    /// No strictly feasible point found within budget; emptiness not proven.
    FeasibilityUnknown,
}

/// Proposal plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct LearnerOutcome {
    pub proposal: Proposal,
    pub newton_steps: usize,
    pub phase1_steps: usize,
    pub gradient_norm: f64,
    /// Barrier objective after each accepted Newton step.
    pub objective_history: Vec<f64>,
    /// Newton systems that fell back to plain gradient steps.
    pub gradient_fallbacks: usize,
}

impl LearnerOutcome {
    pub fn candidate(&self) -> Option<&LyapCandidate> {
        match &self.proposal {
            Proposal::Candidate(c) => Some(c),
            _ => None,
        }
    }
}

/// Barrier state: cuts as unit svec rows, spectral margin, dimension.
struct Barrier {
    cuts: Vec<Vector>,
    d: usize,
    eps: f64,
}

impl Barrier {
    /// Residuals `-<P, C_i>` (positive iff strictly feasible).
    fn residuals(&self, s: &Vector) -> Vec<f64> {
        self.cuts.iter().map(|c| -c.dot(s)).collect()
    }

    /// Objective value, or None outside the domain.
    fn value(&self, s: &Vector) -> Option<f64> {
        let mut total = 0.0;
        for r in self.residuals(s) {
            if r <= 0.0 {
                return None;
            }
            total -= r.ln();
        }
        let p = symmat::smat(s, self.d);
        let lower = &p - Matrix::identity(self.d, self.d) * self.eps;
        let upper = Matrix::identity(self.d, self.d) * (1.0 - self.eps) - &p;
        total -= log_det_spd(&lower)?;
        total -= log_det_spd(&upper)?;
        Some(total)
    }

    /// Gradient in svec coordinates.
    fn gradient(&self, s: &Vector) -> Option<Vector> {
        let q = s.len();
        let mut g = Vector::zeros(q);
        for c in &self.cuts {
            let r = -c.dot(s);
            if r <= 0.0 {
                return None;
            }
            g += c / r;
        }
        let p = symmat::smat(s, self.d);
        let lower_inv = spd_inverse(&(&p - Matrix::identity(self.d, self.d) * self.eps))?;
        let upper_inv =
            spd_inverse(&(Matrix::identity(self.d, self.d) * (1.0 - self.eps) - &p))?;
        g -= symmat::svec(&lower_inv);
        g += symmat::svec(&upper_inv);
        Some(g)
    }

    /// Dense Hessian in svec coordinates.
    fn hessian(&self, s: &Vector) -> Option<Matrix> {
        let q = s.len();
        let mut h = Matrix::zeros(q, q);
        for c in &self.cuts {
            let r = -c.dot(s);
            if r <= 0.0 {
                return None;
            }
            h.ger(1.0 / (r * r), c, c, 1.0);
        }
        let p = symmat::smat(s, self.d);
        let lower_inv = spd_inverse(&(&p - Matrix::identity(self.d, self.d) * self.eps))?;
        let upper_inv =
            spd_inverse(&(Matrix::identity(self.d, self.d) * (1.0 - self.eps) - &p))?;
        // d^2/dP^2 of -log det M is M^-1 (.) M^-1; assemble column by column
        // in the orthonormal symmetric basis.
        for a in 0..q {
            let mut ea = Vector::zeros(q);
            ea[a] = 1.0;
            let ma = symmat::smat(&ea, self.d);
            let col = &lower_inv * &ma * &lower_inv + &upper_inv * &ma * &upper_inv;
            let col = symmat::svec(&col);
            for b in 0..q {
                h[(b, a)] += col[b];
            }
        }
        Some(h)
    }
}

fn log_det_spd(m: &Matrix) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Positive-semidefiniteness test with a relative tolerance.
fn is_psd(c: &Matrix) -> bool {
    let scale = c.amax().max(1e-300);
    let eig = c.clone().symmetric_eigen();
    eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale)
}

/// Eigenvalue clamp of `P` onto `[lo, hi]`.
fn clamp_spectrum(p: &Matrix, lo: f64, hi: f64) -> Matrix {
    let eig = p.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.clamp(lo, hi));
    &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Proposes the analytic center of the localization set for basis dimension
/// `(k + 1) n_x`. Empty cut sets give `P = I/2` exactly (up to the Newton
/// tolerance).
pub fn analytic_center(
    cuts: &SampleSet,
    k: usize,
    n_x: usize,
    config: &LearnerConfig,
) -> Result<LearnerOutcome> {
    config.validate()?;
    let d = (k + 1) * n_x;
    if d == 0 {
        return Err(Error::invalid("zero-dimensional candidate space"));
    }
    for cut in cuts.cuts() {
        if cut.dim() != d {
            return Err(Error::dim(d, cut.dim(), "cut matrix size"));
        }
    }

    // Trace test: a positive semidefinite cut C forces tr(P C) >= eps tr(C)
    // >= 0 for every admissible P, so the strict inequality can never hold.
    for cut in cuts.cuts() {
        if is_psd(cut.c()) {
            return Ok(LearnerOutcome {
                proposal: Proposal::Infeasible,
                newton_steps: 0,
                phase1_steps: 0,
                gradient_norm: f64::INFINITY,
                objective_history: Vec::new(),
                gradient_fallbacks: 0,
            });
        }
    }

    // Unit-normalized cuts: same stationary points, better conditioning.
    let unit_cuts: Vec<Vector> = cuts
        .cuts()
        .iter()
        .map(|cut| {
            let v = symmat::svec(cut.c());
            let n = v.norm();
            v / n
        })
        .collect();
    let barrier = Barrier {
        cuts: unit_cuts,
        d,
        eps: config.eps_int,
    };

    let mut s = symmat::svec(&(Matrix::identity(d, d) * 0.5));
    let mut phase1_steps = 0;
    if barrier.residuals(&s).iter().any(|&r| r <= 0.0) {
        match phase_one(&barrier, config) {
            Phase1::Feasible(start, steps) => {
                s = start;
                phase1_steps = steps;
            }
            Phase1::Unknown(steps) => {
                return Ok(LearnerOutcome {
                    proposal: Proposal::FeasibilityUnknown,
                    newton_steps: 0,
                    phase1_steps: steps,
                    gradient_norm: f64::INFINITY,
                    objective_history: Vec::new(),
                    gradient_fallbacks: 0,
                });
            }
        }
    }

    let mut value = barrier.value(&s).expect("start point is interior");
    let mut history = vec![value];
    let mut fallbacks = 0;
    let mut grad_norm = f64::INFINITY;
    let mut steps = 0;
    for step in 0..config.max_newton_steps {
        steps = step;
        let g = barrier.gradient(&s).expect("iterate stays interior");
        grad_norm = g.norm();
        if grad_norm <= config.newton_tol {
            break;
        }
        let dir = match barrier
            .hessian(&s)
            .and_then(|h| h.cholesky())
            .map(|chol| chol.solve(&(-&g)))
        {
            Some(dir) => dir,
            None => {
                fallbacks += 1;
                -&g
            }
        };
        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            let trial = &s + &dir * t;
            if let Some(v) = barrier.value(&trial) {
                if v <= value + config.armijo * t * slope {
                    s = trial;
                    value = v;
                    history.push(v);
                    accepted = true;
                    break;
                }
            }
            t *= config.shrink;
        }
        if !accepted {
            break;
        }
        log::debug!(
            "learner step {step}: objective {value:.6e}, grad {grad_norm:.3e}, damping {t:.3e}"
        );
    }

    let p = symmat::smat(&s, d);
    let proposal = if barrier.residuals(&s).iter().all(|&r| r > 0.0) {
        Proposal::Candidate(LyapCandidate::new(k, p)?)
    } else {
        Proposal::FeasibilityUnknown
    };
    Ok(LearnerOutcome {
        proposal,
        newton_steps: steps,
        phase1_steps,
        gradient_norm: grad_norm,
        objective_history: history,
        gradient_fallbacks: fallbacks,
    })
}

enum Phase1 {
    Feasible(Vector, usize),
    Unknown(usize),
}

/// Projected subgradient on `max_i <P, C_i>` over the (slightly shrunk)
/// spectral box, from `P = I/2`. Success requires strict negativity.
fn phase_one(barrier: &Barrier, config: &LearnerConfig) -> Phase1 {
    let d = barrier.d;
    let lo = 2.0 * config.eps_int;
    let hi = 1.0 - 2.0 * config.eps_int;
    let mut p = Matrix::identity(d, d) * 0.5;
    for step in 0..config.max_phase1_steps {
        let s = symmat::svec(&p);
        let (worst_idx, worst) = barrier
            .cuts
            .iter()
            .map(|c| c.dot(&s))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        if worst < 0.0 {
            return Phase1::Feasible(s, step);
        }
        let t = 0.25 / ((step + 1) as f64).sqrt();
        let g = symmat::smat(&barrier.cuts[worst_idx], d);
        p -= g * t;
        p = clamp_spectrum(&p, lo, hi);
    }
    Phase1::Unknown(config.max_phase1_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::CutMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Wraps a raw symmetric matrix as a cut (tests only; pipeline cuts come
    /// from state-disturbance pairs).
    fn raw_cut(c: Matrix) -> CutMatrix {
        let n = c.nrows();
        CutMatrix::synthetic(c, Vector::zeros(n), Vector::zeros(n))
    }

    fn cuts_from(mats: Vec<Matrix>) -> SampleSet {
        let mut set = SampleSet::new();
        for m in mats {
            set.push(raw_cut(m)).unwrap();
        }
        set
    }

    fn spectrum_ok(p: &Matrix, eps: f64) -> bool {
        let eig = p.clone().symmetric_eigen();
        eig.eigenvalues
            .iter()
            .all(|&l| l >= eps - 1e-9 && l <= 1.0 - eps + 1e-9)
    }

    #[test]
    fn empty_cut_set_centers_at_half_identity() {
        for d in [2usize, 4, 6] {
            let out = analytic_center(&SampleSet::new(), 0, d, &LearnerConfig::default()).unwrap();
            let cand = out.candidate().expect("candidate");
            let diff = (cand.p() - Matrix::identity(d, d) * 0.5).abs().max();
            assert!(diff < 1e-8, "d = {d}, diff = {diff}");
        }
    }

    #[test]
    fn single_indefinite_cut_reaches_stationarity() {
        let c = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let cuts = cuts_from(vec![c.clone()]);
        let config = LearnerConfig::default();
        let out = analytic_center(&cuts, 0, 2, &config).unwrap();
        let cand = out.candidate().expect("candidate");
        let p = cand.p();
        assert!(symmat::frob_inner(p, &c) < 0.0);
        assert!(spectrum_ok(p, config.eps_int));

        // First-order condition via central finite differences of an
        // independently coded objective.
        let eps = config.eps_int;
        let objective = |s: &Vector| -> f64 {
            let pm = symmat::smat(s, 2);
            let r = -symmat::frob_inner(&pm, &c) / symmat::svec(&c).norm();
            let low = (&pm - Matrix::identity(2, 2) * eps).determinant();
            let up = (Matrix::identity(2, 2) * (1.0 - eps) - &pm).determinant();
            -r.ln() - low.ln() - up.ln()
        };
        let s0 = symmat::svec(p);
        let h = 1e-6;
        let mut fd = Vector::zeros(3);
        for i in 0..3 {
            let mut sp = s0.clone();
            sp[i] += h;
            let mut sm = s0.clone();
            sm[i] -= h;
            fd[i] = (objective(&sp) - objective(&sm)) / (2.0 * h);
        }
        assert!(fd.norm() < 1e-3, "finite-difference gradient {}", fd.norm());
        assert!(out.gradient_norm <= 1e-8);
    }

    #[test]
    fn identity_cut_infeasible_by_trace_test() {
        let cuts = cuts_from(vec![Matrix::identity(3, 3)]);
        let out = analytic_center(&cuts, 0, 3, &LearnerConfig::default()).unwrap();
        assert!(matches!(out.proposal, Proposal::Infeasible));
    }

    #[test]
    fn zero_cut_infeasible() {
        let cuts = cuts_from(vec![Matrix::zeros(2, 2)]);
        let out = analytic_center(&cuts, 0, 2, &LearnerConfig::default()).unwrap();
        assert!(matches!(out.proposal, Proposal::Infeasible));
    }

    #[test]
    fn planted_feasible_families_solved() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for trial in 0..10 {
            let d = 4;
            // Interior plant.
            let plant = {
                let mut m = symmat::random_symmetric(d, &mut rng) * 0.05;
                m += Matrix::identity(d, d) * 0.5;
                clamp_spectrum(&m, 0.1, 0.9)
            };
            let plant_norm2 = symmat::frob_inner(&plant, &plant);
            let mats: Vec<Matrix> = (0..15)
                .map(|_| {
                    let raw = symmat::random_symmetric(d, &mut rng);
                    let margin = 0.05;
                    let shift = (symmat::frob_inner(&plant, &raw) + margin) / plant_norm2;
                    raw - &plant * shift
                })
                .collect();
            for m in &mats {
                assert!(symmat::frob_inner(&plant, m) < 0.0);
            }
            let cuts = cuts_from(mats.clone());
            let config = LearnerConfig::default();
            let out = analytic_center(&cuts, 1, 2, &config).unwrap();
            let cand = out.candidate().unwrap_or_else(|| {
                panic!("trial {trial}: expected candidate, got {:?}", out.proposal)
            });
            for m in &mats {
                assert!(symmat::frob_inner(cand.p(), m) < 0.0);
            }
            assert!(spectrum_ok(cand.p(), config.eps_int));
        }
    }

    #[test]
    fn near_empty_interior_reports_unknown_not_infeasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let d = 2;
        // Plant the feasible sliver away from the I/2 start so phase one has
        // to search for it rather than beginning inside it.
        let mut plant = Matrix::identity(d, d) * 0.5;
        plant[(0, 0)] = 0.85;
        plant[(1, 1)] = 0.12;
        let plant_norm2 = symmat::frob_inner(&plant, &plant);
        // Slack so small the subgradient method cannot land inside.
        let mats: Vec<Matrix> = (0..60)
            .map(|_| {
                let raw = symmat::random_symmetric(d, &mut rng);
                let shift = (symmat::frob_inner(&plant, &raw) + 1e-14) / plant_norm2;
                raw - &plant * shift
            })
            .collect();
        let start = Matrix::identity(d, d) * 0.5;
        assert!(mats.iter().any(|m| symmat::frob_inner(&start, m) >= 0.0));
        let cuts = cuts_from(mats);
        let config = LearnerConfig {
            max_phase1_steps: 300,
            ..LearnerConfig::default()
        };
        let out = analytic_center(&cuts, 0, 2, &config).unwrap();
        assert!(
            matches!(out.proposal, Proposal::FeasibilityUnknown),
            "got {:?}",
            out.proposal
        );
    }

    #[test]
    fn objective_decreases_along_accepted_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let mats: Vec<Matrix> = (0..6)
            .map(|_| {
                let raw = symmat::random_symmetric(3, &mut rng);
                let tr = raw.trace();
                // Make strongly infeasible directions unlikely: subtract a
                // multiple of I to push the trace negative.
                raw - Matrix::identity(3, 3) * (tr.abs() / 3.0 + 0.2)
            })
            .collect();
        let cuts = cuts_from(mats);
        let out = analytic_center(&cuts, 0, 3, &LearnerConfig::default()).unwrap();
        assert!(out.candidate().is_some());
        for pair in out.objective_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn new_violated_cut_moves_the_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let base = symmat::random_symmetric(2, &mut rng) - Matrix::identity(2, 2) * 0.5;
        let mut cuts = cuts_from(vec![base.clone()]);
        let config = LearnerConfig::default();
        let first = analytic_center(&cuts, 0, 2, &config).unwrap();
        let p1 = first.candidate().expect("candidate").p().clone();
        // Witness q: strictly feasible for the base cut, away from p1.  The
        // new cut is planted to keep q feasible, so the enlarged problem
        // cannot be empty and the cut cannot be positive semidefinite.
        let q = loop {
            let raw = symmat::random_symmetric(2, &mut rng);
            let q = clamp_spectrum(&raw, 0.1, 0.9);
            if symmat::frob_inner(&q, &base) < -0.05 && (&q - &p1).norm() > 0.1 {
                break q;
            }
        };
        let q_norm2 = symmat::frob_inner(&q, &q);
        let c = loop {
            let dir = symmat::random_symmetric(2, &mut rng);
            let c = &dir - &q * ((symmat::frob_inner(&q, &dir) + 0.05) / q_norm2);
            if symmat::frob_inner(&p1, &c) > 1e-3 {
                break c;
            }
        };
        assert!(symmat::frob_inner(&q, &c) < 0.0);
        assert!(symmat::frob_inner(&p1, &c) > 0.0);
        cuts.push(raw_cut(c)).unwrap();
        let second = analytic_center(&cuts, 0, 2, &config).unwrap();
        let p2 = second.candidate().expect("candidate").p();
        assert!((p2 - &p1).norm() > 1e-9);
    }

    #[test]
    fn determinism_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let mats: Vec<Matrix> = (0..4)
            .map(|_| symmat::random_symmetric(4, &mut rng) - Matrix::identity(4, 4) * 0.4)
            .collect();
        let cuts = cuts_from(mats);
        let config = LearnerConfig::default();
        let a = analytic_center(&cuts, 1, 2, &config).unwrap();
        let b = analytic_center(&cuts, 1, 2, &config).unwrap();
        match (&a.proposal, &b.proposal) {
            (Proposal::Candidate(x), Proposal::Candidate(y)) => {
                assert!((x.p() - y.p()).abs().max() <= 1e-12);
            }
            _ => panic!("expected candidates"),
        }
    }
}

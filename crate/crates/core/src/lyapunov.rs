//! Trajectory-basis Lyapunov candidates: the stacked basis `z_k`, the
//! quadratic candidate `V_k(x; P) = z_k(x)' P z_k(x)`, its one-step difference
//! under disturbance, and the cut matrices that make the difference linear in
//! `P`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dynamics::UncertainSystem;
use crate::symmat;
use crate::{Error, Matrix, Result, Vector};

/// Quadratic candidate of order `k`: `P` acts on the stacked basis of
/// `k + 1` state blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapCandidate {
    k: usize,
    p: Matrix,
}

impl LyapCandidate {
    /// Builds a candidate, symmetrizing `P` after checking the asymmetry is
    /// below 1e-12 and that the size splits into `k + 1` equal blocks.
    pub fn new(k: usize, p: Matrix) -> Result<Self> {
        let d = p.nrows();
        if p.ncols() != d || d == 0 {
            return Err(Error::dim(d, p.ncols(), "square candidate matrix"));
        }
        if d % (k + 1) != 0 {
            return Err(Error::dim(
                d,
                k + 1,
                "candidate size divisible by k + 1 blocks",
            ));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("candidate matrix".into()));
        }
        if symmat::asymmetry(&p) > 1e-12 {
            return Err(Error::invalid("candidate matrix is not symmetric"));
        }
        let mut p = p;
        symmat::symmetrize(&mut p);
        Ok(LyapCandidate { k, p })
    }

    pub fn identity(k: usize, n_x: usize) -> Self {
        LyapCandidate {
            k,
            p: Matrix::identity((k + 1) * n_x, (k + 1) * n_x),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    /// Basis length `(k + 1) n_x`.
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.p.nrows() / (self.k + 1)
    }

    pub fn to_json(&self) -> String {
        let file = CandidateFile {
            schema_version: 1,
            k: self.k,
            p: (0..self.p.nrows())
                .map(|i| self.p.row(i).iter().copied().collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("candidate serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CandidateFile = serde_json::from_str(text).map_err(|e| Error::MalformedFile {
            path: "<inline json>".into(),
            reason: e.to_string(),
        })?;
        let d = file.p.len();
        if file.p.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("candidate matrix is not square"));
        }
        let p = Matrix::from_row_iterator(d, d, file.p.iter().flatten().copied());
        LyapCandidate::new(file.k, p)
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
}

#[derive(Serialize, Deserialize)]
struct CandidateFile {
    #[serde(default = "one")]
    schema_version: u32,
    k: usize,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
}

fn one() -> u32 {
    1
}

/// Stacked nominal iterates `[x; g(x); ...; g^k(x)]` with `g` the nominal
/// update of the system.
pub fn basis(sys: &UncertainSystem, k: usize, x: &Vector) -> Result<Vector> {
    let n = sys.dim();
    if x.len() != n {
        return Err(Error::dim(n, x.len(), "basis input"));
    }
    let mut z = Vector::zeros((k + 1) * n);
    let mut cur = x.clone();
    for block in 0..=k {
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("basis iterate {block}")));
        }
        z.rows_mut(block * n, n).copy_from(&cur);
        if block < k {
            cur = sys.nominal(&cur);
        }
    }
    Ok(z)
}

/// `V_k(x; P) = z_k(x)' P z_k(x)`.
pub fn eval_v(cand: &LyapCandidate, sys: &UncertainSystem, x: &Vector) -> Result<f64> {
    let z = basis(sys, cand.k, x)?;
    Ok(quad_form(&cand.p, &z))
}

/// One-step difference `V_k(g(x) + w; P) - V_k(x; P)`.
pub fn eval_dv(cand: &LyapCandidate, sys: &UncertainSystem, x: &Vector, w: &Vector) -> Result<f64> {
    let y = sys.nominal(x) + w;
    Ok(eval_v(cand, sys, &y)? - eval_v(cand, sys, x)?)
}

pub(crate) fn quad_form(p: &Matrix, z: &Vector) -> f64 {
    (p * z).dot(z)
}

/// The difference `V_k(y) - V_k(x)` as a linear functional of `P`:
/// `tr(P C) = dV` with `C = z(y) z(y)' - z(x) z(x)'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutMatrix {
    c: Matrix,
    x: Vector,
    w: Vector,
}

impl CutMatrix {
    /// Wraps a raw symmetric matrix with its source pair, bypassing the
    /// basis derivation. For solver tests; pipeline cuts come from
    /// [`cut_matrix`].
    #[cfg(test)]
    pub(crate) fn synthetic(c: Matrix, x: Vector, w: Vector) -> CutMatrix {
        CutMatrix { c, x, w }
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// `tr(P C)`, the Lyapunov difference this cut represents.
    pub fn pairing(&self, p: &Matrix) -> f64 {
        symmat::frob_inner(p, &self.c)
    }
}

/// Builds the cut matrix for a state-disturbance pair and self-checks the
/// linearity identity against direct evaluation on a few random symmetric
/// matrices.
pub fn cut_matrix(sys: &UncertainSystem, k: usize, x: &Vector, w: &Vector) -> Result<CutMatrix> {
    if w.len() != sys.dim() {
        return Err(Error::dim(sys.dim(), w.len(), "disturbance"));
    }
    let zx = basis(sys, k, x)?;
    let y = sys.nominal(x) + w;
    let zy = basis(sys, k, &y)?;
    let c = &zy * zy.transpose() - &zx * zx.transpose();

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5e1f);
    let cut = CutMatrix {
        c,
        x: x.clone(),
        w: w.clone(),
    };
    for _ in 0..5 {
        let p = symmat::random_symmetric(cut.dim(), &mut rng);
        let direct = quad_form(&p, &zy) - quad_form(&p, &zx);
        if (cut.pairing(&p) - direct).abs() > 1e-9 * (1.0 + direct.abs()) {
            return Err(Error::invalid(
                "cut matrix failed its linearity self-check",
            ));
        }
    }
    Ok(cut)
}

/// Ordered collection of counterexample cuts of a common dimension.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    cuts: Vec<CutMatrix>,
}

impl SampleSet {
    pub fn new() -> Self {
        SampleSet::default()
    }

    pub fn push(&mut self, cut: CutMatrix) -> Result<()> {
        if let Some(first) = self.cuts.first() {
            if first.dim() != cut.dim() {
                return Err(Error::dim(first.dim(), cut.dim(), "cut dimension"));
            }
        }
        self.cuts.push(cut);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn cuts(&self) -> &[CutMatrix] {
        &self.cuts
    }

    /// True when an existing pair matches `(x, w)` within `tol` in l-inf.
    pub fn contains_pair(&self, x: &Vector, w: &Vector, tol: f64) -> bool {
        self.cuts.iter().any(|c| {
            (c.x() - x).abs().max() <= tol && (c.w() - w).abs().max() <= tol
        })
    }
}

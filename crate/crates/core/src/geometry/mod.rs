//! Regions of state space: axis boxes, bounded convex polytopes in
//! H-representation, epsilon-net sample grids, convex hulls, and the
//! simulation-based region-of-interest construction.

mod epsnet;
mod hull;
mod roi;

pub use epsnet::{grid_eps_net, EpsNet, Region, DEFAULT_SAMPLE_CAP};
pub use hull::convex_hull;
pub use roi::{build_roi, RoiConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Matrix, Result, Vector};

/// An axis-aligned box with `lo < hi` in every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    lo: Vector,
    hi: Vector,
}

impl AxisBox {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim(lo.len(), hi.len(), "box bounds"));
        }
        if lo.len() == 0 {
            return Err(Error::invalid("box needs at least one dimension"));
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box bounds".into()));
        }
        for i in 0..lo.len() {
            if lo[i] >= hi[i] {
                return Err(Error::invalid(format!(
                    "box coordinate {i} has lo {} >= hi {}",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(AxisBox { lo, hi })
    }

    /// The ball `{x : max_i |x_i| <= r}` as a box.
    pub fn centered(dim: usize, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::invalid("box radius must be positive"));
        }
        AxisBox::new(Vector::from_element(dim, -r), Vector::from_element(dim, r))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &Vector {
        &self.lo
    }

    pub fn hi(&self) -> &Vector {
        &self.hi
    }

    pub fn center(&self) -> Vector {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lo[i] - 1e-12 && x[i] <= self.hi[i] + 1e-12)
    }

    /// Uniform sample from the box.
    pub fn sample(&self, rng: &mut impl Rng) -> Vector {
        Vector::from_fn(self.dim(), |i, _| rng.random_range(self.lo[i]..self.hi[i]))
    }

    /// All 2^n corner points.
    pub fn corners(&self) -> Vec<Vector> {
        let n = self.dim();
        assert!(n <= 24, "corner enumeration only sensible in low dimension");
        (0..(1usize << n))
            .map(|mask| {
                Vector::from_fn(n, |i, _| {
                    if mask >> i & 1 == 1 {
                        self.hi[i]
                    } else {
                        self.lo[i]
                    }
                })
            })
            .collect()
    }

    /// The box as a polytope with `2n` facets.
    pub fn to_polytope(&self) -> Polytope {
        let n = self.dim();
        let mut a = Matrix::zeros(2 * n, n);
        let mut b = Vector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = self.hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -self.lo[i];
        }
        Polytope {
            a,
            b,
            vertices: self.corners(),
        }
    }
}

/// A bounded nonempty convex polytope `{x | A x <= b}` with cached vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: Matrix,
    b: Vector,
    vertices: Vec<Vector>,
}

impl Polytope {
    /// Builds a polytope from halfspaces, verifying boundedness and
    /// nonemptiness without an LP solver. In dimensions up to three the check
    /// is exact (recession-ray candidates plus vertex enumeration); above
    /// three an interval-tightening argument must succeed or the constructor
    /// refuses.
    pub fn from_halfspaces(a: Matrix, b: Vector) -> Result<Self> {
        let (m, n) = (a.nrows(), a.ncols());
        if m != b.len() {
            return Err(Error::dim(m, b.len(), "polytope offsets"));
        }
        if n == 0 || m == 0 {
            return Err(Error::invalid("polytope needs rows and columns"));
        }
        if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("polytope data".into()));
        }
        if (0..m).any(|i| a.row(i).amax() == 0.0) {
            return Err(Error::invalid("polytope has an all-zero facet normal"));
        }
        if m < n + 1 {
            return Err(Error::Unbounded(format!(
                "{m} facets cannot bound dimension {n}"
            )));
        }
        check_bounded(&a, &b)?;
        let vertices = if n <= 3 {
            let v = enumerate_vertices(&a, &b)?;
            if v.is_empty() {
                return Err(Error::EmptyRegion("polytope has no vertices".into()));
            }
            v
        } else {
            Vec::new()
        };
        Ok(Polytope { a, b, vertices })
    }

    /// Internal constructor for callers that already know the invariants hold
    /// (hull output, box conversion, scaling).
    pub(crate) fn from_parts(a: Matrix, b: Vector, vertices: Vec<Vector>) -> Self {
        Polytope { a, b, vertices }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.a.nrows()
    }

    pub fn facet(&self, i: usize) -> (Vector, f64) {
        (self.a.row(i).transpose(), self.b[i])
    }

    /// `max_i (a_i . x - b_i)`; negative strictly inside, positive outside.
    pub fn margin(&self, x: &Vector) -> f64 {
        (0..self.num_facets())
            .map(|i| self.a.row(i).transpose().dot(x) - self.b[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &Vector) -> bool {
        let scale = 1.0 + self.b.abs().max() + x.abs().max();
        self.margin(x) <= 1e-9 * scale
    }

    /// True when the origin is in the interior.
    pub fn contains_origin_strictly(&self) -> bool {
        self.b.min() > 0.0
    }

    /// Shrinks toward the origin: `{x | A x <= t b} = t {x | A x <= b}`.
    pub fn scale(&self, t: f64) -> Result<Polytope> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::invalid(format!("scale factor {t} outside (0, 1]")));
        }
        Ok(Polytope {
            a: self.a.clone(),
            b: &self.b * t,
            vertices: self.vertices.iter().map(|v| v * t).collect(),
        })
    }

    /// Cached vertex list (empty above dimension three).
    pub fn vertices(&self) -> &[Vector] {
        &self.vertices
    }

    /// Smallest axis box containing the polytope.
    pub fn bounding_box(&self) -> Result<AxisBox> {
        if self.vertices.is_empty() {
            return Err(Error::invalid(
                "bounding box needs the vertex cache (dimension <= 3)",
            ));
        }
        let n = self.dim();
        let mut lo = Vector::from_element(n, f64::INFINITY);
        let mut hi = Vector::from_element(n, f64::NEG_INFINITY);
        for v in &self.vertices {
            for i in 0..n {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        AxisBox::new(lo, hi)
    }

    pub fn to_json(&self) -> String {
        let file = PolytopeFile {
            schema_version: 1,
            a: (0..self.a.nrows())
                .map(|i| self.a.row(i).iter().copied().collect())
                .collect(),
            b: self.b.iter().copied().collect(),
        };
        serde_json::to_string_pretty(&file).expect("polytope serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolytopeFile = serde_json::from_str(text).map_err(|e| Error::MalformedFile {
            path: "<inline json>".into(),
            reason: e.to_string(),
        })?;
        let m = file.a.len();
        if m == 0 {
            return Err(Error::invalid("polytope with no facets"));
        }
        let n = file.a[0].len();
        if file.a.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("ragged facet matrix"));
        }
        let a = Matrix::from_row_iterator(m, n, file.a.iter().flatten().copied());
        Polytope::from_halfspaces(a, Vector::from_vec(file.b))
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
struct PolytopeFile {
    #[serde(default = "one")]
    schema_version: u32,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn one() -> u32 {
    1
}

/// Rejects halfspace systems with a nontrivial recession cone. A nonzero
/// direction `d` with `A d <= 0` can only exist if either `A` is rank
/// deficient (the cone contains a line) or some extreme ray does, and extreme
/// rays lie on `n - 1` active constraints: perpendicular to one normal in 2-D,
/// along a cross product of two normals in 3-D.
fn check_bounded(a: &Matrix, b: &Vector) -> Result<()> {
    let n = a.ncols();
    let rank = a.clone().svd(false, false).rank(1e-10 * (1.0 + a.amax()));
    if rank < n {
        return Err(Error::Unbounded("facet normals do not span the space".into()));
    }
    let is_recession = |d: &Vector| -> bool {
        let norm = d.abs().max();
        if norm < 1e-12 {
            return false;
        }
        let u = d / norm;
        (0..a.nrows()).all(|i| a.row(i).transpose().dot(&u) <= 1e-9 * (1.0 + a.row(i).amax()))
    };
    match n {
        1 => {
            // Need one positive and one negative normal.
            let has_pos = (0..a.nrows()).any(|i| a[(i, 0)] > 0.0);
            let has_neg = (0..a.nrows()).any(|i| a[(i, 0)] < 0.0);
            if !(has_pos && has_neg) {
                return Err(Error::Unbounded("interval missing one side".into()));
            }
        }
        2 => {
            for i in 0..a.nrows() {
                let d = Vector::from_vec(vec![-a[(i, 1)], a[(i, 0)]]);
                if is_recession(&d) || is_recession(&(-&d)) {
                    return Err(Error::Unbounded(format!(
                        "recession direction along facet {i}"
                    )));
                }
            }
        }
        3 => {
            for i in 0..a.nrows() {
                for j in (i + 1)..a.nrows() {
                    let u = a.row(i).transpose();
                    let v = a.row(j).transpose();
                    let d = Vector::from_vec(vec![
                        u[1] * v[2] - u[2] * v[1],
                        u[2] * v[0] - u[0] * v[2],
                        u[0] * v[1] - u[1] * v[0],
                    ]);
                    if is_recession(&d) || is_recession(&(-&d)) {
                        return Err(Error::Unbounded(format!(
                            "recession direction from facets {i}, {j}"
                        )));
                    }
                }
            }
        }
        _ => interval_boundedness(a, b)?,
    }
    Ok(())
}

/// Conservative boundedness proof by interval constraint tightening. Succeeds
/// only when every coordinate acquires finite bounds; refusal does not mean
/// the polytope is unbounded, just unverifiable by this method.
fn interval_boundedness(a: &Matrix, b: &Vector) -> Result<()> {
    let (m, n) = (a.nrows(), a.ncols());
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for _ in 0..4 * m {
        let mut changed = false;
        for i in 0..m {
            for j in 0..n {
                let aij = a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                // a_ij x_j <= b_i - sum_{k != j} min over box of a_ik x_k
                let mut rest = 0.0;
                let mut finite = true;
                for k in 0..n {
                    if k == j {
                        continue;
                    }
                    let aik = a[(i, k)];
                    let low = if aik >= 0.0 { aik * lo[k] } else { aik * hi[k] };
                    if !low.is_finite() {
                        finite = false;
                        break;
                    }
                    rest += low;
                }
                if !finite {
                    continue;
                }
                let r = (b[i] - rest) / aij;
                if aij > 0.0 {
                    if r < hi[j] - 1e-12 {
                        hi[j] = r;
                        changed = true;
                    }
                } else if r > lo[j] + 1e-12 {
                    lo[j] = r;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if lo.iter().any(|v| !v.is_finite()) || hi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unbounded(
            "interval tightening cannot verify boundedness above dimension 3".into(),
        ));
    }
    Ok(())
}

/// Enumerates vertices of `{A x <= b}` (dimension <= 3) by intersecting every
/// choice of `n` facets and keeping feasible intersection points.
fn enumerate_vertices(a: &Matrix, b: &Vector) -> Result<Vec<Vector>> {
    let (m, n) = (a.nrows(), a.ncols());
    let scale = 1.0 + b.abs().max();
    let feasible = |x: &Vector| -> bool {
        (0..m).all(|i| {
            a.row(i).transpose().dot(x) <= b[i] + 1e-8 * (scale + x.abs().max() * a.row(i).amax())
        })
    };
    let mut verts: Vec<Vector> = Vec::new();
    let mut push = |x: Vector| {
        if x.iter().all(|v| v.is_finite())
            && feasible(&x)
            && !verts.iter().any(|v| (v - &x).abs().max() < 1e-7 * scale)
        {
            verts.push(x);
        }
    };
    let mut solve = |rows: &[usize]| {
        let sub = Matrix::from_fn(n, n, |r, c| a[(rows[r], c)]);
        let rhs = Vector::from_fn(n, |r, _| b[rows[r]]);
        if let Some(sol) = sub.lu().solve(&rhs) {
            push(sol);
        }
    };
    match n {
        1 => {
            for i in 0..m {
                solve(&[i]);
            }
        }
        2 => {
            for i in 0..m {
                for j in (i + 1)..m {
                    solve(&[i, j]);
                }
            }
        }
        3 => {
            for i in 0..m {
                for j in (i + 1)..m {
                    for k in (j + 1)..m {
                        solve(&[i, j, k]);
                    }
                }
            }
        }
        _ => unreachable!("vertex enumeration is only called for n <= 3"),
    }
    Ok(verts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_invariants() {
        assert!(AxisBox::new(Vector::zeros(2), Vector::from_element(2, 1.0)).is_ok());
        assert!(AxisBox::new(Vector::from_element(2, 1.0), Vector::zeros(2)).is_err());
        assert!(AxisBox::new(Vector::zeros(2), Vector::zeros(2)).is_err());
    }

    #[test]
    fn box_polytope_agree_on_membership() {
        let bx = AxisBox::new(
            Vector::from_vec(vec![-1.0, -0.5]),
            Vector::from_vec(vec![0.5, 2.0]),
        )
        .unwrap();
        let poly = bx.to_polytope();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x = Vector::from_fn(2, |_, _| rng.random_range(-2.0..3.0));
            assert_eq!(bx.contains(&x), poly.margin(&x) <= 1e-12);
        }
    }

    #[test]
    fn halfspace_constructor_accepts_square() {
        let bx = AxisBox::centered(2, 1.0).unwrap().to_polytope();
        let rebuilt = Polytope::from_halfspaces(bx.a().clone(), bx.b().clone()).unwrap();
        assert_eq!(rebuilt.vertices().len(), 4);
        assert!(rebuilt.contains_origin_strictly());
    }

    #[test]
    fn unbounded_halfspaces_rejected() {
        // Only upper bounds: x <= 1, y <= 1, x + y <= 1.
        let a = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = Vector::from_element(3, 1.0);
        assert!(matches!(
            Polytope::from_halfspaces(a, b),
            Err(Error::Unbounded(_))
        ));
    }

    #[test]
    fn unbounded_3d_slab_rejected() {
        // Bounds in x and y only; z free.
        let a = Matrix::from_row_slice(
            4,
            3,
            &[
                1.0, 0.0, 0.0, //
                -1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, -1.0, 0.0,
            ],
        );
        let b = Vector::from_element(4, 1.0);
        assert!(matches!(
            Polytope::from_halfspaces(a, b),
            Err(Error::Unbounded(_))
        ));
    }

    #[test]
    fn empty_polytope_rejected() {
        // x <= -1 and x >= 1 simultaneously (plus y bounds).
        let a = Matrix::from_row_slice(
            4,
            2,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        );
        let b = Vector::from_vec(vec![-1.0, -1.0, 1.0, 1.0]);
        assert!(matches!(
            Polytope::from_halfspaces(a, b),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn scale_composes_multiplicatively() {
        let poly = AxisBox::centered(2, 1.0).unwrap().to_polytope();
        let once = poly.scale(0.6).unwrap().scale(0.5).unwrap();
        let direct = poly.scale(0.3).unwrap();
        assert!((once.b() - direct.b()).abs().max() < 1e-12);
    }

    #[test]
    fn scale_point_nine_square() {
        let poly = AxisBox::centered(2, 1.0).unwrap().to_polytope();
        let s = poly.scale(0.9).unwrap();
        assert!(s.contains(&Vector::from_element(2, 0.89)));
        assert!(!s.contains(&Vector::from_element(2, 0.91)));
    }

    #[test]
    fn scale_identity_at_one() {
        let poly = AxisBox::centered(2, 1.0).unwrap().to_polytope();
        let s = poly.scale(1.0).unwrap();
        assert_eq!(s.b(), poly.b());
    }

    #[test]
    fn vertex_enumeration_simplex_3d() {
        // x,y,z >= 0 and x+y+z <= 1: four vertices.
        let a = Matrix::from_row_slice(
            4,
            3,
            &[
                -1.0, 0.0, 0.0, //
                0.0, -1.0, 0.0, //
                0.0, 0.0, -1.0, //
                1.0, 1.0, 1.0,
            ],
        );
        let b = Vector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let poly = Polytope::from_halfspaces(a, b).unwrap();
        assert_eq!(poly.vertices().len(), 4);
    }

    #[test]
    fn json_roundtrip() {
        let poly = AxisBox::centered(3, 0.7).unwrap().to_polytope();
        let back = Polytope::from_json(&poly.to_json()).unwrap();
        assert!((poly.a() - back.a()).abs().max() < 1e-15);
        assert!((poly.b() - back.b()).abs().max() < 1e-15);
    }

    #[test]
    fn bounding_box_covers_vertices() {
        let a = Matrix::from_row_slice(
            4,
            2,
            &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0],
        );
        let b = Vector::from_element(4, 1.0);
        let poly = Polytope::from_halfspaces(a, b).unwrap();
        let bb = poly.bounding_box().unwrap();
        for v in poly.vertices() {
            assert!(bb.contains(v));
        }
    }
}

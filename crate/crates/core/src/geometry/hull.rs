//! Convex hulls in two and three dimensions: monotone chain and incremental
//! insertion with horizon repair. Output is an H-representation polytope with
//! the input vertices cached.

use crate::{Error, Matrix, Result, Vector};

use super::Polytope;

/// Convex hull of a point cloud. Supports dimensions two and three; input
/// must be full-dimensional (at least `n + 1` affinely independent points).
pub fn convex_hull(points: &[Vector]) -> Result<Polytope> {
    if points.is_empty() {
        return Err(Error::DegenerateHull("no points".into()));
    }
    let n = points[0].len();
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::dim(n, 0, "hull input dimensions"));
    }
    if points.iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hull input".into()));
    }
    match n {
        2 => hull_2d(points),
        3 => hull_3d(points),
        _ => Err(Error::invalid(format!(
            "convex hull supports dimensions 2 and 3, got {n}"
        ))),
    }
}

fn cross2(o: &Vector, a: &Vector, b: &Vector) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone chain. Returns counterclockwise hull vertices converted to facets
/// with outward unit normals.
fn hull_2d(points: &[Vector]) -> Result<Polytope> {
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let eps = 1e-12 * scale * scale;

    let mut pts: Vec<Vector> = points.to_vec();
    pts.sort_by(|a, b| (a[0], a[1]).partial_cmp(&(b[0], b[1])).unwrap());
    pts.dedup_by(|a, b| (&*a - &*b).abs().max() < 1e-12 * scale);
    if pts.len() < 3 {
        return Err(Error::DegenerateHull("fewer than 3 distinct points".into()));
    }

    let mut lower: Vec<Vector> = Vec::new();
    for p in &pts {
        while lower.len() >= 2
            && cross2(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= eps
        {
            lower.pop();
        }
        lower.push(p.clone());
    }
    let mut upper: Vec<Vector> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2
            && cross2(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= eps
        {
            upper.pop();
        }
        upper.push(p.clone());
    }
    lower.pop();
    upper.pop();
    let hull: Vec<Vector> = lower.into_iter().chain(upper).collect();
    if hull.len() < 3 {
        return Err(Error::DegenerateHull("points are collinear".into()));
    }

    let m = hull.len();
    let mut a = Matrix::zeros(m, 2);
    let mut b = Vector::zeros(m);
    for i in 0..m {
        let p = &hull[i];
        let q = &hull[(i + 1) % m];
        // CCW edge p -> q: outward normal is the edge direction rotated -90.
        let mut nx = q[1] - p[1];
        let mut ny = p[0] - q[0];
        let len = (nx * nx + ny * ny).sqrt();
        nx /= len;
        ny /= len;
        a[(i, 0)] = nx;
        a[(i, 1)] = ny;
        b[i] = nx * p[0] + ny * p[1];
    }
    Ok(Polytope::from_parts(a, b, hull))
}

struct Face {
    /// Vertex indices, counterclockwise seen from outside.
    v: [usize; 3],
    normal: Vector,
    offset: f64,
}

fn cross3(u: &Vector, v: &Vector) -> Vector {
    Vector::from_vec(vec![
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ])
}

fn make_face(pts: &[Vector], v: [usize; 3], inner: &Vector) -> Option<Face> {
    let e1 = &pts[v[1]] - &pts[v[0]];
    let e2 = &pts[v[2]] - &pts[v[0]];
    let mut normal = cross3(&e1, &e2);
    let norm = normal.norm();
    if norm < 1e-14 {
        return None;
    }
    normal /= norm;
    let mut offset = normal.dot(&pts[v[0]]);
    let mut v = v;
    if normal.dot(inner) > offset {
        // Flip to keep the interior reference point on the inside.
        normal = -normal;
        offset = -offset;
        v.swap(1, 2);
    }
    Some(Face { v, normal, offset })
}

/// Incremental insertion: for each point, delete the faces it sees, then
/// stitch new faces along the horizon (edges between a deleted and a kept
/// face).
fn hull_3d(points: &[Vector]) -> Result<Polytope> {
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let eps = 1e-9 * scale;

    // Seed tetrahedron: spread-out extremes, then the farthest outliers.
    let i0 = 0;
    let i1 = (0..points.len())
        .max_by(|&a, &b| {
            let da = (&points[a] - &points[i0]).norm();
            let db = (&points[b] - &points[i0]).norm();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    if (&points[i1] - &points[i0]).norm() < eps {
        return Err(Error::DegenerateHull("all points coincide".into()));
    }
    let dir = &points[i1] - &points[i0];
    let i2 = (0..points.len())
        .max_by(|&a, &b| {
            let da = cross3(&dir, &(&points[a] - &points[i0])).norm();
            let db = cross3(&dir, &(&points[b] - &points[i0])).norm();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let plane_n = cross3(&dir, &(&points[i2] - &points[i0]));
    if plane_n.norm() < eps * dir.norm() {
        return Err(Error::DegenerateHull("points are collinear".into()));
    }
    let i3 = (0..points.len())
        .max_by(|&a, &b| {
            let da = plane_n.dot(&(&points[a] - &points[i0])).abs();
            let db = plane_n.dot(&(&points[b] - &points[i0])).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    if plane_n.dot(&(&points[i3] - &points[i0])).abs() < eps * plane_n.norm() {
        return Err(Error::DegenerateHull("points are coplanar".into()));
    }

    let pts: Vec<Vector> = points.to_vec();
    let inner = (&pts[i0] + &pts[i1] + &pts[i2] + &pts[i3]) / 4.0;
    let mut faces: Vec<Face> = [
        [i0, i1, i2],
        [i0, i1, i3],
        [i0, i2, i3],
        [i1, i2, i3],
    ]
    .into_iter()
    .filter_map(|v| make_face(&pts, v, &inner))
    .collect();
    if faces.len() != 4 {
        return Err(Error::DegenerateHull("seed tetrahedron is flat".into()));
    }

    for p in 0..pts.len() {
        if p == i0 || p == i1 || p == i2 || p == i3 {
            continue;
        }
        let x = &pts[p];
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&f| faces[f].normal.dot(x) > faces[f].offset + eps)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // Horizon: directed edges of visible faces whose reverse is not on a
        // visible face.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &f in &visible {
            let v = faces[f].v;
            for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                if let Some(pos) = edges.iter().position(|&(a, b)| (b, a) == e) {
                    edges.remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        let mut keep: Vec<Face> = Vec::with_capacity(faces.len());
        for (f, face) in faces.into_iter().enumerate() {
            if !visible.contains(&f) {
                keep.push(face);
            }
        }
        faces = keep;
        for (u, v) in edges {
            if let Some(face) = make_face(&pts, [u, v, p], &inner) {
                faces.push(face);
            }
        }
    }

    // Merge coplanar triangles into single halfspaces.
    let mut a_rows: Vec<Vector> = Vec::new();
    let mut b_vals: Vec<f64> = Vec::new();
    let mut used: Vec<usize> = Vec::new();
    for face in &faces {
        let dup = a_rows.iter().zip(&b_vals).any(|(n, &o)| {
            (n - &face.normal).abs().max() < 1e-9 && (o - face.offset).abs() < 1e-9 * scale
        });
        if !dup {
            a_rows.push(face.normal.clone());
            b_vals.push(face.offset);
        }
        for &vi in &face.v {
            if !used.contains(&vi) {
                used.push(vi);
            }
        }
    }
    used.sort_unstable();
    let verts: Vec<Vector> = used.iter().map(|&i| pts[i].clone()).collect();
    let m = a_rows.len();
    let a = Matrix::from_fn(m, 3, |i, j| a_rows[i][j]);
    let b = Vector::from_vec(b_vals);
    Ok(Polytope::from_parts(a, b, verts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v2(x: f64, y: f64) -> Vector {
        Vector::from_vec(vec![x, y])
    }

    #[test]
    fn unit_square_four_facets() {
        let pts = vec![v2(1.0, 1.0), v2(-1.0, 1.0), v2(-1.0, -1.0), v2(1.0, -1.0)];
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.num_facets(), 4);
        assert!(hull.contains(&Vector::zeros(2)));
        assert!(hull.contains_origin_strictly());
    }

    #[test]
    fn interior_points_ignored() {
        let mut pts = vec![v2(1.0, 1.0), v2(-1.0, 1.0), v2(-1.0, -1.0), v2(1.0, -1.0)];
        pts.push(v2(0.0, 0.0));
        pts.push(v2(0.3, -0.2));
        pts.push(v2(-0.5, 0.5));
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.num_facets(), 4);
        assert_eq!(hull.vertices().len(), 4);
    }

    #[test]
    fn all_inputs_inside_hull_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pts: Vec<Vector> = (0..200)
            .map(|_| v2(rng.random_range(-2.0..2.0), rng.random_range(-1.0..3.0)))
            .collect();
        let hull = convex_hull(&pts).unwrap();
        for p in &pts {
            assert!(hull.margin(p) <= 1e-9, "margin = {}", hull.margin(p));
        }
    }

    #[test]
    fn collinear_rejected() {
        let pts = vec![v2(0.0, 0.0), v2(1.0, 1.0), v2(2.0, 2.0), v2(3.0, 3.0)];
        assert!(matches!(
            convex_hull(&pts),
            Err(Error::DegenerateHull(_))
        ));
    }

    #[test]
    fn random_3d_points_inside_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<Vector> = (0..50)
            .map(|_| {
                Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))
            })
            .collect();
        let hull = convex_hull(&pts).unwrap();
        for p in &pts {
            assert!(hull.margin(p) <= 1e-8, "margin = {}", hull.margin(p));
        }
    }

    #[test]
    fn hull_of_hull_idempotent_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let pts: Vec<Vector> = (0..50)
            .map(|_| Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let hull = convex_hull(&pts).unwrap();
        let again = convex_hull(hull.vertices()).unwrap();
        // Same vertex set either way.
        assert_eq!(hull.vertices().len(), again.vertices().len());
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..2000 {
            let x = Vector::from_fn(3, |_, _| rng.random_range(-1.2..1.2));
            assert_eq!(hull.contains(&x), again.contains(&x));
        }
    }

    #[test]
    fn octahedron_hull_3d() {
        let mut pts = Vec::new();
        for i in 0..3 {
            for s in [-1.0, 1.0] {
                let mut p = Vector::zeros(3);
                p[i] = s;
                pts.push(p);
            }
        }
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.vertices().len(), 6);
        assert_eq!(hull.num_facets(), 8);
        assert!(hull.contains_origin_strictly());
        // |x|+|y|+|z| <= 1 membership agrees.
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..2000 {
            let x = Vector::from_fn(3, |_, _| rng.random_range(-1.1..1.1));
            let inside = x.iter().map(|v| v.abs()).sum::<f64>() <= 1.0 - 1e-9;
            let outside = x.iter().map(|v| v.abs()).sum::<f64>() >= 1.0 + 1e-9;
            if inside {
                assert!(hull.contains(&x));
            }
            if outside {
                assert!(!hull.contains(&x));
            }
        }
    }
}

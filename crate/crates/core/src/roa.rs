//! Certified region-of-attraction estimates.
//!
//! Once a candidate is certified, two level constants turn it into sets: the
//! largest sublevel set of `V` inside the region (level `c_max`, from the
//! boundary minimum) is the estimate of the region of attraction, and the
//! sublevel set every disturbed successor of the excluded box lands in
//! (level `c_min`, from the successor maximum) is where trajectories
//! ultimately collect.  Both constants come from the verifier in the
//! conservative direction, so gaps only shrink the claim.  This module adds
//! membership tests, plot-ready value grids with contour extraction, and a
//! simulation cross-check of the certified behavior.

use std::path::Path;


use crate::dynamics::{DisturbancePolicy, UncertainSystem};
use crate::lyapunov::{self, LyapCandidate};
use crate::verifier::{self, VerifierConfig};
use crate::{par, seed, Error, Result, Vector};

/// Level constants of a certified candidate: `c_max` is a sound lower bound
/// on the minimum of `V` over the region boundary, `c_min` a sound upper
/// bound on `V` of any disturbed successor of the excluded box.  Bounds stay
/// sound when the verifier hits its node cap; they are just looser.
pub fn levels(
    sys: &UncertainSystem,
    cand: &LyapCandidate,
    cfg: &VerifierConfig,
) -> Result<(f64, f64)> {
    let boundary = verifier::min_v_boundary(sys, cand, sys.roi(), cfg)?;
    let successor = verifier::max_v_successor(sys, cand, sys.excluded(), cfg)?;
    Ok((boundary.bound, successor.bound))
}

/// A certified estimate: the candidate plus its two level constants.
#[derive(Debug, Clone)]
pub struct RoaEstimate {
    candidate: LyapCandidate,
    c_max: f64,
    c_min: f64,
}

impl RoaEstimate {
    pub fn new(candidate: LyapCandidate, c_max: f64, c_min: f64) -> Result<Self> {
        if !c_max.is_finite() || !c_min.is_finite() {
            return Err(Error::NonFinite("level constant".into()));
        }
        Ok(RoaEstimate {
            candidate,
            c_max,
            c_min,
        })
    }

    pub fn candidate(&self) -> &LyapCandidate {
        &self.candidate
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn c_min(&self) -> f64 {
        self.c_min
    }

    /// True when the estimate claims nothing: the attractor level must sit
    /// strictly below the region level, and the region level must be
    /// positive for the sublevel set to have interior.
    pub fn degenerate(&self) -> bool {
        !(self.c_min < self.c_max) || !(self.c_max > 0.0)
    }

    /// Membership in the certified set: inside the region of interest and
    /// at or below the region level.
    pub fn contains(&self, sys: &UncertainSystem, x: &Vector) -> Result<bool> {
        if !sys.roi().contains(x) {
            return Ok(false);
        }
        Ok(lyapunov::eval_v(&self.candidate, sys, x)? <= self.c_max)
    }
}

/// Values of `V` on a uniform planar grid, with the membership flag per
/// point.  For three-dimensional systems the grid spans an axis-aligned
/// slice through the origin; `axes` names the two state coordinates that
/// vary.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    /// State coordinates spanned by the grid; all others are fixed at zero.
    pub axes: (usize, usize),
    /// Full state dimension the grid was built from.
    pub dim: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major: `values[iy * xs.len() + ix]`.
    pub values: Vec<f64>,
    pub inside: Vec<bool>,
}

impl ValueGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs.len() + ix]
    }

    pub fn is_inside(&self, ix: usize, iy: usize) -> bool {
        self.inside[iy * self.xs.len() + ix]
    }

    /// Full state vector of grid point `(ix, iy)`.
    pub fn state(&self, ix: usize, iy: usize) -> Vector {
        let mut x = Vector::zeros(self.dim);
        x[self.axes.0] = self.xs[ix];
        x[self.axes.1] = self.ys[iy];
        x
    }

    /// Writes `x_i, x_j, v, inside` rows with the one-based coordinate
    /// names of the grid axes.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([
            format!("x_{}", self.axes.0 + 1),
            format!("x_{}", self.axes.1 + 1),
            "v".to_string(),
            "inside".to_string(),
        ])?;
        for iy in 0..self.ys.len() {
            for ix in 0..self.xs.len() {
                writer.write_record([
                    format!("{:.17}", self.xs[ix]),
                    format!("{:.17}", self.ys[iy]),
                    format!("{:.17}", self.value(ix, iy)),
                    self.is_inside(ix, iy).to_string(),
                ])?;
            }
        }
        writer.flush().map_err(Error::Io)?;
        Ok(())
    }
}

/// Evaluates `V` and membership on uniform grids over the region's bounding
/// box: one grid for planar systems, the two origin slices (first and last
/// coordinate fixed at zero) for three-dimensional ones.  `resolution` is
/// the point count per axis.
pub fn value_grid(
    sys: &UncertainSystem,
    est: &RoaEstimate,
    resolution: usize,
    workers: usize,
) -> Result<Vec<ValueGrid>> {
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    let n = sys.dim();
    let planes: Vec<(usize, usize)> = match n {
        2 => vec![(0, 1)],
        3 => vec![(1, 2), (0, 1)],
        _ => {
            return Err(Error::invalid(
                "plot grids exist for 2- and 3-dimensional systems",
            ))
        }
    };
    let bbox = sys.roi().bounding_box()?;
    let mut grids = Vec::new();
    for axes in planes {
        let axis_points = |c: usize| -> Vec<f64> {
            let (lo, hi) = (bbox.lo()[c], bbox.hi()[c]);
            (0..resolution)
                .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
                .collect()
        };
        let xs = axis_points(axes.0);
        let ys = axis_points(axes.1);
        let row_ids: Vec<usize> = (0..ys.len()).collect();
        let rows = par::map(&row_ids, workers, |&iy| -> Result<Vec<(f64, bool)>> {
            let mut row = Vec::with_capacity(xs.len());
            let mut x = Vector::zeros(n);
            for &gx in &xs {
                x.fill(0.0);
                x[axes.0] = gx;
                x[axes.1] = ys[iy];
                let v = lyapunov::eval_v(&est.candidate, sys, &x)?;
                let inside = sys.roi().contains(&x) && v <= est.c_max;
                row.push((v, inside));
            }
            Ok(row)
        });
        let mut values = Vec::with_capacity(resolution * resolution);
        let mut inside = Vec::with_capacity(resolution * resolution);
        for row in rows {
            for (v, flag) in row? {
                values.push(v);
                inside.push(flag);
            }
        }
        grids.push(ValueGrid {
            axes,
            dim: n,
            xs,
            ys,
            values,
            inside,
        });
    }
    Ok(grids)
}

/// Extracts the level curve `V = level` from a grid by marching squares,
/// as line segments in the grid plane.  Cell order and case handling are
/// fixed, so output is deterministic.
pub fn contour_segments(grid: &ValueGrid, level: f64) -> Vec<((f64, f64), (f64, f64))> {
    let nx = grid.xs.len();
    let ny = grid.ys.len();
    let mut segments = Vec::new();
    for iy in 0..ny.saturating_sub(1) {
        for ix in 0..nx.saturating_sub(1) {
            let (x0, x1) = (grid.xs[ix], grid.xs[ix + 1]);
            let (y0, y1) = (grid.ys[iy], grid.ys[iy + 1]);
            let va = grid.value(ix, iy);
            let vb = grid.value(ix + 1, iy);
            let vc = grid.value(ix + 1, iy + 1);
            let vd = grid.value(ix, iy + 1);
            let mut idx = 0u8;
            if va > level {
                idx |= 1;
            }
            if vb > level {
                idx |= 2;
            }
            if vc > level {
                idx |= 4;
            }
            if vd > level {
                idx |= 8;
            }
            if idx == 0 || idx == 15 {
                continue;
            }
            let lerp = |p: f64, q: f64, vp: f64, vq: f64| p + (q - p) * (level - vp) / (vq - vp);
            // Crossing points on the south, east, north, and west edges.
            let s = (lerp(x0, x1, va, vb), y0);
            let e = (x1, lerp(y0, y1, vb, vc));
            let nn = (lerp(x0, x1, vd, vc), y1);
            let w = (x0, lerp(y0, y1, va, vd));
            match idx {
                1 | 14 => segments.push((w, s)),
                2 | 13 => segments.push((s, e)),
                3 | 12 => segments.push((w, e)),
                4 | 11 => segments.push((e, nn)),
                6 | 9 => segments.push((s, nn)),
                7 | 8 => segments.push((w, nn)),
                5 => {
                    let center = 0.25 * (va + vb + vc + vd);
                    if center > level {
                        segments.push((w, nn));
                        segments.push((s, e));
                    } else {
                        segments.push((w, s));
                        segments.push((e, nn));
                    }
                }
                10 => {
                    let center = 0.25 * (va + vb + vc + vd);
                    if center > level {
                        segments.push((w, s));
                        segments.push((e, nn));
                    } else {
                        segments.push((w, nn));
                        segments.push((s, e));
                    }
                }
                _ => unreachable!("cases 0 and 15 are filtered"),
            }
        }
    }
    segments
}

/// Renders the planar picture as SVG: white background, region polygon,
/// excluded box, then the certified level curve.  Element order, classes,
/// and colors are fixed so the output can be golden-file tested.
pub fn save_svg(
    sys: &UncertainSystem,
    est: &RoaEstimate,
    grid: &ValueGrid,
    path: impl AsRef<Path>,
) -> Result<()> {
    if sys.dim() != 2 || grid.axes != (0, 1) {
        return Err(Error::invalid(
            "svg output needs a planar system and its full-plane grid",
        ));
    }
    let bbox = sys.roi().bounding_box()?;
    let (lo0, hi0) = (bbox.lo()[0], bbox.hi()[0]);
    let (lo1, hi1) = (bbox.lo()[1], bbox.hi()[1]);
    let margin = 20.0;
    let span = 560.0;
    let scale = span / (hi0 - lo0).max(hi1 - lo1);
    let width = (hi0 - lo0) * scale + 2.0 * margin;
    let height = (hi1 - lo1) * scale + 2.0 * margin;
    let px = |x: f64| margin + (x - lo0) * scale;
    let py = |y: f64| margin + (hi1 - y) * scale;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.3} {height:.3}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect class=\"bg\" x=\"0\" y=\"0\" width=\"{width:.3}\" height=\"{height:.3}\" fill=\"#ffffff\"/>\n"
    ));

    // Region polygon, vertices ordered around the centroid.
    let mut verts: Vec<Vector> = sys.roi().vertices().to_vec();
    let mut centroid = Vector::zeros(2);
    for v in &verts {
        centroid += v;
    }
    centroid /= verts.len().max(1) as f64;
    verts.sort_by(|a, b| {
        let ta = (a[1] - centroid[1]).atan2(a[0] - centroid[0]);
        let tb = (b[1] - centroid[1]).atan2(b[0] - centroid[0]);
        ta.total_cmp(&tb)
    });
    let points: Vec<String> = verts
        .iter()
        .map(|v| format!("{:.3},{:.3}", px(v[0]), py(v[1])))
        .collect();
    svg.push_str(&format!(
        "  <polygon class=\"roi\" points=\"{}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"2\"/>\n",
        points.join(" ")
    ));

    let bx = sys.excluded();
    svg.push_str(&format!(
        "  <rect class=\"excluded\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"#f2f2f2\" stroke=\"#999999\" stroke-width=\"1.5\"/>\n",
        px(bx.lo()[0]),
        py(bx.hi()[1]),
        (bx.hi()[0] - bx.lo()[0]) * scale,
        (bx.hi()[1] - bx.lo()[1]) * scale,
    ));

    let mut d = String::new();
    for (a, b) in contour_segments(grid, est.c_max) {
        d.push_str(&format!(
            "M {:.3} {:.3} L {:.3} {:.3} ",
            px(a.0),
            py(a.1),
            px(b.0),
            py(b.1)
        ));
    }
    svg.push_str(&format!(
        "  <path class=\"roa\" d=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        d.trim_end()
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Result of the simulation cross-check.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub trajectories: usize,
    /// Runs whose final value is at or below the attractor level.
    pub converged: usize,
    pub fraction: f64,
    /// Visited states in the region but outside the excluded box where the
    /// realized one-step difference failed to decrease.  Zero for a valid
    /// certificate.
    pub decrease_violations: usize,
}

/// Samples initial states in the certified set, rolls the disturbed
/// dynamics forward, and reports how many runs end at or below the
/// attractor level.  Also recounts the decrease property along every
/// visited step as an independent check of the certificate.
pub fn validate_by_simulation(
    sys: &UncertainSystem,
    est: &RoaEstimate,
    n_trajectories: usize,
    steps: usize,
    run_seed: u64,
) -> Result<SimulationReport> {
    if n_trajectories == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    if est.degenerate() {
        return Err(Error::invalid(
            "degenerate estimate: attractor level not below region level",
        ));
    }
    let bbox = sys.roi().bounding_box()?;
    let mut rng = seed::rng(run_seed, "roa-init");
    let mut starts = Vec::with_capacity(n_trajectories);
    let mut attempts = 0usize;
    while starts.len() < n_trajectories {
        attempts += 1;
        if attempts > 1000 * n_trajectories {
            return Err(Error::EmptyRegion(
                "certified set too small to sample initial states".into(),
            ));
        }
        let x = bbox.sample(&mut rng);
        if est.contains(sys, &x)? {
            starts.push(x);
        }
    }
    let mut converged = 0usize;
    let mut decrease_violations = 0usize;
    for (i, x0) in starts.iter().enumerate() {
        let policy = DisturbancePolicy::Uniform {
            seed: seed::derive(run_seed, &format!("roa-w-{i}")),
        };
        let traj = sys.simulate(x0, steps, policy, None)?;
        for t in 0..traj.len() - 1 {
            let x = &traj.states[t];
            let in_scope = sys.roi().contains(x)
                && !(0..sys.dim())
                    .all(|c| x[c] > sys.excluded().lo()[c] && x[c] < sys.excluded().hi()[c]);
            if in_scope {
                let dv = lyapunov::eval_dv(&est.candidate, sys, x, &traj.disturbances[t])?;
                if dv >= 0.0 {
                    decrease_violations += 1;
                }
            }
        }
        if lyapunov::eval_v(&est.candidate, sys, traj.final_state())? <= est.c_min {
            converged += 1;
        }
    }
    Ok(SimulationReport {
        trajectories: n_trajectories,
        converged,
        fraction: converged as f64 / n_trajectories as f64,
        decrease_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errmodel::ErrorBound;
    use crate::geometry::AxisBox;
    use crate::relu::ReluNetwork;
    use crate::testutil::{netted_system, toy_system};
    use crate::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vcfg() -> VerifierConfig {
        VerifierConfig::default()
    }

    #[test]
    fn levels_for_zero_successor_system() {
        let sys = toy_system(0.0, 0.0);
        let cand = LyapCandidate::identity(0, 2);
        let (c_max, c_min) = levels(&sys, &cand, &vcfg()).unwrap();
        // Boundary minimum of |x|^2 on the unit square is 1 at edge
        // midpoints; every successor is the origin with value 0.
        assert!((c_max - 1.0).abs() <= 1e-6, "c_max = {c_max}");
        assert!((0.0..=1e-6).contains(&c_min), "c_min = {c_min}");
    }

    #[test]
    fn levels_are_conservative_against_samples() {
        let sys = netted_system(5);
        let cand = LyapCandidate::identity(0, 2);
        let (c_max, c_min) = levels(&sys, &cand, &vcfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut boundary_min = f64::INFINITY;
        for _ in 0..10_000 {
            let t = rng.random_range(-1.0..=1.0);
            let x = match rng.random_range(0..4) {
                0 => Vector::from_vec(vec![1.0, t]),
                1 => Vector::from_vec(vec![-1.0, t]),
                2 => Vector::from_vec(vec![t, 1.0]),
                _ => Vector::from_vec(vec![t, -1.0]),
            };
            boundary_min = boundary_min.min(lyapunov::eval_v(&cand, &sys, &x).unwrap());
        }
        assert!(
            c_max <= boundary_min + 1e-9,
            "c_max {c_max} above sampled boundary min {boundary_min}"
        );
        let mut successor_max = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let x = sys.excluded().sample(&mut rng);
            let y = sys.nominal(&x);
            successor_max = successor_max.max(lyapunov::eval_v(&cand, &sys, &y).unwrap());
        }
        assert!(
            c_min >= successor_max - 1e-9,
            "c_min {c_min} below sampled successor max {successor_max}"
        );
        assert!(c_min < c_max, "estimate should be nondegenerate");
    }

    #[test]
    fn membership_needs_region_and_level() {
        let sys = toy_system(0.5, 0.0);
        let est = RoaEstimate::new(LyapCandidate::identity(0, 2), 1.0, 0.005).unwrap();
        assert!(est.contains(&sys, &Vector::zeros(2)).unwrap());
        // In the region but above the level.
        assert!(!est
            .contains(&sys, &Vector::from_vec(vec![0.9, 0.9]))
            .unwrap());
        // Below the level but outside the region.
        assert!(!est
            .contains(&sys, &Vector::from_vec(vec![1.5, 0.0]))
            .unwrap());
        assert!(!est.degenerate());
        let bad = RoaEstimate::new(LyapCandidate::identity(0, 2), 0.005, 1.0).unwrap();
        assert!(bad.degenerate());
    }

    #[test]
    fn grid_membership_rechecks_pointwise_and_nests() {
        let sys = toy_system(0.5, 0.0);
        let tight = RoaEstimate::new(LyapCandidate::identity(0, 2), 0.5, 0.005).unwrap();
        let loose = RoaEstimate::new(LyapCandidate::identity(0, 2), 1.0, 0.005).unwrap();
        let g_tight = value_grid(&sys, &tight, 41, 1).unwrap().remove(0);
        let g_loose = value_grid(&sys, &loose, 41, 1).unwrap().remove(0);
        let mut tight_count = 0;
        for iy in 0..41 {
            for ix in 0..41 {
                let x = g_tight.state(ix, iy);
                if g_tight.is_inside(ix, iy) {
                    tight_count += 1;
                    assert!(g_tight.value(ix, iy) <= 0.5);
                    assert!(sys.roi().contains(&x));
                    // Nesting: a smaller level keeps a subset.
                    assert!(g_loose.is_inside(ix, iy));
                }
                let v = lyapunov::eval_v(tight.candidate(), &sys, &x).unwrap();
                assert!((v - g_tight.value(ix, iy)).abs() <= 1e-12);
            }
        }
        assert!(tight_count > 0);
        assert!(g_loose.inside.iter().filter(|f| **f).count() > tight_count);
    }

    #[test]
    fn grids_match_for_any_worker_count() {
        let sys = netted_system(3);
        let est = RoaEstimate::new(LyapCandidate::identity(0, 2), 0.8, 0.01).unwrap();
        let serial = value_grid(&sys, &est, 33, 1).unwrap();
        let parallel = value_grid(&sys, &est, 33, 4).unwrap();
        assert_eq!(serial[0].values, parallel[0].values);
        assert_eq!(serial[0].inside, parallel[0].inside);
    }

    #[test]
    fn three_dimensional_systems_get_two_origin_slices() {
        let sys = UncertainSystem::new(
            Matrix::identity(3, 3) * 0.5,
            ReluNetwork::zero(3, 3),
            ErrorBound::exact(),
            AxisBox::centered(3, 1.0).unwrap().to_polytope(),
            AxisBox::centered(3, 0.1).unwrap(),
        )
        .unwrap();
        let est = RoaEstimate::new(LyapCandidate::identity(0, 3), 1.0, 0.01).unwrap();
        let grids = value_grid(&sys, &est, 11, 1).unwrap();
        assert_eq!(grids.len(), 2);
        assert_eq!(grids[0].axes, (1, 2));
        assert_eq!(grids[1].axes, (0, 1));
        // The first slice fixes the first coordinate at zero.
        let x = grids[0].state(3, 7);
        assert_eq!(x[0], 0.0);
        let expect = lyapunov::eval_v(est.candidate(), &sys, &x).unwrap();
        assert!((grids[0].value(3, 7) - expect).abs() <= 1e-12);
    }

    #[test]
    fn contour_traces_the_level_circle() {
        let sys = toy_system(0.5, 0.0);
        let est = RoaEstimate::new(LyapCandidate::identity(0, 2), 0.25, 0.005).unwrap();
        let grid = value_grid(&sys, &est, 201, 1).unwrap().remove(0);
        let segments = contour_segments(&grid, est.c_max());
        assert!(!segments.is_empty());
        for (a, b) in segments {
            for p in [a, b] {
                let r = (p.0 * p.0 + p.1 * p.1).sqrt();
                assert!((r - 0.5).abs() <= 0.01, "contour point at radius {r}");
            }
        }
    }

    #[test]
    fn svg_has_fixed_element_order_and_is_deterministic() {
        let sys = toy_system(0.5, 0.0);
        let est = RoaEstimate::new(LyapCandidate::identity(0, 2), 0.25, 0.005).unwrap();
        let grid = value_grid(&sys, &est, 101, 1).unwrap().remove(0);
        let dir = std::env::temp_dir().join("roacert-roa-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("plot.svg");
        save_svg(&sys, &est, &grid, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bg = text.find("class=\"bg\"").unwrap();
        let roi = text.find("class=\"roi\"").unwrap();
        let excluded = text.find("class=\"excluded\"").unwrap();
        let roa = text.find("class=\"roa\"").unwrap();
        assert!(bg < roi && roi < excluded && excluded < roa);
        assert!(text.contains("#1f77b4"));
        save_svg(&sys, &est, &grid, &path).unwrap();
        assert_eq!(text, std::fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn grid_csv_layout() {
        let sys = toy_system(0.5, 0.0);
        let est = RoaEstimate::new(LyapCandidate::identity(0, 2), 1.0, 0.005).unwrap();
        let grid = value_grid(&sys, &est, 5, 1).unwrap().remove(0);
        let dir = std::env::temp_dir().join("roacert-roa-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("grid.csv");
        grid.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x_1,x_2,v,inside"));
        assert_eq!(lines.count(), 25);
    }

    #[test]
    fn simulation_confirms_convergence_to_attractor_level() {
        let sys = toy_system(0.5, 0.0);
        let cand = LyapCandidate::identity(0, 2);
        let (c_max, c_min) = levels(&sys, &cand, &vcfg()).unwrap();
        let est = RoaEstimate::new(cand, c_max, c_min).unwrap();
        let report = validate_by_simulation(&sys, &est, 200, 40, 3).unwrap();
        assert_eq!(report.trajectories, 200);
        assert_eq!(report.converged, 200);
        assert_eq!(report.fraction, 1.0);
        assert_eq!(report.decrease_violations, 0);
    }

    #[test]
    fn simulation_with_disturbances_still_converges() {
        let sys = toy_system(0.5, 0.01);
        let cand = LyapCandidate::identity(0, 2);
        let (c_max, c_min) = levels(&sys, &cand, &vcfg()).unwrap();
        assert!(c_min < c_max, "c_min {c_min} c_max {c_max}");
        let est = RoaEstimate::new(cand, c_max, c_min).unwrap();
        let report = validate_by_simulation(&sys, &est, 100, 60, 11).unwrap();
        assert_eq!(report.fraction, 1.0);
        assert_eq!(report.decrease_violations, 0);
    }
}

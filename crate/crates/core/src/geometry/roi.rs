//! Region-of-interest construction: grid the sample region, simulate each
//! initial state forward, keep the ones that settle near the origin, and take
//! the scaled convex hull.

use super::{convex_hull, AxisBox, Polytope};
use crate::{par, Error, Result, Vector};

/// Parameters for [`build_roi`].
#[derive(Debug, Clone)]
pub struct RoiConfig {
    /// Grid points per axis over the sample region.
    pub grid: usize,
    /// Simulation horizon in steps.
    pub steps: usize,
    /// A run converged when the final state has l-inf norm at most this.
    pub conv_tol: f64,
    /// Shrink factor applied to the hull of convergent initial states.
    pub tau: f64,
    /// Worker threads for the simulation sweep.
    pub workers: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            grid: 150,
            steps: 50,
            conv_tol: 0.05,
            tau: 0.9,
            workers: 1,
        }
    }
}

/// Simulates every grid point of `region` for `steps` steps of `f`, labels an
/// initial state convergent when its final state satisfies the tolerance, and
/// returns the tau-scaled convex hull of the convergent set.
pub fn build_roi<F>(f: F, region: &AxisBox, cfg: &RoiConfig) -> Result<Polytope>
where
    F: Fn(&Vector) -> Vector + Sync,
{
    if cfg.steps == 0 {
        return Err(Error::invalid("simulation horizon must be at least 1"));
    }
    if cfg.grid < 2 {
        return Err(Error::invalid("grid needs at least 2 points per axis"));
    }
    if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
        return Err(Error::invalid("tau must lie in (0, 1]"));
    }
    let initial = grid_points(region, cfg.grid);
    let converged = par::map(&initial, cfg.workers, |x0| {
        let mut x = x0.clone();
        for _ in 0..cfg.steps {
            x = f(&x);
            if x.iter().any(|v| !v.is_finite()) {
                return false;
            }
        }
        x.abs().max() <= cfg.conv_tol
    });
    let kept: Vec<Vector> = initial
        .into_iter()
        .zip(converged)
        .filter_map(|(x, ok)| ok.then_some(x))
        .collect();
    if kept.is_empty() {
        return Err(Error::NoConvergentSamples);
    }
    convex_hull(&kept)?.scale(cfg.tau)
}

/// Uniform grid over the box, `per_axis` points per coordinate, endpoints
/// included.
fn grid_points(region: &AxisBox, per_axis: usize) -> Vec<Vector> {
    let n = region.dim();
    let mut out = Vec::with_capacity(per_axis.pow(n as u32));
    let mut idx = vec![0usize; n];
    loop {
        out.push(Vector::from_fn(n, |i, _| {
            region.lo()[i] + region.width(i) * idx[i] as f64 / (per_axis - 1) as f64
        }));
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n {
                return out;
            }
        }
    }
}

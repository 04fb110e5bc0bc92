//! Epsilon-nets by uniform gridding: spacing `2 * eps` puts every point of
//! the region within l-inf distance `eps` of a sample.

use std::path::Path;

use super::{AxisBox, Polytope};
use crate::{Error, Result, Vector};

/// Default cap on the number of grid samples.
pub const DEFAULT_SAMPLE_CAP: usize = 5_000_000;

/// Region that can be gridded into an epsilon-net.
#[derive(Debug, Clone)]
pub enum Region {
    Box(AxisBox),
    Polytope(Polytope),
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box(b) => b.dim(),
            Region::Polytope(p) => p.dim(),
        }
    }

    pub fn bounding_box(&self) -> Result<AxisBox> {
        match self {
            Region::Box(b) => Ok(b.clone()),
            Region::Polytope(p) => p.bounding_box(),
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        match self {
            Region::Box(b) => b.contains(x),
            Region::Polytope(p) => p.contains(x),
        }
    }
}

/// An ordered list of samples covering a region at l-inf radius `eps`.
#[derive(Debug, Clone)]
pub struct EpsNet {
    points: Vec<Vector>,
    eps: f64,
}

impl EpsNet {
    pub fn new(points: Vec<Vector>, eps: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyRegion("epsilon-net with no samples".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(EpsNet { points, eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vector> {
        self.points.iter()
    }

    /// l-inf distance from `x` to the nearest sample.
    pub fn distance_to(&self, x: &Vector) -> f64 {
        self.points
            .iter()
            .map(|p| (p - x).abs().max())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.points[0].len();
        let mut writer = csv::Writer::from_path(path)?;
        let header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        writer.write_record(&header)?;
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|v| format!("{v:.17}")).collect();
            writer.write_record(&row)?;
        }
        writer.flush().map_err(Error::Io)?;
        Ok(())
    }
}

/// Grids the region's bounding box with spacing at most `2 * eps` per axis and
/// keeps the grid points the region needs for coverage. For a polytope, points
/// within `eps` of the boundary (measured through each facet's l1 norm) are
/// kept even when slightly outside, so that every point of the region has its
/// nearest grid point in the net.
pub fn grid_eps_net(region: &Region, eps: f64, cap: usize) -> Result<EpsNet> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("epsilon must be positive and finite"));
    }
    let bb = region.bounding_box()?;
    let n = bb.dim();
    let mut counts = Vec::with_capacity(n);
    let mut total: usize = 1;
    for i in 0..n {
        let m = ((bb.width(i) / (2.0 * eps)).ceil() as usize).max(1);
        counts.push(m + 1);
        total = total.saturating_mul(m + 1);
        if total > cap {
            return Err(Error::GridTooFine {
                requested: total,
                cap,
            });
        }
    }

    let keep = |g: &Vector| -> bool {
        match region {
            Region::Box(_) => true,
            Region::Polytope(p) => (0..p.num_facets()).all(|i| {
                let row = p.a().row(i);
                let slack: f64 = row.iter().map(|v| v.abs()).sum::<f64>() * eps;
                row.transpose().dot(g) <= p.b()[i] + slack + 1e-12
            }),
        }
    };

    let mut points = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let g = Vector::from_fn(n, |i, _| {
            let steps = counts[i] - 1;
            bb.lo()[i] + bb.width(i) * idx[i] as f64 / steps as f64
        });
        if keep(&g) {
            points.push(g);
        }
        // Odometer increment over the grid indices.
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n {
                return EpsNet::new(points, eps);
            }
        }
    }
}

//! Benchmark systems, Euler discretization, finite-difference linearization,
//! and trajectory simulation for the uncertain closed loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;

use crate::errmodel::ErrorBound;
use crate::geometry::{AxisBox, Polytope};
use crate::relu::ReluNetwork;
use crate::{Error, Matrix, Result, Vector};

/// A state-update map `x -> f(x)` with a name tag for artifacts and logs.
#[derive(Clone)]
pub struct NonlinearMap {
    name: String,
    dim: usize,
    f: Arc<dyn Fn(&Vector) -> Vector + Send + Sync>,
}

impl std::fmt::Debug for NonlinearMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl NonlinearMap {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        f: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        NonlinearMap {
            name: name.into(),
            dim,
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.dim);
        (self.f)(x)
    }

    /// Resolves a built-in map by name.
    pub fn builtin(name: &str) -> Result<NonlinearMap> {
        match name {
            "rational2d" => Ok(rational2d()),
            "poly3d" => Ok(euler_discretize(&poly3d_continuous(), 0.1)),
            other => Err(Error::invalid(format!(
                "unknown builtin system {other:?}; known: rational2d, poly3d"
            ))),
        }
    }
}

/// Two-dimensional discrete-time rational benchmark. Fixes the origin; both
/// denominators are at least one, so the map is total.
pub fn rational2d() -> NonlinearMap {
    NonlinearMap::new("rational2d", 2, |x: &Vector| {
        let (x1, x2) = (x[0], x[1]);
        Vector::from_vec(vec![
            x1 - (x1 + x2.powi(3)) / (1.0 + x1 * x1),
            x2 + (x1.powi(3) - 0.25 * x2) / (1.0 + x2 * x2),
        ])
    })
}

/// Three-dimensional polynomial vector field (continuous time). The third
/// state decouples with stable equilibria at 0 and unstable ones at the unit
/// circle in its own coordinate.
pub fn poly3d_continuous() -> NonlinearMap {
    NonlinearMap::new("poly3d_continuous", 3, |x: &Vector| {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let radial = x1 * x1 + x2 * x2 - 1.0;
        let twist = x3 * x3 + 1.0;
        Vector::from_vec(vec![
            x1 * radial - x2 * twist,
            x2 * radial + x1 * twist,
            10.0 * x3 * (x3 * x3 - 1.0),
        ])
    })
}

/// Forward-Euler step `x + dt * field(x)` as a discrete-time map.
pub fn euler_discretize(field: &NonlinearMap, dt: f64) -> NonlinearMap {
    assert!(dt > 0.0, "step size must be positive");
    let inner = field.clone();
    NonlinearMap::new(
        format!("{}_euler_{dt}", field.name()),
        field.dim(),
        move |x: &Vector| x + inner.eval(x) * dt,
    )
}

/// Central-difference Jacobian at the origin with step `h`.
pub fn jacobian_at_origin(f: &NonlinearMap, h: f64) -> Result<Matrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("difference step must be positive"));
    }
    let n = f.dim();
    let mut jac = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = h;
        let plus = f.eval(&e);
        e[j] = -h;
        let minus = f.eval(&e);
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Jacobian".into()));
    }
    Ok(jac)
}

/// Default finite-difference step for [`jacobian_at_origin`].
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-5;

/// The uncertain closed loop `x_+ = A x + net(x) + w` with `|w|` bounded by
/// the error model, restricted to a region of interest with a small excluded
/// box around the origin.
#[derive(Debug, Clone)]
pub struct UncertainSystem {
    a: Matrix,
    net: ReluNetwork,
    error_bound: ErrorBound,
    roi: Polytope,
    excluded: AxisBox,
}

impl UncertainSystem {
    pub fn new(
        a: Matrix,
        net: ReluNetwork,
        error_bound: ErrorBound,
        roi: Polytope,
        excluded: AxisBox,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(n, a.ncols(), "square system matrix"));
        }
        if net.input_dim() != n || net.output_dim() != n {
            return Err(Error::dim(n, net.input_dim(), "network dimensions"));
        }
        if roi.dim() != n || excluded.dim() != n {
            return Err(Error::dim(n, roi.dim(), "region dimensions"));
        }
        let rho = spectral_radius(&a);
        if !(rho < 1.0) {
            return Err(Error::invalid(format!(
                "linear part must be Schur stable, spectral radius = {rho}"
            )));
        }
        if !roi.contains_origin_strictly() {
            return Err(Error::invalid("origin not strictly inside the region"));
        }
        for i in 0..n {
            if !(excluded.lo()[i] < 0.0 && excluded.hi()[i] > 0.0) {
                return Err(Error::invalid(
                    "excluded box must contain the origin in its interior",
                ));
            }
        }
        for corner in excluded.corners() {
            if !roi.contains(&corner) {
                return Err(Error::invalid("excluded box sticks out of the region"));
            }
        }
        Ok(UncertainSystem {
            a,
            net,
            error_bound,
            roi,
            excluded,
        })
    }

    /// Builds the system without any validity checks, so tests can target
    /// dynamics the public constructor rejects (an unstable linear part, for
    /// example).
    #[cfg(test)]
    pub(crate) fn new_unchecked(
        a: Matrix,
        net: ReluNetwork,
        error_bound: ErrorBound,
        roi: Polytope,
        excluded: AxisBox,
    ) -> Self {
        UncertainSystem {
            a,
            net,
            error_bound,
            roi,
            excluded,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn net(&self) -> &ReluNetwork {
        &self.net
    }

    pub fn error_bound(&self) -> &ErrorBound {
        &self.error_bound
    }

    pub fn roi(&self) -> &Polytope {
        &self.roi
    }

    pub fn excluded(&self) -> &AxisBox {
        &self.excluded
    }

    /// Nominal update `A x + net(x)`.
    pub fn nominal(&self, x: &Vector) -> Vector {
        &self.a * x + self.net.eval(x)
    }

    /// Admissible disturbance radius at `x`.
    pub fn disturbance_radius(&self, x: &Vector) -> f64 {
        self.error_bound.eval(x)
    }
}

fn spectral_radius(a: &Matrix) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// How disturbances are drawn during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbancePolicy {
    Zero,
    /// Per-coordinate uniform over the l-inf ball of the admissible radius.
    Uniform { seed: u64 },
}

/// A simulated run: states `x_0..x_N`, the disturbance applied at each step
/// (zero in the final row, where no step was taken), and the first step at
/// which the state left the safety box, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub disturbances: Vec<Vector>,
    pub escaped_at: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least x_0")
    }

    /// Writes rows `step, x_1..x_n, w_1..w_n`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.states[0].len();
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["step".to_string()];
        for i in 1..=n {
            header.push(format!("x_{i}"));
        }
        for i in 1..=n {
            header.push(format!("w_{i}"));
        }
        writer.write_record(&header)?;
        for (k, (x, w)) in self.states.iter().zip(&self.disturbances).enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| format!("{v:.17}")));
            row.extend(w.iter().map(|v| format!("{v:.17}")));
            writer.write_record(&row)?;
        }
        writer.flush().map_err(Error::Io)?;
        Ok(())
    }
}

impl UncertainSystem {
    /// Rolls the uncertain dynamics forward from `x0` (which must lie in the
    /// region of interest). Leaving `safety` is recorded, not fatal; the roll
    /// continues so the caller sees the divergence.
    pub fn simulate(
        &self,
        x0: &Vector,
        steps: usize,
        policy: DisturbancePolicy,
        safety: Option<&AxisBox>,
    ) -> Result<Trajectory> {
        if x0.len() != self.dim() {
            return Err(Error::dim(self.dim(), x0.len(), "initial state"));
        }
        if !self.roi.contains(x0) {
            return Err(Error::invalid(
                "initial state outside the region of interest",
            ));
        }
        let mut rng = match policy {
            DisturbancePolicy::Uniform { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            DisturbancePolicy::Zero => None,
        };
        let mut states = Vec::with_capacity(steps + 1);
        let mut disturbances = Vec::with_capacity(steps + 1);
        let mut escaped_at = None;
        let mut x = x0.clone();
        for k in 0..steps {
            if escaped_at.is_none() {
                if let Some(sb) = safety {
                    if !sb.contains(&x) {
                        escaped_at = Some(k);
                    }
                }
            }
            let radius = self.disturbance_radius(&x);
            let w = match &mut rng {
                Some(rng) if radius > 0.0 => {
                    Vector::from_fn(self.dim(), |_, _| rng.random_range(-radius..=radius))
                }
                _ => Vector::zeros(self.dim()),
            };
            let next = self.nominal(&x) + &w;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("state at step {}", k + 1)));
            }
            states.push(x);
            disturbances.push(w);
            x = next;
        }
        if escaped_at.is_none() {
            if let Some(sb) = safety {
                if !sb.contains(&x) {
                    escaped_at = Some(steps);
                }
            }
        }
        states.push(x);
        disturbances.push(Vector::zeros(self.dim()));
        Ok(Trajectory {
            states,
            disturbances,
            escaped_at,
        })
    }
}

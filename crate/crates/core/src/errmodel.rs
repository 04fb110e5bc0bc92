//! Approximation-error model: sampled residuals of the network approximation,
//! admissible slope/offset pairs, concave piecewise-affine bounds, and
//! Lipschitz inflation from sample spacing to a deterministic bound.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::geometry::EpsNet;
use crate::relu::ReluNetwork;
use crate::{par, Error, Matrix, Result, Vector};

/// How an [`ErrorBound`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    /// Holds on the residual samples only.
    Sampled,
    /// Lipschitz-inflated from samples; holds everywhere on the sampled
    /// region (deterministic).
    Inflated,
}

/// One affine piece `|w| <= gamma * |x| + delta` of the error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPiece {
    pub gamma: f64,
    pub delta: f64,
}

/// Bound on the approximation error: `bound(x) = min_i (gamma_i |x| + delta_i)`
/// with `|.|` the l-inf norm. The minimum of nonnegative affine pieces is
/// concave and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBound {
    pieces: Vec<ErrorPiece>,
    provenance: Provenance,
    /// Covering radius of the sample net, recorded when inflated.
    eps: Option<f64>,
    /// Residual Lipschitz constant used for inflation.
    l_w: Option<f64>,
}

impl ErrorBound {
    pub fn new(
        pieces: Vec<ErrorPiece>,
        provenance: Provenance,
        eps: Option<f64>,
        l_w: Option<f64>,
    ) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("error bound needs at least one piece"));
        }
        for p in &pieces {
            if !(p.gamma >= 0.0 && p.delta >= 0.0 && p.gamma.is_finite() && p.delta.is_finite()) {
                return Err(Error::invalid(format!(
                    "error piece ({}, {}) outside the nonnegative quadrant",
                    p.gamma, p.delta
                )));
            }
        }
        Ok(ErrorBound {
            pieces,
            provenance,
            eps,
            l_w,
        })
    }

    /// The exact bound `gamma = delta = 0` for systems without approximation
    /// error.
    pub fn exact() -> Self {
        ErrorBound {
            pieces: vec![ErrorPiece {
                gamma: 0.0,
                delta: 0.0,
            }],
            provenance: Provenance::Inflated,
            eps: None,
            l_w: None,
        }
    }

    /// A single constant bound `|w| <= delta`.
    pub fn constant(delta: f64, provenance: Provenance) -> Result<Self> {
        ErrorBound::new(
            vec![ErrorPiece { gamma: 0.0, delta }],
            provenance,
            None,
            None,
        )
    }

    pub fn pieces(&self) -> &[ErrorPiece] {
        &self.pieces
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub fn l_w(&self) -> Option<f64> {
        self.l_w
    }

    /// Evaluates the bound at a state norm `|x|`.
    pub fn eval_at_norm(&self, xnorm: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.gamma * xnorm + p.delta)
            .fold(f64::INFINITY, f64::min)
    }

    /// Evaluates the bound at a state.
    pub fn eval(&self, x: &Vector) -> f64 {
        self.eval_at_norm(x.abs().max())
    }

    pub fn to_json(&self) -> String {
        let file = ErrorBoundFile {
            schema_version: 1,
            pieces: self.pieces.clone(),
            provenance: self.provenance,
            eps: self.eps,
            l_w: self.l_w,
        };
        serde_json::to_string_pretty(&file).expect("error bound serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ErrorBoundFile =
            serde_json::from_str(text).map_err(|e| Error::MalformedFile {
                path: "<inline json>".into(),
                reason: e.to_string(),
            })?;
        ErrorBound::new(file.pieces, file.provenance, file.eps, file.l_w)
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
struct ErrorBoundFile {
    #[serde(default = "one")]
    schema_version: u32,
    pieces: Vec<ErrorPiece>,
    provenance: Provenance,
    #[serde(default)]
    eps: Option<f64>,
    #[serde(default)]
    l_w: Option<f64>,
}

fn one() -> u32 {
    1
}

/// Residual norms `(|x|, |f(x) - A x - net(x)|)` over the sample net, both in
/// l-inf.
pub fn residuals<F>(
    f: F,
    a: &Matrix,
    net: &ReluNetwork,
    samples: &EpsNet,
    workers: usize,
) -> Vec<(f64, f64)>
where
    F: Fn(&Vector) -> Vector + Sync,
{
    par::map(samples.points(), workers, |x| {
        let w = f(x) - a * x - net.eval(x);
        (x.abs().max(), w.abs().max())
    })
}

/// Smallest offset making `gamma |x| + delta` dominate every sampled
/// residual, clamped at zero.
pub fn admissible_delta(pairs: &[(f64, f64)], gamma: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no residual samples"));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma must be nonnegative"));
    }
    let delta = pairs
        .iter()
        .map(|(xn, wn)| wn - gamma * xn)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(delta.max(0.0))
}

/// One admissible piece per grid slope; dominated pieces (another piece at
/// most as large in both slope and offset) are pruned.
pub fn concave_bound(pairs: &[(f64, f64)], gamma_grid: &[f64]) -> Result<ErrorBound> {
    if gamma_grid.is_empty() {
        return Err(Error::invalid("gamma grid is empty"));
    }
    let mut pieces: Vec<ErrorPiece> = Vec::with_capacity(gamma_grid.len());
    for &gamma in gamma_grid {
        pieces.push(ErrorPiece {
            gamma,
            delta: admissible_delta(pairs, gamma)?,
        });
    }
    let kept: Vec<ErrorPiece> = pieces
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            !pieces.iter().enumerate().any(|(j, q)| {
                j != *i
                    && q.gamma <= p.gamma
                    && q.delta <= p.delta
                    && (q.gamma < p.gamma || q.delta < p.delta || j < *i)
            })
        })
        .map(|(_, p)| *p)
        .collect();
    ErrorBound::new(kept, Provenance::Sampled, None, None)
}

/// Default slope grid for the concave bound.
pub const DEFAULT_GAMMA_GRID: [f64; 5] = [0.0, 0.01, 0.025, 0.05, 0.1];

/// Widens every piece by the worst drift between samples: the residual map has
/// Lipschitz constant at most `l_f + l_n`, so within l-inf distance `eps` of a
/// sample the bound `gamma |x| + delta + (l_f + l_n + gamma) eps` holds
/// everywhere on the covered region.
pub fn inflate(bound: &ErrorBound, eps: f64, l_f: f64, l_n: f64) -> Result<ErrorBound> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps must be nonnegative"));
    }
    if !(l_f >= 0.0 && l_n >= 0.0) {
        return Err(Error::invalid("Lipschitz constants must be nonnegative"));
    }
    let l_w = l_f + l_n;
    let pieces = bound
        .pieces
        .iter()
        .map(|p| ErrorPiece {
            gamma: p.gamma,
            delta: p.delta + (l_w + p.gamma) * eps,
        })
        .collect();
    ErrorBound::new(pieces, Provenance::Inflated, Some(eps), Some(l_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_eps_net, AxisBox, Region};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_net(eps: f64) -> EpsNet {
        let bx = AxisBox::centered(2, 1.0).unwrap();
        grid_eps_net(&Region::Box(bx), eps, usize::MAX).unwrap()
    }

    #[test]
    fn zero_everything_zero_residuals() {
        let net = ReluNetwork::zero(2, 2);
        let a = Matrix::zeros(2, 2);
        let samples = unit_net(0.2);
        let res = residuals(|_| Vector::zeros(2), &a, &net, &samples, 1);
        assert!(res.iter().all(|(_, w)| *w == 0.0));
    }

    #[test]
    fn linear_map_absorbed_by_a() {
        let m = Matrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.5]);
        let net = ReluNetwork::zero(2, 2);
        let samples = unit_net(0.2);
        let mc = m.clone();
        let res = residuals(move |x| &mc * x, &m, &net, &samples, 1);
        assert!(res.iter().all(|(_, w)| *w < 1e-14));
    }

    #[test]
    fn admissible_delta_examples() {
        let pairs = vec![(1.0, 0.5)];
        assert_eq!(admissible_delta(&pairs, 0.0).unwrap(), 0.5);
        assert_eq!(admissible_delta(&pairs, 0.5).unwrap(), 0.0);
        assert!(admissible_delta(&[], 0.0).is_err());
    }

    #[test]
    fn admissible_delta_zero_slack_at_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(0.0..2.0), rng.random_range(0.0..0.4)))
            .collect();
        let gamma = 0.05;
        let delta = admissible_delta(&pairs, gamma).unwrap();
        let worst = pairs
            .iter()
            .map(|(x, w)| w - gamma * x)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((delta - worst.max(0.0)).abs() < 1e-15);
        for (x, w) in &pairs {
            assert!(gamma * x + delta >= *w - 1e-12);
        }
    }

    #[test]
    fn inflate_arithmetic() {
        let bound = ErrorBound::constant(0.01, Provenance::Sampled).unwrap();
        let inflated = inflate(&bound, 0.005, 1.5, 0.5).unwrap();
        assert!((inflated.pieces()[0].delta - 0.02).abs() < 1e-15);
        assert_eq!(inflated.provenance(), Provenance::Inflated);
        assert_eq!(inflated.eps(), Some(0.005));
        assert_eq!(inflated.l_w(), Some(2.0));
    }

    #[test]
    fn inflate_zero_eps_identity() {
        let bound = concave_bound(&[(1.0, 0.2), (0.5, 0.3)], &[0.0, 0.1]).unwrap();
        let same = inflate(&bound, 0.0, 3.0, 2.0).unwrap();
        assert_eq!(bound.pieces(), same.pieces());
    }

    #[test]
    fn inflate_gap_is_exact_single_piece() {
        let bound = ErrorBound::new(
            vec![ErrorPiece {
                gamma: 0.1,
                delta: 0.05,
            }],
            Provenance::Sampled,
            None,
            None,
        )
        .unwrap();
        let inflated = inflate(&bound, 0.01, 2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..100 {
            let xn: f64 = rng.random_range(0.0..3.0);
            let gap = inflated.eval_at_norm(xn) - bound.eval_at_norm(xn);
            assert!((gap - (3.0 + 0.1) * 0.01).abs() < 1e-14);
        }
    }

    #[test]
    fn inflated_dominates_sampled_pointwise() {
        let pairs: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let x = i as f64 / 50.0;
                (x, 0.05 * x + 0.01)
            })
            .collect();
        let sampled = concave_bound(&pairs, &DEFAULT_GAMMA_GRID).unwrap();
        let inflated = inflate(&sampled, 0.005, 2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..1000 {
            let xn: f64 = rng.random_range(0.0..2.0);
            assert!(inflated.eval_at_norm(xn) >= sampled.eval_at_norm(xn));
        }
    }

    #[test]
    fn single_zero_gamma_reduces_to_admissible_delta() {
        let pairs = vec![(0.2, 0.05), (1.1, 0.12), (0.7, 0.2)];
        let bound = concave_bound(&pairs, &[0.0]).unwrap();
        assert_eq!(bound.pieces().len(), 1);
        assert_eq!(bound.pieces()[0].delta, admissible_delta(&pairs, 0.0).unwrap());
    }

    #[test]
    fn more_pieces_never_looser_at_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let pairs: Vec<(f64, f64)> = (0..300)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1.5);
                (x, 0.08 * x + rng.random_range(0.0..0.03))
            })
            .collect();
        let k1 = concave_bound(&pairs, &[0.0]).unwrap();
        let k4 = concave_bound(&pairs, &[0.0, 0.02, 0.05, 0.1]).unwrap();
        for (x, w) in &pairs {
            let b4 = k4.eval_at_norm(*x);
            let b1 = k1.eval_at_norm(*x);
            assert!(b4 <= b1 + 1e-15);
            assert!(b4 >= *w - 1e-12, "bound violated at sample");
        }
    }

    #[test]
    fn reported_four_piece_bound_evaluates_as_min() {
        // Pairs as published; the steep second piece is recorded verbatim.
        let pieces = vec![
            ErrorPiece { gamma: 0.0, delta: 0.0288 },
            ErrorPiece { gamma: 1.167, delta: 0.0141 },
            ErrorPiece { gamma: 0.0233, delta: 4.767e-3 },
            ErrorPiece { gamma: 0.0350, delta: 4.026e-4 },
        ];
        let bound = ErrorBound::new(pieces, Provenance::Sampled, None, None).unwrap();
        // Near zero the smallest offset wins; far out the flat piece wins.
        assert!((bound.eval_at_norm(0.0) - 4.026e-4).abs() < 1e-12);
        assert!((bound.eval_at_norm(10.0) - 0.0288).abs() < 1e-12);
    }

    #[test]
    fn dominated_pieces_pruned() {
        let pairs = vec![(1.0, 0.1)];
        // gamma 0.2 gives delta 0, and gamma 0.3 also gives delta 0: the
        // second is dominated.
        let bound = concave_bound(&pairs, &[0.2, 0.3]).unwrap();
        assert_eq!(bound.pieces().len(), 1);
        assert_eq!(bound.pieces()[0].gamma, 0.2);
    }

    #[test]
    fn json_roundtrip() {
        let pairs = vec![(0.5, 0.1), (1.0, 0.15)];
        let bound = inflate(
            &concave_bound(&pairs, &DEFAULT_GAMMA_GRID).unwrap(),
            0.01,
            2.0,
            1.5,
        )
        .unwrap();
        let back = ErrorBound::from_json(&bound.to_json()).unwrap();
        assert_eq!(bound, back);
    }
}

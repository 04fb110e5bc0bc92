//! Shared fixtures for unit tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::UncertainSystem;
use crate::errmodel::{ErrorBound, Provenance};
use crate::geometry::AxisBox;
use crate::relu::{Layer, ReluNetwork};
use crate::{Matrix, Vector};

/// Random dense ReLU network with weights in (-1, 1).
pub(crate) fn random_net(arch: &[usize], seed: u64) -> ReluNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .windows(2)
        .map(|w| Layer {
            weight: Matrix::from_fn(w[1], w[0], |_, _| rng.random_range(-1.0..1.0)),
            bias: Vector::from_fn(w[1], |_, _| rng.random_range(-0.5..0.5)),
        })
        .collect();
    ReluNetwork::new(layers).unwrap()
}

/// Zero-net system `x_+ = a_diag x + w` on the unit square with excluded box
/// of radius 0.1 and a constant disturbance bound.
pub(crate) fn toy_system(a_diag: f64, delta: f64) -> UncertainSystem {
    let a = Matrix::identity(2, 2) * a_diag;
    let net = ReluNetwork::zero(2, 2);
    let bound = if delta == 0.0 {
        ErrorBound::exact()
    } else {
        ErrorBound::constant(delta, Provenance::Inflated).unwrap()
    };
    let roi = AxisBox::centered(2, 1.0).unwrap().to_polytope();
    let excluded = AxisBox::centered(2, 0.1).unwrap();
    UncertainSystem::new(a, net, bound, roi, excluded).unwrap()
}

/// Random-net system with the net scaled down so the linear part dominates.
pub(crate) fn netted_system(seed: u64) -> UncertainSystem {
    let base = random_net(&[2, 4, 2], seed);
    let layers: Vec<_> = base
        .layers()
        .iter()
        .map(|l| Layer::new(l.weight.clone() * 0.1, l.bias.clone() * 0.1).unwrap())
        .collect();
    let net = ReluNetwork::new(layers).unwrap();
    UncertainSystem::new(
        Matrix::identity(2, 2) * 0.5,
        net,
        ErrorBound::exact(),
        AxisBox::centered(2, 1.0).unwrap().to_polytope(),
        AxisBox::centered(2, 0.1).unwrap(),
    )
    .unwrap()
}

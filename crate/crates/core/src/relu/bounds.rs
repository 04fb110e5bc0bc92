//! Interval bound propagation through ReLU networks and the resulting
//! stable/unstable neuron classification.

use serde::{Deserialize, Serialize};

use super::ReluNetwork;
use crate::geometry::AxisBox;
use crate::{Error, Result, Vector};

/// Status of a hidden neuron over an input region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeuronStatus {
    /// Pre-activation is nonnegative everywhere: the ReLU is the identity.
    Active,
    /// Pre-activation is nonpositive everywhere: the ReLU is zero.
    Inactive,
    /// Pre-activation changes sign: needs a binary variable to encode.
    Unstable,
}

/// Classifies a neuron from pre-activation bounds `[lo, hi]`.
pub fn classify_neuron(lo: f64, hi: f64) -> NeuronStatus {
    if lo >= 0.0 {
        NeuronStatus::Active
    } else if hi <= 0.0 {
        NeuronStatus::Inactive
    } else {
        NeuronStatus::Unstable
    }
}

/// Pre-activation interval bounds for every layer of a network over a box.
/// The final entry bounds the network output.
#[derive(Debug, Clone)]
pub struct ActivationBounds {
    input: AxisBox,
    pre: Vec<(Vector, Vector)>,
}

impl ActivationBounds {
    /// The input box the bounds were computed for.
    pub fn input(&self) -> &AxisBox {
        &self.input
    }

    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }

    /// Pre-activation bounds `(lo, hi)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&Vector, &Vector) {
        (&self.pre[l].0, &self.pre[l].1)
    }

    /// Bounds on the network output (the last affine layer).
    pub fn output(&self) -> (&Vector, &Vector) {
        self.layer(self.pre.len() - 1)
    }

    /// Neuron statuses for every hidden layer.
    pub fn statuses(&self) -> Vec<Vec<NeuronStatus>> {
        self.pre[..self.pre.len() - 1]
            .iter()
            .map(|(lo, hi)| {
                (0..lo.len())
                    .map(|i| classify_neuron(lo[i], hi[i]))
                    .collect()
            })
            .collect()
    }

    /// Number of unstable hidden neurons (each costs one binary variable).
    pub fn unstable_count(&self) -> usize {
        self.statuses()
            .iter()
            .flatten()
            .filter(|s| **s == NeuronStatus::Unstable)
            .count()
    }
}

impl ReluNetwork {
    /// Propagates the box through the network, layer by layer, splitting each
    /// weight matrix into positive and negative parts. The returned bounds are
    /// sound but not tight: every reachable pre-activation lies inside them.
    pub fn interval_bounds(&self, input: &AxisBox) -> Result<ActivationBounds> {
        if input.dim() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), input.dim(), "bounds input box"));
        }
        let mut lo = input.lo().clone();
        let mut hi = input.hi().clone();
        let last = self.layers().len() - 1;
        let mut pre = Vec::with_capacity(self.layers().len());
        for (l, layer) in self.layers().iter().enumerate() {
            let m = &layer.weight;
            let mut plo = layer.bias.clone();
            let mut phi = layer.bias.clone();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let w = m[(i, j)];
                    if w >= 0.0 {
                        plo[i] += w * lo[j];
                        phi[i] += w * hi[j];
                    } else {
                        plo[i] += w * hi[j];
                        phi[i] += w * lo[j];
                    }
                }
            }
            pre.push((plo.clone(), phi.clone()));
            if l < last {
                plo.apply(|v| *v = v.max(0.0));
                phi.apply(|v| *v = v.max(0.0));
                lo = plo;
                hi = phi;
            }
        }
        Ok(ActivationBounds {
            input: input.clone(),
            pre,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu::{Layer, ReluNetwork};
    use crate::Matrix;

    #[test]
    fn one_layer_split_example() {
        // W = [1, -1], b = 0.5 over [0,1]^2: pre in [-0.5, 1.5].
        let net = ReluNetwork::new(vec![Layer::new(
            Matrix::from_row_slice(1, 2, &[1.0, -1.0]),
            Vector::from_vec(vec![0.5]),
        )
        .unwrap()])
        .unwrap();
        let bx = AxisBox::new(Vector::zeros(2), Vector::from_element(2, 1.0)).unwrap();
        let bounds = net.interval_bounds(&bx).unwrap();
        let (lo, hi) = bounds.output();
        assert!((lo[0] - (-0.5)).abs() < 1e-15);
        assert!((hi[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn status_thresholds() {
        assert_eq!(classify_neuron(1.0, 3.0), NeuronStatus::Active);
        assert_eq!(classify_neuron(0.0, 3.0), NeuronStatus::Active);
        assert_eq!(classify_neuron(-1.0, -0.2), NeuronStatus::Inactive);
        assert_eq!(classify_neuron(-1.0, 0.0), NeuronStatus::Inactive);
        assert_eq!(classify_neuron(-0.1, 0.1), NeuronStatus::Unstable);
    }

    #[test]
    fn shrinking_box_stabilizes_neurons() {
        let net = crate::testutil::random_net(&[2, 8, 8, 2], 77);
        let wide = AxisBox::centered(2, 1.0).unwrap();
        let narrow = AxisBox::centered(2, 1e-3).unwrap();
        let u_wide = net.interval_bounds(&wide).unwrap().unstable_count();
        let u_narrow = net.interval_bounds(&narrow).unwrap().unstable_count();
        assert!(u_narrow <= u_wide);
    }

    #[test]
    fn bounds_reject_wrong_dim() {
        let net = ReluNetwork::zero(3, 2);
        let bx = AxisBox::centered(2, 1.0).unwrap();
        assert!(net.interval_bounds(&bx).is_err());
    }
}

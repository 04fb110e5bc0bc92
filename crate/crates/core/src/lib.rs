//! Robust region-of-attraction certification for discrete-time nonlinear systems.
//!
//! The library approximates a nonlinear map by a ReLU network plus a linear part,
//! bounds the approximation error from dense sampling, and then synthesizes a
//! robust Lyapunov function for the resulting uncertain system with a
//! counterexample-guided loop: a learner proposes candidates as analytic centers
//! of the current constraint set, and a verifier either certifies the candidate
//! by global mixed-integer branch-and-bound or returns a state/disturbance pair
//! at which the decrease condition fails. Sublevel sets of the certified
//! function give an inner estimate of the robust region of attraction.
//!
//! The crate is organized along the pipeline:
//!
//! * [`relu`] — ReLU networks: evaluation, training, interval bounds, stability analysis
//! * [`dynamics`] — benchmark systems, discretization, linearization, simulation
//! * [`geometry`] — boxes, polytopes, convex hulls, ε-net grids, ROI construction
//! * [`errmodel`] — approximation-error bounds from sampled residuals
//! * [`lyapunov`] — trajectory basis, candidate functions, decrease constraints
//! * [`learner`] — analytic-center candidate proposals via a barrier Newton method
//! * [`verifier`] — global verification by mixed-integer branch-and-bound
//! * [`cegis`] — the learner/verifier loop and certificates
//! * [`roa`] — certified level sets, membership, plots, simulation validation

pub mod cegis;
pub mod dynamics;
pub mod errmodel;
pub mod geometry;
pub mod guide;
pub mod learner;
pub mod lyapunov;
pub mod par;
pub mod relu;
pub mod roa;
pub mod seed;
pub(crate) mod symmat;
#[cfg(test)]
pub(crate) mod testutil;
pub mod verifier;

mod error;

pub use error::Error;

/// Dense dynamically-sized matrix of `f64`, the only matrix type used here.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense dynamically-sized column vector of `f64`.
pub type Vector = nalgebra::DVector<f64>;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

//! Simultaneous distributed estimation of a scalar parameter and per-node
//! fault classification in sensor networks.
//!
//! Every node measures `y_i = theta* + omega_i * eta_i` where `omega_i` is
//! either the small (reliable) or the large (faulty) noise level. The crate
//! provides
//!
//! * the generative model and the closed-form classification window
//!   ([`model`]),
//! * exact evaluation of the profile log-likelihood, its full set of
//!   stationary points and the centralized maximum-likelihood solution
//!   ([`likelihood`]),
//! * communication topologies and consensus weight matrices ([`graph`]),
//! * the input-driven consensus iteration run by the nodes ([`ia`]),
//! * the centralized iterative baselines ([`baselines`]),
//! * large-network limit quantities ([`asymptotics`]),
//! * a reproducible Monte Carlo sweep harness ([`montecarlo`]).
//!
//! With the default `parallel` feature, Monte Carlo trials and large sparse
//! matrix-vector products run on the rayon thread pool. Disabling the feature
//! gives a purely sequential build with bit-identical results.

pub mod asymptotics;
pub mod baselines;
pub mod error;
pub mod exec;
pub mod graph;
pub mod ia;
pub mod likelihood;
pub mod model;
pub mod montecarlo;
pub mod output;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{Label, ModelParams, Observations};

//! PAC-Bayes controller learning for unknown stochastic linear systems.
//!
//! Systems `x(t+1) = A x(t) + B u(t) + w(t)` with random `(A, B)` and
//! sub-Gaussian noise are controlled by static gains `u = K x`. The crate
//! learns distributions over gains from trajectory data and certifies
//! high-probability upper bounds on their expected quadratic cost.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod cost;
pub mod error;
pub mod experiments;
pub mod learn;
pub mod linalg;
pub mod lqg;
pub mod numerics;
pub mod output;
pub mod posterior;
pub mod rng;
pub mod scalar;
pub mod sysmodel;
pub mod truncnorm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
/// A `d_u × d_x` state-feedback gain.
pub type Gain = nalgebra::DMatrix<f64>;
pub type Weights = cost::CostWeights<f64>;
pub type Traj = sysmodel::Trajectory<f64>;

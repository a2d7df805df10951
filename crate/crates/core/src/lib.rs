//! Stochastic linear-quadratic control with multiplicative noise and
//! deterministic open-loop controls.
//!
//! The pipeline certifies mean-square stability ([`stability`]), solves the
//! weight equation `Θ = G + T(Θ)` ([`theta`]), checks the frequency-domain
//! existence condition on `Π(λ)` ([`frequency`]), synthesizes the optimal
//! control through an equivalent deterministic LQR ([`lqr`]), and evaluates
//! costs exactly through moment ODEs ([`evaluate`]) or statistically by
//! Euler–Maruyama simulation ([`montecarlo`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod frequency;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod montecarlo;
pub mod ode;
pub mod quadrature;
pub mod serde_mat;
pub mod stability;
pub mod theta;

pub use error::{Error, Result};

//! Deterministic numeric primitives: dense matrices, seeded RNG streams, and
//! finite-difference gradient checking.

pub mod gradcheck;
pub mod matrix;
pub mod rng;

pub use gradcheck::{finite_difference_grad, relative_l2_error, FD_STEP, FD_TOL};
pub use matrix::{dot, Matrix, NORM_EPS};
pub use rng::Rng;

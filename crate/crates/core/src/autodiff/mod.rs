//! Tape-based reverse-mode differentiation and its finite-difference check.

pub mod gradcheck;
mod tape;

pub use gradcheck::{
    check_gradients, finite_difference_grad, gradient_check, random_batch, relative_error, GradientReport,
    GradientRow, WorstCoordinate,
};
pub use tape::{Gradients, Tape, Var, LOG_CLAMP};

//! Radially symmetric blow-up for the parabolic-elliptic Keller-Segel system.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod config;
pub mod error;
pub mod interp;
pub mod ode;
pub mod pipeline;
pub mod profiles;
pub mod radial;
pub mod similarity;
pub mod synth;
pub mod tridiag;
pub mod zeros;

pub use error::{KsError, Result};

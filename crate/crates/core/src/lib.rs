//! UWB/IMU navigation: multilateration, vector-triad attitude observation
//! and a stochastic complementary filter on SE2(3).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attitude;
pub mod error;
pub mod filter;
pub mod harness;
pub mod liegroup;
pub mod sim;
pub mod uwb;

pub use error::{Error, Result};

//! Contact-constrained linear elastodynamics with reduced-order models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod contact;
pub mod error;
pub mod fem;
pub mod lcp;
pub mod linalg;
pub mod mesh;
pub mod mor;
pub mod ncp;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};

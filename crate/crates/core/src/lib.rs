//! Simulator and statistical verification lab for a regularized Dean–Kawasaki
//! particle system on the one-dimensional torus.

// `!(x > a)` checks below deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod martingale;
pub mod measure;
pub mod noise;
pub mod particles;
pub mod quad;
pub mod runner;
pub mod testfn;
pub mod torus;

pub use error::{Error, Result};

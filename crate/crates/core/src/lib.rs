//! Group-sequential designs for hierarchical composite endpoints analysed with
//! win statistics.
//!
//! The pipeline runs bottom-up: [`hce`] compares subject pairs, [`winstats`]
//! turns the comparisons into Net Benefit and log Win Ratio statistics with
//! variance estimates, [`design`] builds boundaries and power on top of the
//! [`mvn`] integrator, [`sim`] generates trials and [`mc`] replays designs on
//! them.
//!
//! With the default `parallel` feature, pairwise comparisons, super-population
//! streaming, lattice shifts and Monte Carlo replicates run on rayon. Results
//! do not depend on the number of worker threads.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod hce;
pub mod mc;
pub mod mvn;
pub mod par;
pub mod sim;
pub mod winstats;

pub use error::{Error, Result};

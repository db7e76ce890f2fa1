//! Hierarchical federated learning with class-balanced user assignment.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: users, edge nodes, labelled data and non-IID partitioning.
//! - [`radio`]: link budget (SNR, rate, transmit power/energy, latency).
//! - [`balance`]: KL divergence, entropy and the edge-level class histograms
//!   induced by an assignment.
//! - [`lp`]: a dense two-phase simplex solver and the builder for the relaxed
//!   assignment program.
//! - [`eara`]: LP relaxation, single/dual connectivity rounding, feasibility
//!   repair, importance-ranked bandwidth allocation and the nearest-edge
//!   baseline.
//! - [`flsim`]: softmax/MLP models, local optimisers, two-tier aggregation and
//!   training traces.
//! - [`fixtures`] and [`experiment`]: reproducible scenarios and the sweep and
//!   training drivers used by the `hfl` command line tool.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod balance;
pub mod eara;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod flsim;
pub mod lp;
pub mod radio;
pub mod scenario;

pub use error::{Error, Result};

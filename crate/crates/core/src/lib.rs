//! Desk-scale federated proxy training.
//!
//! A deep residual backbone is compressed into a shallow proxy by keeping the
//! blocks with the highest block influence. Clients fine-tune the proxy under
//! a conflict-aware regularizer, the server merges their task vectors with a
//! heterogeneity-aware TIES variant, and the trained proxy is plugged back
//! into the backbone without further training. A quadratic-loss validator
//! checks the fusion-error bound numerically.
//!
//! Everything is deterministic given a master seed; see [`seed`].

pub mod checkpoint;
pub mod compression;
pub mod error;
pub mod fedopt;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod params;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
pub use params::{FlatParams, ParamLayout, SubspaceMask, TaskVector};

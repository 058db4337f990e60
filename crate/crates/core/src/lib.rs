//! Center-oriented prototype contrastive clustering for vector data.

// `!(x >= 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod par;
pub mod prototypes;
pub mod soft_assign;
pub mod trainer;

pub use error::{Error, Result};

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod datagen;
pub mod dlasso;
pub mod error;
pub mod grid;
pub mod lasso;
pub mod metrics;
pub mod pipeline;
pub mod rng;

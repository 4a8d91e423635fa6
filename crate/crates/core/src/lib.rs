//! Multilevel yield-variance decomposition and rainfall index-insurance pricing.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod actuarial;
pub mod data;
pub mod decomposition;
pub mod estimation;
pub mod gibbs;
pub mod hierarchy;
pub mod mixed;
pub mod sparse;
pub mod synthetic;

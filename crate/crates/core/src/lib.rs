#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backlight;
pub mod cli;
pub mod enhance;
pub mod error;
pub mod evalkit;
pub mod filters;
pub mod imgcore;
pub mod metrics;
pub mod transmission;

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case;
pub mod cell;
pub mod montecarlo;
pub mod opf;
pub mod powerflow;
pub mod presets;
pub mod region;
pub mod stats;

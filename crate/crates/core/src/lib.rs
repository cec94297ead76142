//! Quasipotentials of small-noise diffusions.

pub mod action;
pub mod cli;
pub mod dynamics;
pub mod graph;
pub mod hjb;
pub mod mam;
mod parallel;
pub mod sde;

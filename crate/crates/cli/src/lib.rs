//! Library half of the command-line harness. The binary in `main.rs` is a
//! thin argument parser over [`commands`]; everything with behavior worth
//! testing lives here.

pub mod chart;
pub mod commands;
pub mod fetch;
pub mod spec;
pub mod store;

//! Simulator for a lidar-aided rotatable-antenna link: radar detection,
//! angle-of-arrival averaging, servo alignment, directional link budget and
//! 16-QAM reception, plus the experiments that compare the steered antenna
//! with a fixed one.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod control;
pub mod lidar;
pub mod modem;
pub mod rf;
pub mod scenario;
pub mod sim;

pub use scenario::{load_scenario, wrap_angle, Pose, Scenario};

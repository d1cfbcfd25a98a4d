// `!(x > 0.0)` deliberately rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod model;
pub mod io;
pub mod affordance;
pub mod segmentation;
pub mod kinematics;
pub mod scale;
pub mod eigengrasp;
pub mod sim;
pub mod rewards;
pub mod synthgen;
pub mod mpc;
pub mod tasks;

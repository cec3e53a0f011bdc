#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacker;
pub mod config;
pub mod controller;
pub mod damping;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod kinematics;
pub mod linalg;
pub mod manipulability;
pub mod plant;
pub mod projector;
pub mod qcqp;
pub mod scenario;
pub mod task;

pub use error::{Error, Result};

//! Design of elastostatic calibration experiments for six-joint serial
//! manipulators with compliant joints.
//!
//! The crate covers the whole loop: a kinematic model of the arm
//! ([`kinematics`]), the linear joint-compliance observation model
//! ([`elastostatic`]), least-squares identification of the compliances
//! ([`identification`]), plan quality criteria including the test-pose
//! criterion ([`criteria`]), constrained multi-start plan optimisation
//! ([`designer`]) and Monte Carlo validation of calibrate-then-compensate
//! ([`simulator`]).

pub mod criteria;
pub mod designer;
pub mod elastostatic;
pub mod error;
pub mod identification;
pub mod kinematics;
pub mod optimize;
pub mod plan_io;
pub mod robot_file;
pub mod simulator;

pub use error::{Error, Result};

//! Radar-inertial odometry suite.
//!
//! The crate is organized around a shared radar point-matching front-end and
//! two interchangeable estimation back-ends: a multi-state error-state EKF
//! with stochastic cloning and a sliding-window factor graph. Supporting
//! modules provide an FMCW radar signal-processing chain, a deterministic
//! synthetic sensor simulator, evaluation metrics, and a dataset/CLI harness.

pub mod dsp;
pub mod ekf;
pub mod eval;
pub mod fg;
pub mod geom;
pub mod harness;
pub mod matching;
pub mod models;
pub mod sim;
pub mod types;

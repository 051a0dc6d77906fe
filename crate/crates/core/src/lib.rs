//! Inertial navigation from IMU sequences.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`]: quaternion algebra and the heading-agnostic frame transform;
//! * [`seqdata`]: sequence records, file format, targets and samplers;
//! * [`synth`]: synthetic trajectories and IMU streams used as ground truth;
//! * [`autodiff`]: a small reverse-mode tape over `f64` tensors;
//! * [`models`]: ResNet, LSTM and TCN velocity networks and the heading network;
//! * [`train`]: losses, optimizer loop and prediction;
//! * [`baselines`]: naive double integration and pedestrian dead reckoning;
//! * [`metrics`]: trajectory integration, alignment, ATE/RTE and heading errors.
//!
//! Data-parallel loops go through [`par::Exec`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod autodiff;
pub mod baselines;
pub mod geom;
pub mod metrics;
pub mod models;
pub mod par;
pub mod seqdata;
pub mod synth;
pub mod train;

//! Blind approximate Kalman filtering and smoothing for sparse factor
//! analysis of time-varying binary response data.
//!
//! A learner's latent concept knowledge `c(t)` evolves through an affine
//! transition driven by the learning resource studied between two time
//! instances, and is observed only through probit-linked correct/incorrect
//! grades. This crate provides:
//!
//! * [`model`]: the domain types and dataset validation,
//! * [`probit`]: closed-form Gaussian moment matching for one probit grade,
//! * [`kalman`]: per-learner forward filtering and RTS smoothing,
//! * [`transition`] and [`question`]: the M-step estimators, both solved by
//!   projected FISTA ([`fista`]),
//! * [`trainer`]: EM orchestration and cross-validation splits,
//! * [`synth`]: a ground-truth synthetic data generator,
//! * [`metrics`]: recovery and prediction metrics.
//!
//! The crate is `no_std` and only needs `alloc`. The `parallel` feature
//! (which implies `std`) spreads the E-step over learners and the M-steps
//! over resources and questions with rayon.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod error;
pub mod fista;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod probit;
pub mod question;
pub mod rng;
pub mod special;
pub mod synth;
pub mod trainer;
pub mod transition;

mod par;

pub use error::{Error, Result};
pub use model::{
    CellMask, Dataset, DatasetReport, Dimensions, GaussianBelief, HyperParams, LearnerPrior,
    ModelParams, Observation, QuestionParams, RawDataset, TransitionParams, Violation,
};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;

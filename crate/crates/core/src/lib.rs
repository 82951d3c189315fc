//! Joint MMSE channel estimation and beamforming for multi-cell and
//! cell-free massive MIMO networks.
//!
//! The crate is organized bottom-up:
//!
//! * [`netgen`]: scenarios, deployments, path loss, pilot assignment, clusters.
//! * [`fading`]: spatial covariances and Rayleigh channel sampling.
//! * [`pilots`]: uplink pilot observations and linear MMSE channel estimates.
//! * [`beamform`]: MSE-optimal centralized, local, team and mixed beamformers.
//! * [`rates`]: Monte Carlo moments, MSE and the three ergodic rate bounds.
//! * [`duality`]: uplink/downlink duality power systems.
//! * [`alloc`]: power control policies and max-min fixed-point solvers.
//! * [`bench`]: seeded multi-drop experiments and CSV/JSON outputs.
//!
//! All link gains are linear and normalized by the noise power, so every
//! noise covariance in the models is the identity.

pub mod alloc;
pub mod beamform;
pub mod bench;
pub mod duality;
pub mod error;
pub mod fading;
pub mod linalg;
pub mod model;
pub mod netgen;
pub mod pilots;
pub mod rates;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};

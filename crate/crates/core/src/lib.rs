//! Event-triggered distributed LQG rendezvous of planar mobile robots.
//!
//! Each robot runs a Kalman filter on its noisy position measurements,
//! broadcasts its estimate only when a trigger rule fires, and steers with a
//! finite-horizon consensus gain computed from a backward Riccati recursion.
//! [`sim`] ties the pieces together and measures cost, transmission rate and
//! the mean-square disagreement bound.

pub mod config;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod network;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};

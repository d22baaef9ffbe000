#![allow(non_snake_case)]
//! Trajectory optimization as Bayesian input inference.
//!
//! Costs become Gaussian observations of state/input features, the horizon is
//! smoothed by linear Gaussian message passing, and an EM loop adapts the
//! observation precision. A dynamic-programming LQR solver is included as a
//! reference for the linear case.

pub mod controller;
pub mod engine;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod lqr;
pub mod models;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};

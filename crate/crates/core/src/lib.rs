//! Simulation lab for an autonomous hybrid reconfigurable intelligent surface (RIS).
//!
//! The RIS owns a handful of receive-capable sensing elements. From their partial
//! observations it recovers the full-aperture signals, estimates the downlink sum
//! rate without any control link to the base station, and drives a deep Q-network
//! that updates its own phase shifts.
//!
//! Modules follow the signal chain:
//!
//! - [`geometry`]: cluster-based geometric channels and mobility
//! - [`phy`]: phase application, precoding, symbol and noise generation, partial sensing
//! - [`recovery`]: OMP angle estimation and full-aperture reconstruction
//! - [`rate`]: true and observation-only sum rates
//! - [`nn`]: a two-pipeline feedforward network with hand-derived backprop
//! - [`agent`]: DQN state, action, reward and training loop
//! - [`harness`]: configuration, experiment arms, metrics and CLI

pub mod agent;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod phy;
pub mod rate;
pub mod recovery;

pub use error::{Error, Result};

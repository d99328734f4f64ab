//! Model-matching H-infinity synthesis and validation of power
//! hardware-in-the-loop (PHIL) interface controllers.
//!
//! The crate is organized around a small LTI state-space core:
//!
//! - [`lti`]: state-space models, interconnection algebra, stability,
//!   frequency response and H-infinity norm.
//! - [`discretization`]: bilinear (Tustin) and zero-order-hold conversion.
//! - [`circuit`]: continuous-time circuit models of the simulated grid
//!   (ROS), the amplifier-driven load (DUT) and their idealized direct
//!   interconnection (REF).
//! - [`plant`]: assembly of the model-matching generalized plant with
//!   delays, channel scalings and loop-shaping weights.
//! - [`synthesis`]: gamma-bisection H-infinity synthesis over a
//!   Riccati-based sub-problem solver, plus closed-loop validation.
//! - [`interfaces`]: ITM baseline and scaled-controller wrappers.
//! - [`sim`]: fixed-step closed-loop simulation, accuracy metrics and
//!   short-circuit-ratio sweeps.
//! - [`config`]: JSON run configuration and controller artifacts.

// Validation guards are written as `!(x > 0.0)` on purpose: the
// negation also rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod config;
pub mod discretization;
pub mod error;
pub mod interfaces;
pub mod lti;
pub mod plant;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};

//! Robust distributed Nash-equilibrium seeking for second-order multi-agent
//! systems.
//!
//! The crate simulates two seeking algorithms for noncooperative games whose
//! players obey disturbed double-integrator dynamics and can only exchange
//! information with graph neighbors:
//!
//! - a continuous-communication law combining a gradient-based seeking input
//!   with a supertwisting integral sliding-mode compensator (finite-time
//!   rejection of disturbances and uncertain dynamics, helped by an
//!   average-consensus tracker) and fast leader-follower action estimation;
//! - a sampled-data variant in which the communication topology switches
//!   along a semi-Markov process and estimates are broadcast only when a
//!   quadratic event-trigger test fails at a sampling instant.
//!
//! Alongside the simulator there is an independent equilibrium solver, a
//! semi-Markov signal generator, and verification machinery for the matrix
//! inequalities that certify mean-square consensus of the sampled estimation
//! flow.
//!
//! Modules follow the pipeline: [`game`] defines costs and pseudo-gradients,
//! [`topology`] the graphs and the symmetric eigensolver, [`switching`] the
//! mode process, [`controller`] the control laws, [`trigger`] the broadcast
//! rule, [`lmi`] the stability certificates, [`sim`] the integration and
//! metrics, [`config`]/[`output`] the file formats, and [`fixtures`] the
//! shipped benchmark scenario.

pub mod config;
pub mod controller;
pub mod error;
pub mod fixtures;
pub mod game;
pub mod linalg;
pub mod lmi;
pub mod output;
pub mod rng;
pub mod sim;
pub mod switching;
pub mod topology;
pub mod trigger;

pub use error::{Error, Result};

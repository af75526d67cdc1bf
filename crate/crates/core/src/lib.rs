//! Outer bounds and minimum-leakage optimization for secure lossy
//! transmission of a vector Gaussian source.
//!
//! A transmitter observes `X ~ N(0, K_X)` and must let a legitimate receiver
//! with side information `Y` reconstruct it within a distortion matrix `D`,
//! while an eavesdropper holding `Z` learns as little as possible about `X`.
//! The crate evaluates the Wyner–Ziv rate bound, solves the matrix
//! optimization that gives the minimum leakage, and certifies the optimum
//! through its KKT system and an enhanced side-information channel.
//!
//! All information quantities are in nats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auxgauss;
pub mod enhance;
pub mod error;
pub mod examples;
pub mod genmodel;
pub mod leakopt;
pub mod matkernel;
pub mod model;
pub mod verify;

pub use error::{Error, Result};
pub use matkernel::SymMatrix;
pub use model::{AlignedModel, AuxiliaryPair, DistortionConstraint};

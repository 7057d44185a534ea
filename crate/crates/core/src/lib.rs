//! Multibody contact dynamics on a velocity fixed-point iteration.
//!
//! Every contact is rewritten to act on a 3-DOF Cartesian node (creating
//! short-lived virtual nodes on rigid bodies), which lets a diagonal step
//! matrix decouple all contacts from each other and all contact axes from
//! each other. Each iteration then costs one sparse matrix-vector product plus
//! an independent closed-form projection per contact.
//!
//! The crate is `no_std` + `alloc`. Enable `parallel` to run the per-contact
//! loop and the matrix-vector product on rayon.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod baseline;
pub mod contact;
pub mod dynamics;
pub mod error;
pub mod math;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};

//! Simulation, identification and control of viscoelastic deformation in a
//! box-shaped contact domain.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admittance;
pub mod backstepping;
pub mod error;
pub mod field;
pub mod identification;
pub mod material;
pub mod metrics;
pub mod oracle;
pub mod plant;
pub mod runner;

pub use error::{Error, Result};
pub use field::{FieldNorms, GridSpec, ScalarField, Slice};
pub use material::{BurgersCoeffs, ViscoParams};

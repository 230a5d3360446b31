//! Numerical laboratory for model Ricci shrinkers.
//!
//! The catalog ([`models`]) holds the Gaussian soliton, round spheres and
//! cylinders. On top of it sit the induced self-similar flow ([`flow`]),
//! entropy minimization ([`entropy`]), heat kernels and their bounds
//! ([`heat`]), reduced distance and the differential Harnack check
//! ([`lgeo`]), and the verification harness with its report format
//! ([`harness`]).

pub mod entropy;
pub mod error;
pub mod fe;
pub mod heat;
pub mod lgeo;
pub mod flow;
pub mod harness;
pub mod models;
pub mod quad;

pub use error::{Error, Result};

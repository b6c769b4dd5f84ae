//! Mixed finite elements for the coupled Darcy–Stokes problem with the
//! projection-based (strong) interface coupling.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod assembly;
pub mod coupling;
pub mod error;
pub mod geom;
pub mod mesh;
pub mod mms;
pub mod refelem;
pub mod solver;
pub mod spaces;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};

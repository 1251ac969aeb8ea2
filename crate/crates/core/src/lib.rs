//! Three-view self-calibration from six point correspondences under constant
//! intrinsics.

pub mod autocalib;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod numeric;
pub mod robust;
pub mod sixpoint;
pub mod synthetic;

pub use error::{Error, Result};

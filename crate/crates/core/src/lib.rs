//! Desk-scale laboratory for adaptive manipulation of articulated objects
//! whose joints obey hidden internal mechanisms.

pub mod articulation;
pub mod category;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod expert;
pub mod geometry;
pub mod harness;
pub mod mechanisms;
pub mod perception;
pub mod rng;
pub mod scene;

pub use category::Category;
pub use error::{Error, Result};

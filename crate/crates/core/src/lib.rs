pub mod analysis;
pub mod capacity;
pub mod error;
pub mod expr;
pub mod landscape;
pub mod lattice;
pub mod linalg;
pub mod potential;
pub mod reduction;
pub mod simulate;
pub mod verify;

pub use error::{Error, ErrorKind, Result};

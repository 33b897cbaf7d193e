//! Open-system simulation of a spin coupled to damped bosonic modes.

pub mod allaser;
pub mod error;
pub mod hilbert;
pub mod lindblad;
mod fit;
pub mod lvc;
pub mod probe;
pub mod transfer;

pub use error::{Error, Result};

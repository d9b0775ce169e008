//! Simulation and numerical verification of random walks driven by products
//! of random matrices, conditioned to stay non-negative.

pub mod error;
pub mod geom;
pub mod law;
pub mod reversal;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
pub use geom::{DualProjectivePoint, ProjectivePoint, SquareMatrix};
pub use law::MatrixLaw;
pub use rng::SamplerState;

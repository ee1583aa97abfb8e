//! Generalized-function (Colombeau-type) solutions of first-order hyperbolic
//! systems and wave equations with random, possibly singular coefficients.
//!
//! Singular inputs are mollified at a ladder of scales `eps`, the resulting
//! smooth problems are solved along characteristics, and the nets of
//! solutions are classified by their growth in `eps`.

pub mod asymptotics;
pub mod characteristics;
pub mod error;
pub mod fields;
pub mod hypsolve;
pub mod jet;
pub mod mollify;
pub mod quad;
pub mod scenarios;
pub mod seed;

pub use error::{Error, Rect, Result};

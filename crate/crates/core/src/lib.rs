//! Exact p-adic harmonic analysis for microlocal lifts on PGL2 over Q_p.

pub mod amplitude;
pub mod characters;
pub mod constants;
pub mod cyclo;
pub mod error;
pub mod field;
pub mod grid;
pub mod group;
pub mod kernels;
pub mod maintm;
pub mod projector;
pub mod specrep;
pub mod stability;
pub mod suites;

pub use amplitude::{Amplitude, Backend};
pub use cyclo::Cyclo;
pub use error::{Error, Result};
pub use field::{KElem, LocalField};
pub use group::GroupElem;

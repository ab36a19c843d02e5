//! Policy mirror descent with temporal-difference evaluation on tabular MDPs.

pub mod algorithms;
pub mod diagnostics;
pub mod error;
pub mod harness;
mod linalg;
pub mod mdp;
pub mod mirror;
pub mod parallel;
pub mod sampling;
pub mod values;

pub use error::{Error, Result};
pub use mdp::{OptimalityData, TabularMdp};
pub use mirror::{BregmanValue, MirrorMap};
pub use values::{ActionValue, Policy, StateValue};

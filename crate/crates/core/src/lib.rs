//! Joint control/communication resource allocation for ultra-reliable
//! wireless networked control systems.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod channel;
pub mod control;
pub mod drl;
pub mod env;
pub mod error;
pub mod harness;
pub mod params;
pub mod phy;

pub use error::{Error, Result};
pub use params::{LinkCoefficient, NetworkParams};

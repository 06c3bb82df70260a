//! Link-level simulator for grant-free uplink access with extremely sparse
//! orthogonal pilots (ESOP) and a DMRS-like traditional orthogonal pilot (TOP)
//! baseline.

pub mod channel;
pub mod error;
pub mod frame;
pub mod phy;
pub mod pilots;
pub mod receiver;
pub mod sim;

pub use error::{Error, Result};

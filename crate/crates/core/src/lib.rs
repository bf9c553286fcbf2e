pub mod basis;
pub mod classical;
pub mod dynamics;
pub mod ensemble;
pub mod ep;
pub mod error;
pub mod exec;
pub mod format;
pub mod model;
pub mod quantum;
pub mod sat;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};

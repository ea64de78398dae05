pub mod data;
pub mod dist;
pub mod nncore;
pub mod par;
pub mod error;
pub mod fairmodels;

pub use error::{Error, Result};
pub mod train;
pub mod eval;
pub mod harness;

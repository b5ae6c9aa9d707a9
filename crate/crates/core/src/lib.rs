pub mod biasspec;
pub mod corpus;
pub mod debias;
pub mod error;
pub mod eval;
pub mod lm;
pub mod stats;

pub use error::{Error, Result};

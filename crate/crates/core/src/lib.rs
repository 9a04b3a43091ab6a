pub mod consistency;
pub mod decode;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod logspace;
pub mod model;
pub mod pruning;
pub mod seeds;
pub mod synthdata;
pub mod transducer;
pub mod views;

pub use error::{Error, Result};

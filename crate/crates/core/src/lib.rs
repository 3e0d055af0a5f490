pub mod cli;
pub mod codec;
pub mod elasticity;
pub mod error;
pub mod mass;
pub mod mc;
pub mod rng;
pub mod token_tree;
pub mod toytrain;

pub use error::{Error, Result};

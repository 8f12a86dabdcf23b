pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mixer;
pub mod model;
pub mod nn;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{ParamStore, Tape, Tensor, Var};

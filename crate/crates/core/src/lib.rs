pub mod augment;
pub mod autograd;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod optflow;
pub mod tensor;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

//! Layers, parameter storage, optimizers and checkpoints on top of the tape.

pub mod checkpoint;
pub mod factorized;
pub mod layers;
pub mod optim;
pub mod params;

pub use factorized::{factorize_conv3d, Conv2Plus1d, FactorizedConvSpec};
pub use layers::{lstm_step, BatchNorm, Conv, Linear, Lstm};
pub use optim::{Hyperparams, Optimizer, OptimizerKind};
pub use params::{Ctx, Mode, ParamGrads, ParamId, ParamStore};

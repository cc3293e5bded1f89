//! CNN-LSTM: a CaffeNet trunk shared across frames, its first fully-connected
//! layer feeding a single-layer LSTM whose last hidden state is classified.
//!
//! Local response normalisation is replaced by batch norm and the two-group
//! convolutions are dense.

use rand::Rng;

use super::blocks::{flatten, max_pool2d, ConvBn};
use super::config::ModelConfig;
use crate::autograd::{conv_output_len, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv, Ctx, Linear, Lstm, ParamStore};
use crate::tensor::Scalar;

pub const FEATURES: usize = 4096;
pub const HIDDEN: usize = 256;

/// (out channels, kernel, stride, pad, pool after) at width 1.
const TRUNK: [(usize, usize, usize, usize, bool); 5] = [
    (96, 11, 4, 0, true),
    (256, 5, 1, 2, true),
    (384, 3, 1, 1, false),
    (384, 3, 1, 1, false),
    (256, 3, 1, 1, true),
];

#[derive(Clone, Debug)]
enum TrunkLayer {
    /// conv → ReLU → pool → BN, as in the reference net's first two layers.
    ConvPoolNorm(Conv, crate::nn::BatchNorm),
    ConvRelu(ConvBn),
    ConvReluPool(ConvBn),
}

#[derive(Clone, Debug)]
pub struct Lrcn {
    trunk: Vec<TrunkLayer>,
    pub fc6: Linear,
    pub lstm: Lstm,
    pub head: Linear,
    input: [usize; 3],
}

impl Lrcn {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        let [mut c, mut h, mut w] = cfg.input;
        let too_small = || Error::shape("lrcn", format!("input {:?} too small for the trunk", cfg.input));
        let mut trunk = Vec::new();
        for (i, &(co, k, st, pd, pool)) in TRUNK.iter().enumerate() {
            let co = cfg.channels(co);
            let name = format!("lrcn.conv{}", i + 1);
            h = conv_output_len(h, k, st, pd).ok_or_else(too_small)?;
            w = conv_output_len(w, k, st, pd).ok_or_else(too_small)?;
            if pool {
                h = conv_output_len(h, 3, 2, 0).ok_or_else(too_small)?;
                w = conv_output_len(w, 3, 2, 0).ok_or_else(too_small)?;
            }
            trunk.push(match (i, pool) {
                (0 | 1, _) => TrunkLayer::ConvPoolNorm(
                    Conv::new2d(store, &name, c, co, k, st, pd, true, rng),
                    crate::nn::BatchNorm::new(store, &format!("{name}.bn"), co),
                ),
                (_, false) => TrunkLayer::ConvRelu(ConvBn::new2d(store, &name, c, co, k, st, pd, true, rng)),
                (_, true) => TrunkLayer::ConvReluPool(ConvBn::new2d(store, &name, c, co, k, st, pd, true, rng)),
            });
            c = co;
        }
        let features = cfg.channels(FEATURES);
        let hidden = cfg.channels(HIDDEN);
        Ok(Lrcn {
            trunk,
            fc6: Linear::new(store, "lrcn.fc6", c * h * w, features, rng),
            lstm: Lstm::new(store, "lrcn.lstm", features, hidden, rng),
            head: Linear::new(store, "lrcn.head", hidden, cfg.num_classes, rng),
            input: cfg.input,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.fc6.out_features
    }

    /// Per-frame features `[N·S, F]` from frames `[N·S, C, H, W]`.
    pub fn frame_features<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, frames: Var) -> Result<Var> {
        let mut y = frames;
        for layer in &self.trunk {
            y = match layer {
                TrunkLayer::ConvPoolNorm(conv, bn) => {
                    let z = conv.forward(ctx, y)?;
                    let z = ctx.tape.relu(z);
                    let z = max_pool2d(ctx, z, 3, 2, 0)?;
                    bn.forward(ctx, z)?
                }
                TrunkLayer::ConvRelu(cb) => cb.forward(ctx, y)?,
                TrunkLayer::ConvReluPool(cb) => {
                    let z = cb.forward(ctx, y)?;
                    max_pool2d(ctx, z, 3, 2, 0)?
                }
            };
        }
        let y = flatten(ctx, y)?;
        let y = self.fc6.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }

    /// `x[N,S,C,H,W]` → logits `[N,K]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let [n, s, c, h, w] = shape[..] else {
            return Err(Error::shape("lrcn", format!("expected [N,S,C,H,W], got {shape:?}")));
        };
        if [c, h, w] != self.input {
            return Err(Error::shape("lrcn", format!("frames {:?}, model expects {:?}", [c, h, w], self.input)));
        }
        let frames = ctx.tape.reshape(x, &[n * s, c, h, w])?;
        let f = self.frame_features(ctx, frames)?;
        let seq = ctx.tape.reshape(f, &[n, s, self.feature_width()])?;
        let last = self.lstm.last_hidden(ctx, seq)?;
        self.head.forward(ctx, last)
    }
}

//! Frame-level baseline: three conv/pool stages and two fully-connected layers.

use rand::Rng;

use super::blocks::{flatten, max_pool2d, ConvBn};
use super::config::ModelConfig;
use crate::autograd::{conv_output_len, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::tensor::Scalar;

/// (out channels, kernel) of each conv stage at width 1.
pub const STAGES: [(usize, usize); 3] = [(16, 5), (32, 5), (64, 3)];
pub const HIDDEN: usize = 128;

#[derive(Clone, Debug)]
pub struct Cnn1 {
    pub convs: Vec<ConvBn>,
    pub fc1: Linear,
    pub fc2: Linear,
    input: [usize; 3],
}

impl Cnn1 {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        let [mut c, mut h, mut w] = cfg.input;
        let mut convs = Vec::new();
        for (i, &(co, k)) in STAGES.iter().enumerate() {
            let co = cfg.channels(co);
            convs.push(ConvBn::new2d(store, &format!("cnn1.conv{}", i + 1), c, co, k, 1, k / 2, true, rng));
            c = co;
            let shrink = |n: usize| conv_output_len(n, 2, 2, 0);
            (h, w) = match (shrink(h), shrink(w)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::shape("cnn1", format!("input {:?} too small for three poolings", cfg.input))),
            };
        }
        let hidden = cfg.channels(HIDDEN);
        Ok(Cnn1 {
            convs,
            fc1: Linear::new(store, "cnn1.fc1", c * h * w, hidden, rng),
            fc2: Linear::new(store, "cnn1.fc2", hidden, cfg.num_classes, rng),
            input: cfg.input,
        })
    }

    /// `x[N,S,C,H,W]` → per-frame logits `[N·S, K]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let [n, s, c, h, w] = shape[..] else {
            return Err(Error::shape("cnn1", format!("expected [N,S,C,H,W], got {shape:?}")));
        };
        if [c, h, w] != self.input {
            return Err(Error::shape("cnn1", format!("frames {:?}, model expects {:?}", [c, h, w], self.input)));
        }
        let mut y = ctx.tape.reshape(x, &[n * s, c, h, w])?;
        for conv in &self.convs {
            y = conv.forward(ctx, y)?;
            y = max_pool2d(ctx, y, 2, 2, 0)?;
        }
        let y = flatten(ctx, y)?;
        let y = self.fc1.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        self.fc2.forward(ctx, y)
    }
}

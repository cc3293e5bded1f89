//! Spatial (appearance) and temporal (optical flow) 2D networks of the same shape.

use rand::Rng;

use super::blocks::{max_pool2d, ConvBn};
use super::config::{Fusion, ModelConfig, Streams};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::tensor::Scalar;

/// (out channels, kernel, stride, pad, max-pool after) at width 1.
const TRUNK: [(usize, usize, usize, usize, bool); 5] = [
    (96, 7, 2, 3, true),
    (256, 5, 2, 2, true),
    (512, 3, 1, 1, false),
    (512, 3, 1, 1, false),
    (512, 3, 1, 1, false),
];

#[derive(Clone, Debug)]
pub struct Stream {
    layers: Vec<(ConvBn, bool)>,
    pub head: Linear,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Stream {
    fn new<T: Scalar, R: Rng + ?Sized>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        rng: &mut R,
    ) -> Self {
        let mut c = cin;
        let mut layers = Vec::new();
        for (i, &(co, k, st, pd, pool)) in TRUNK.iter().enumerate() {
            let co = cfg.channels(co);
            layers.push((ConvBn::new2d(store, &format!("{name}.conv{}", i + 1), c, co, k, st, pd, true, rng), pool));
            c = co;
        }
        Stream {
            layers,
            head: Linear::new(store, &format!("{name}.head"), c, cfg.num_classes, rng),
            in_channels: cin,
            out_channels: c,
        }
    }

    /// Last conv feature map `[N,C',h,w]`.
    pub fn features<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut y = x;
        for (layer, pool) in &self.layers {
            y = layer.forward(ctx, y)?;
            if *pool {
                y = max_pool2d(ctx, y, 3, 2, 1)?;
            }
        }
        Ok(y)
    }

    pub fn logits<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let f = self.features(ctx, x)?;
        let p = ctx.tape.global_avg_pool(f)?;
        self.head.forward(ctx, p)
    }
}

#[derive(Clone, Debug)]
pub struct TwoStream {
    pub spatial: Stream,
    pub temporal: Stream,
    /// Used only for convolutional fusion.
    pub fuse: Option<(ConvBn, Linear)>,
    pub fusion: Fusion,
    pub streams: Streams,
    input: [usize; 3],
    clip_len: usize,
}

/// Output of a two-stream forward pass.
pub struct TwoStreamOutput {
    /// Fused log-probabilities (average fusion) or logits (conv fusion).
    pub logits: Var,
    pub spatial: Option<Var>,
    pub temporal: Option<Var>,
}

impl TwoStream {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        if cfg.clip_len < 2 {
            return Err(Error::InvalidArgument("two-stream needs clips of at least 2 frames".into()));
        }
        let spatial = Stream::new(cfg, store, "two_stream.spatial", cfg.input[0], rng);
        let temporal = Stream::new(cfg, store, "two_stream.temporal", 2 * (cfg.clip_len - 1), rng);
        let fuse = (cfg.fusion == Fusion::Conv).then(|| {
            let c = spatial.out_channels;
            (
                ConvBn::new2d(store, "two_stream.fuse", 2 * c, c, 1, 1, 0, true, rng),
                Linear::new(store, "two_stream.fuse_head", c, cfg.num_classes, rng),
            )
        });
        Ok(TwoStream {
            spatial,
            temporal,
            fuse,
            fusion: cfg.fusion,
            streams: cfg.streams,
            input: cfg.input,
            clip_len: cfg.clip_len,
        })
    }

    /// `frames[N,C,H,W]` (one frame per clip) and `flow[N,2(S−1),H,W]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, frames: Var, flow: Var) -> Result<TwoStreamOutput> {
        let fs = ctx.tape.shape(frames).to_vec();
        let ls = ctx.tape.shape(flow).to_vec();
        let want_flow = [fs.first().copied().unwrap_or(0), 2 * (self.clip_len - 1), self.input[1], self.input[2]];
        if fs.len() != 4 || fs[1..] != self.input || ls != want_flow {
            return Err(Error::shape(
                "two_stream",
                format!("frames {fs:?} and flow {ls:?}; expected [N,{:?}] and {want_flow:?}", self.input),
            ));
        }
        match (self.fusion, self.streams) {
            (_, Streams::SpatialOnly) => {
                let s = self.spatial.logits(ctx, frames)?;
                Ok(TwoStreamOutput { logits: s, spatial: Some(s), temporal: None })
            }
            (_, Streams::TemporalOnly) => {
                let t = self.temporal.logits(ctx, flow)?;
                Ok(TwoStreamOutput { logits: t, spatial: None, temporal: Some(t) })
            }
            (Fusion::Average, Streams::Both) => {
                let s = self.spatial.logits(ctx, frames)?;
                let t = self.temporal.logits(ctx, flow)?;
                let fused = fuse_average(ctx, s, t)?;
                Ok(TwoStreamOutput { logits: fused, spatial: Some(s), temporal: Some(t) })
            }
            (Fusion::Conv, Streams::Both) => {
                let (conv, head) = self.fuse.as_ref().expect("conv fusion layers built with the model");
                let a = self.spatial.features(ctx, frames)?;
                let b = self.temporal.features(ctx, flow)?;
                let y = ctx.tape.concat(&[a, b], 1)?;
                let y = conv.forward(ctx, y)?;
                let y = ctx.tape.global_avg_pool(y)?;
                let logits = head.forward(ctx, y)?;
                Ok(TwoStreamOutput { logits, spatial: None, temporal: None })
            }
        }
    }
}

/// Arithmetic mean of the streams' softmax probabilities, as log-probabilities.
pub fn fuse_average<T: Scalar>(ctx: &mut Ctx<'_, T>, spatial: Var, temporal: Var) -> Result<Var> {
    let (a, b) = (ctx.tape.shape(spatial).to_vec(), ctx.tape.shape(temporal).to_vec());
    if a != b {
        return Err(Error::shape("fuse_average", format!("stream outputs {a:?} and {b:?} differ")));
    }
    ctx.tape.log_mean_softmax(&[spatial, temporal])
}

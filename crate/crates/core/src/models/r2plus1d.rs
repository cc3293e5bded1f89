//! 18-layer residual network with every 3D convolution factorised into (2+1)D.

use rand::Rng;

use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::nn::{factorize_conv3d, BatchNorm, Conv2Plus1d, Ctx, FactorizedConvSpec, Linear, ParamStore};
use crate::tensor::Scalar;

use super::blocks::ConvBn;
use super::config::ModelConfig;

/// Three stages halve time, so shorter clips collapse.
pub const MIN_CLIP_LEN: usize = 8;
pub const STAGE_CHANNELS: [usize; 4] = [64, 128, 256, 512];
pub const BLOCKS_PER_STAGE: usize = 2;

#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv2Plus1d,
    pub bn1: BatchNorm,
    pub conv2: Conv2Plus1d,
    pub bn2: BatchNorm,
    pub shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec1 = factorize_conv3d(cin, cout, 3, 3)?.with_geometry([stride, stride], [1, 1]);
        let spec2 = factorize_conv3d(cout, cout, 3, 3)?;
        let shortcut = (stride != 1 || cin != cout).then(|| {
            ConvBn::new3d(
                store,
                &format!("{name}.down"),
                cin,
                cout,
                [1, 1, 1],
                ConvGeom::new([stride; 3], [0; 3]),
                false,
                rng,
            )
        });
        Ok(BasicBlock {
            conv1: Conv2Plus1d::new(store, &format!("{name}.conv1"), spec1, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), cout),
            conv2: Conv2Plus1d::new(store, &format!("{name}.conv2"), spec2, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout),
            shortcut,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let y = self.conv2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(y))
    }
}

#[derive(Clone, Debug)]
pub struct R2Plus1d {
    pub stem: Conv2Plus1d,
    pub stem_bn: BatchNorm,
    pub blocks: Vec<(String, BasicBlock)>,
    pub head: Linear,
    input: [usize; 3],
}

impl R2Plus1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        if cfg.clip_len < MIN_CLIP_LEN {
            return Err(Error::InvalidArgument(format!(
                "R(2+1)D needs clips of at least {MIN_CLIP_LEN} frames, got {}",
                cfg.clip_len
            )));
        }
        let widths = STAGE_CHANNELS.map(|c| cfg.channels(c));
        let stem_spec = factorize_conv3d(cfg.input[0], widths[0], 3, 7)?.with_geometry([1, 2], [1, 3]);
        let stem = Conv2Plus1d::new(store, "r2p1d.stem", stem_spec, rng);
        let stem_bn = BatchNorm::new(store, "r2p1d.stem_bn", widths[0]);
        let mut blocks = Vec::new();
        let mut cin = widths[0];
        for (si, &cout) in widths.iter().enumerate() {
            for b in 0..BLOCKS_PER_STAGE {
                let stride = if si > 0 && b == 0 { 2 } else { 1 };
                let name = format!("r2p1d.layer{}.{b}", si + 1);
                blocks.push((name.clone(), BasicBlock::new(store, &name, cin, cout, stride, rng)?));
                cin = cout;
            }
        }
        Ok(R2Plus1d {
            stem,
            stem_bn,
            blocks,
            head: Linear::new(store, "r2p1d.head", cin, cfg.num_classes, rng),
            input: cfg.input,
        })
    }

    /// Every factorised pair with its name, stem first.
    pub fn factorized_specs(&self) -> Vec<(String, FactorizedConvSpec)> {
        let mut out = vec![("stem".to_string(), self.stem.spec)];
        for (name, b) in &self.blocks {
            out.push((format!("{name}.conv1"), b.conv1.spec));
            out.push((format!("{name}.conv2"), b.conv2.spec));
        }
        out
    }

    /// `x[N,S,C,H,W]` → logits `[N,K]`; the volume is laid out `[N,C,S,H,W]` internally.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let [_, s, c, h, w] = shape[..] else {
            return Err(Error::shape("r2plus1d", format!("expected [N,S,C,H,W], got {shape:?}")));
        };
        if [c, h, w] != self.input {
            return Err(Error::shape("r2plus1d", format!("frames {:?}, model expects {:?}", [c, h, w], self.input)));
        }
        if s < MIN_CLIP_LEN {
            return Err(Error::shape(
                "r2plus1d",
                format!("clip of {s} frames; at least {MIN_CLIP_LEN} are required"),
            ));
        }
        let v = ctx.tape.swap_axes_12(x)?;
        let y = self.stem.forward(ctx, v)?;
        let y = self.stem_bn.forward(ctx, y)?;
        let mut y = ctx.tape.relu(y);
        for (_, b) in &self.blocks {
            y = b.forward(ctx, y)?;
        }
        let y = ctx.tape.global_avg_pool(y)?;
        self.head.forward(ctx, y)
    }
}

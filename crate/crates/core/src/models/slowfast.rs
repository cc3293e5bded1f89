//! Dual-pathway ResNet-50: a wide slow pathway over few frames and a narrow
//! fast pathway over many, joined by fast→slow lateral connections after the
//! stem and after each of the first three residual stages.

use rand::Rng;

use super::blocks::ConvBn;
use super::config::ModelConfig;
use crate::autograd::{ConvGeom, PoolKind, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::tensor::Scalar;

/// (inner width, output width, blocks, slow temporal kernel, spatial stride) at width 1.
pub const STAGES: [(usize, usize, usize, usize, usize); 4] = [
    (64, 256, 3, 1, 1),
    (128, 512, 4, 1, 2),
    (256, 1024, 6, 3, 2),
    (512, 2048, 3, 3, 2),
];
pub const STEM: usize = 64;
/// Temporal kernel of the fast pathway's stem and of the lateral convolutions.
pub const FAST_STEM_T: usize = 5;
pub const LATERAL_T: usize = 5;

#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub a: ConvBn,
    pub b: ConvBn,
    pub c: ConvBn,
    pub shortcut: Option<ConvBn>,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        inner: usize,
        cout: usize,
        t: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let a = ConvBn::new3d(
            store,
            &format!("{name}.a"),
            cin,
            inner,
            [t, 1, 1],
            ConvGeom::new([1, 1, 1], [t / 2, 0, 0]),
            true,
            rng,
        );
        let b = ConvBn::new3d(
            store,
            &format!("{name}.b"),
            inner,
            inner,
            [1, 3, 3],
            ConvGeom::new([1, stride, stride], [0, 1, 1]),
            true,
            rng,
        );
        let c = ConvBn::new3d(store, &format!("{name}.c"), inner, cout, [1, 1, 1], ConvGeom::unit(), false, rng);
        let shortcut = (cin != cout || stride != 1).then(|| {
            ConvBn::new3d(
                store,
                &format!("{name}.down"),
                cin,
                cout,
                [1, 1, 1],
                ConvGeom::new([1, stride, stride], [0, 0, 0]),
                false,
                rng,
            )
        });
        Bottleneck { a, b, c, shortcut }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.a.forward(ctx, x)?;
        let y = self.b.forward(ctx, y)?;
        let y = self.c.forward(ctx, y)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(y))
    }
}

#[derive(Clone, Debug)]
pub struct Pathway {
    pub stem: ConvBn,
    pub stages: Vec<Vec<Bottleneck>>,
    /// Output channels of the stem and of each stage.
    pub widths: Vec<usize>,
}

impl Pathway {
    fn stem_forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.stem.forward(ctx, x)?;
        ctx.tape
            .pool(y, PoolKind::Max, [1, 3, 3], ConvGeom::new([1, 2, 2], [0, 1, 1]))
    }

    fn stage_forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, i: usize, x: Var) -> Result<Var> {
        let mut y = x;
        for b in &self.stages[i] {
            y = b.forward(ctx, y)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct SlowFast {
    pub slow: Pathway,
    pub fast: Pathway,
    /// Time-strided convolutions from fast to slow, after the stem and stages 1–3.
    pub laterals: Vec<ConvBn>,
    pub head: Linear,
    input: [usize; 3],
    frames: (usize, usize),
}

impl SlowFast {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        let shape = cfg.slowfast;
        let beta = shape.beta_inv;
        let alpha = shape.alpha();
        if shape.slow_frames == 0 || shape.fast_frames != alpha * shape.slow_frames || alpha != 8 {
            return Err(Error::InvalidArgument(format!(
                "SlowFast needs fast:slow frames of 8:1, got {}:{}",
                shape.fast_frames, shape.slow_frames
            )));
        }
        // slow widths are kept divisible by beta so the fast pathway is exactly 1/beta as wide
        let slow_w = |c: usize| (cfg.channels(c) / beta).max(1) * beta;
        let fast_w = |c: usize| slow_w(c) / beta;
        let cin = cfg.input[0];

        let mut laterals = Vec::new();
        let lateral = |store: &mut ParamStore<T>, rng: &mut R, i: usize, c: usize| {
            ConvBn::new3d(
                store,
                &format!("slowfast.lateral{i}"),
                c,
                2 * c,
                [LATERAL_T, 1, 1],
                ConvGeom::new([alpha, 1, 1], [LATERAL_T / 2, 0, 0]),
                true,
                rng,
            )
        };

        let slow_stem = ConvBn::new3d(
            store,
            "slowfast.slow.stem",
            cin,
            slow_w(STEM),
            [1, 7, 7],
            ConvGeom::new([1, 2, 2], [0, 3, 3]),
            true,
            rng,
        );
        let fast_stem = ConvBn::new3d(
            store,
            "slowfast.fast.stem",
            cin,
            fast_w(STEM),
            [FAST_STEM_T, 7, 7],
            ConvGeom::new([1, 2, 2], [FAST_STEM_T / 2, 3, 3]),
            true,
            rng,
        );
        laterals.push(lateral(store, rng, 0, fast_w(STEM)));

        let (mut slow_in, mut fast_in) = (slow_w(STEM) + 2 * fast_w(STEM), fast_w(STEM));
        let mut slow_stages = Vec::new();
        let mut fast_stages = Vec::new();
        let mut slow_widths = vec![slow_w(STEM)];
        let mut fast_widths = vec![fast_w(STEM)];
        for (si, &(inner, out, blocks, t_slow, stride)) in STAGES.iter().enumerate() {
            let mut ss = Vec::new();
            let mut fs = Vec::new();
            for b in 0..blocks {
                let st = if b == 0 { stride } else { 1 };
                let (sc, fc) = if b == 0 { (slow_in, fast_in) } else { (slow_w(out), fast_w(out)) };
                ss.push(Bottleneck::new(
                    store,
                    &format!("slowfast.slow.res{}.{b}", si + 2),
                    sc,
                    slow_w(inner),
                    slow_w(out),
                    t_slow,
                    st,
                    rng,
                ));
                fs.push(Bottleneck::new(
                    store,
                    &format!("slowfast.fast.res{}.{b}", si + 2),
                    fc,
                    fast_w(inner),
                    fast_w(out),
                    3,
                    st,
                    rng,
                ));
            }
            slow_stages.push(ss);
            fast_stages.push(fs);
            slow_widths.push(slow_w(out));
            fast_widths.push(fast_w(out));
            fast_in = fast_w(out);
            slow_in = slow_w(out);
            if si + 1 < STAGES.len() {
                laterals.push(lateral(store, rng, si + 1, fast_w(out)));
                slow_in += 2 * fast_w(out);
            }
        }
        let feat = slow_w(STAGES[3].1) + fast_w(STAGES[3].1);
        Ok(SlowFast {
            slow: Pathway { stem: slow_stem, stages: slow_stages, widths: slow_widths },
            fast: Pathway { stem: fast_stem, stages: fast_stages, widths: fast_widths },
            laterals,
            head: Linear::new(store, "slowfast.head", feat, cfg.num_classes, rng),
            input: cfg.input,
            frames: (shape.slow_frames, shape.fast_frames),
        })
    }

    fn fuse<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, i: usize, slow: Var, fast: Var) -> Result<Var> {
        let l = self.laterals[i].forward(ctx, fast)?;
        ctx.tape.concat(&[slow, l], 1)
    }

    /// `slow[N,C,Ts,H,W]`, `fast[N,C,Tf,H,W]` with `Tf = 8·Ts` → logits `[N,K]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, slow: Var, fast: Var) -> Result<Var> {
        let ss = ctx.tape.shape(slow).to_vec();
        let fs = ctx.tape.shape(fast).to_vec();
        let ok = |s: &[usize], t: usize| {
            s.len() == 5 && s[1] == self.input[0] && s[2] == t && s[3] == self.input[1] && s[4] == self.input[2]
        };
        if !ok(&ss, self.frames.0) || !ok(&fs, self.frames.1) || ss[0] != fs[0] {
            return Err(Error::shape(
                "slowfast",
                format!(
                    "slow {ss:?} / fast {fs:?}; expected [N,{c},{},{h},{w}] / [N,{c},{},{h},{w}]",
                    self.frames.0,
                    self.frames.1,
                    c = self.input[0],
                    h = self.input[1],
                    w = self.input[2]
                ),
            ));
        }
        let mut s = self.slow.stem_forward(ctx, slow)?;
        let mut f = self.fast.stem_forward(ctx, fast)?;
        s = self.fuse(ctx, 0, s, f)?;
        for i in 0..STAGES.len() {
            s = self.slow.stage_forward(ctx, i, s)?;
            f = self.fast.stage_forward(ctx, i, f)?;
            if i + 1 < STAGES.len() {
                s = self.fuse(ctx, i + 1, s, f)?;
            }
        }
        let ps = ctx.tape.global_avg_pool(s)?;
        let pf = ctx.tape.global_avg_pool(f)?;
        let feat = ctx.tape.concat(&[ps, pf], 1)?;
        self.head.forward(ctx, feat)
    }
}

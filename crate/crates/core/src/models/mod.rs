//! The five classifiers, their configuration and batch preparation.

pub mod blocks;
pub mod cnn1;
pub mod config;
pub mod lrcn;
pub mod r2plus1d;
pub mod slowfast;
pub mod two_stream;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cnn1::Cnn1;
pub use config::{Fusion, ModelConfig, ModelKind, SlowFastShape, Streams, NUM_CLASSES};
pub use lrcn::Lrcn;
pub use r2plus1d::R2Plus1d;
pub use slowfast::SlowFast;
pub use two_stream::{fuse_average, TwoStream};

use crate::autograd::{softmax_rows, Var};
use crate::dataio::clips::{gather_frames, slowfast_indices, slowfast_indices_at};
use crate::dataio::image::conform;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Ctx, Mode, Optimizer, ParamStore};
use crate::optflow::stack_flows;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub enum Net {
    Cnn1(Cnn1),
    Lrcn(Lrcn),
    R2Plus1d(R2Plus1d),
    TwoStream(TwoStream),
    SlowFast(SlowFast),
}

/// A batch in the layout each architecture consumes.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelInput<T: Scalar = f32> {
    /// `[N,S,C,H,W]`
    Clips(Tensor<T>),
    /// `frames[N,C,H,W]` (centre frame of each clip), `flow[N,2(S−1),H,W]`.
    TwoStream { frames: Tensor<T>, flow: Tensor<T> },
    /// `slow[N,C,Ts,H,W]`, `fast[N,C,Tf,H,W]`.
    SlowFast { slow: Tensor<T>, fast: Tensor<T> },
}

impl<T: Scalar> ModelInput<T> {
    pub fn batch_len(&self) -> usize {
        match self {
            ModelInput::Clips(t) => t.dim(0),
            ModelInput::TwoStream { frames, .. } => frames.dim(0),
            ModelInput::SlowFast { slow, .. } => slow.dim(0),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelInput<U> {
        match self {
            ModelInput::Clips(t) => ModelInput::Clips(t.cast()),
            ModelInput::TwoStream { frames, flow } => ModelInput::TwoStream {
                frames: frames.cast(),
                flow: flow.cast(),
            },
            ModelInput::SlowFast { slow, fast } => ModelInput::SlowFast {
                slow: slow.cast(),
                fast: fast.cast(),
            },
        }
    }
}

impl Net {
    pub fn build<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            ModelKind::Cnn1 => Net::Cnn1(Cnn1::new(cfg, store, rng)?),
            ModelKind::Lrcn => Net::Lrcn(Lrcn::new(cfg, store, rng)?),
            ModelKind::R2plus1d => Net::R2Plus1d(R2Plus1d::new(cfg, store, rng)?),
            ModelKind::TwoStream => Net::TwoStream(TwoStream::new(cfg, store, rng)?),
            ModelKind::Slowfast => Net::SlowFast(SlowFast::new(cfg, store, rng)?),
        })
    }

    /// Logits `[N,K]`, or `[N·S,K]` for the frame-level baseline. With average
    /// fusion the rows are log-probabilities, which are valid logits.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, input: &ModelInput<T>) -> Result<Var> {
        match (self, input) {
            (Net::Cnn1(m), ModelInput::Clips(x)) => {
                let x = ctx.input(x.clone());
                m.forward(ctx, x)
            }
            (Net::Lrcn(m), ModelInput::Clips(x)) => {
                let x = ctx.input(x.clone());
                m.forward(ctx, x)
            }
            (Net::R2Plus1d(m), ModelInput::Clips(x)) => {
                let x = ctx.input(x.clone());
                m.forward(ctx, x)
            }
            (Net::TwoStream(m), ModelInput::TwoStream { frames, flow }) => {
                let f = ctx.input(frames.clone());
                let o = ctx.input(flow.clone());
                Ok(m.forward(ctx, f, o)?.logits)
            }
            (Net::SlowFast(m), ModelInput::SlowFast { slow, fast }) => {
                let s = ctx.input(slow.clone());
                let f = ctx.input(fast.clone());
                m.forward(ctx, s, f)
            }
            _ => Err(Error::InvalidArgument("batch layout does not match the architecture".into())),
        }
    }
}

/// Architecture, parameters and configuration together.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub net: Net,
}

/// Result of one optimisation step.
#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub loss: f64,
    /// Clip-level predictions made during the step.
    pub predictions: Vec<usize>,
    pub logits: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Net::build(config, &mut store, &mut rng)?;
        Ok(Model {
            config: config.clone(),
            store,
            net,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn param_count_by_layer(&self) -> Vec<(String, usize)> {
        self.store.param_count_by_layer()
    }

    /// Forward pass without recording gradients.
    pub fn logits(&mut self, input: &ModelInput<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut ctx = Ctx::new(&mut self.store, mode);
        let out = self.net.forward(&mut ctx, input)?;
        Ok(ctx.tape.value(out).clone())
    }

    /// Clip-level predictions in evaluation mode.
    pub fn predict(&mut self, input: &ModelInput<T>) -> Result<Vec<usize>> {
        let n = input.batch_len();
        let logits = self.logits(input, Mode::Eval)?;
        clip_predictions(&logits, n)
    }

    /// Cross-entropy loss of `labels` (one per clip) for this batch.
    pub fn loss(&mut self, input: &ModelInput<T>, labels: &[usize], mode: Mode) -> Result<f64> {
        Ok(self.loss_and_predictions(input, labels, mode)?.0)
    }

    /// Loss and clip-level predictions from one forward pass without gradients.
    pub fn loss_and_predictions(&mut self, input: &ModelInput<T>, labels: &[usize], mode: Mode) -> Result<(f64, Vec<usize>)> {
        let n = input.batch_len();
        let mut ctx = Ctx::new(&mut self.store, mode);
        let out = self.net.forward(&mut ctx, input)?;
        let targets = expand_labels(labels, ctx.tape.shape(out)[0])?;
        let loss = ctx.tape.softmax_xent(out, &targets)?;
        let value = ctx.tape.value(loss).data()[0].as_f64();
        Ok((value, clip_predictions(ctx.tape.value(out), n)?))
    }

    /// One forward/backward pass in training mode followed by an optimiser step.
    /// A non-finite loss leaves the parameters untouched.
    pub fn train_step(&mut self, input: &ModelInput<T>, labels: &[usize], opt: &mut Optimizer<T>) -> Result<StepOutcome<T>> {
        let n = input.batch_len();
        if labels.len() != n {
            return Err(Error::shape("train_step", format!("{} labels for {n} clips", labels.len())));
        }
        let (loss, logits, grads) = {
            let mut ctx = Ctx::new(&mut self.store, Mode::Train);
            let out = self.net.forward(&mut ctx, input)?;
            let targets = expand_labels(labels, ctx.tape.shape(out)[0])?;
            let loss = ctx.tape.softmax_xent(out, &targets)?;
            let value = ctx.tape.value(loss).data()[0].as_f64();
            let logits = ctx.tape.value(out).clone();
            if !value.is_finite() {
                return Ok(StepOutcome { loss: value, predictions: Vec::new(), logits });
            }
            let grads = ctx.backward(loss)?;
            (value, logits, grads)
        };
        opt.step(&mut self.store, &grads);
        Ok(StepOutcome {
            loss,
            predictions: clip_predictions(&logits, n)?,
            logits,
        })
    }

    /// Parameters to `path` (MSCK) and the configuration to `path` with a `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store)?;
        self.config.save(&path.with_extension("json"))
    }

    /// Rebuild from a configuration and load parameters from `path`.
    pub fn load(config: &ModelConfig, path: &Path) -> Result<Self> {
        let mut m = Self::build(config, 0)?;
        checkpoint::load(path, &mut m.store)?;
        Ok(m)
    }
}

/// Repeat each clip label over its frames when the network classifies frames.
fn expand_labels(labels: &[usize], rows: usize) -> Result<Vec<usize>> {
    let n = labels.len();
    if n == 0 || rows % n != 0 {
        return Err(Error::shape("labels", format!("{n} labels for {rows} output rows")));
    }
    let per = rows / n;
    Ok(labels.iter().flat_map(|&l| std::iter::repeat_n(l, per)).collect())
}

/// Argmax per clip. When there are `S` rows per clip (frame-level output) the
/// clip takes the majority vote, ties going to the higher mean probability.
pub fn clip_predictions<T: Scalar>(logits: &Tensor<T>, n: usize) -> Result<Vec<usize>> {
    let [rows, k] = logits.shape()[..] else {
        return Err(Error::shape("clip_predictions", format!("expected [R,K], got {:?}", logits.shape())));
    };
    if n == 0 || rows % n != 0 {
        return Err(Error::shape("clip_predictions", format!("{rows} rows for {n} clips")));
    }
    let per = rows / n;
    let probs = softmax_rows(logits.data(), k);
    let argmax = |row: &[T]| {
        row.iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    };
    Ok((0..n)
        .map(|c| {
            if per == 1 {
                return argmax(&logits.data()[c * k..(c + 1) * k]);
            }
            let mut votes = vec![0usize; k];
            let mut mass = vec![0.0f64; k];
            for r in c * per..(c + 1) * per {
                votes[argmax(&probs[r * k..(r + 1) * k])] += 1;
                for j in 0..k {
                    mass[j] += probs[r * k + j].as_f64();
                }
            }
            (0..k)
                .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(mass[a].total_cmp(&mass[b])).then(b.cmp(&a)))
                .unwrap_or(0)
        })
        .collect())
}

/// One training or evaluation sample after resizing and any flow computation.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    /// `[S,C,H,W]`
    Clip(Tensor<f32>),
    /// centre frame `[C,H,W]`, flow `[2(S−1),H,W]`
    TwoStream { frame: Tensor<f32>, flow: Tensor<f32> },
    /// `[Ts,C,H,W]`, `[Tf,C,H,W]`
    SlowFast { slow: Tensor<f32>, fast: Tensor<f32> },
}

impl Prepared {
    pub fn byte_size(&self) -> usize {
        4 * match self {
            Prepared::Clip(t) => t.len(),
            Prepared::TwoStream { frame, flow } => frame.len() + flow.len(),
            Prepared::SlowFast { slow, fast } => slow.len() + fast.len(),
        }
    }
}

/// Resize a window of raw frames `[S,C,H,W]` (values in [0,1]) to the network input.
/// SlowFast inputs come from [`prepare_slowfast`] instead.
pub fn prepare_clip(cfg: &ModelConfig, frames: &Tensor<f32>) -> Result<Prepared> {
    let [c, h, w] = cfg.input;
    if frames.rank() != 4 {
        return Err(Error::shape("prepare_clip", format!("expected [S,C,H,W], got {:?}", frames.shape())));
    }
    if frames.dim(0) != cfg.clip_len {
        return Err(Error::shape(
            "prepare_clip",
            format!("{} frames, model expects clips of {}", frames.dim(0), cfg.clip_len),
        ));
    }
    let x = conform(frames, c, h, w)?;
    match cfg.kind {
        ModelKind::Slowfast => Err(Error::InvalidArgument("SlowFast samples are drawn from whole videos".into())),
        ModelKind::TwoStream => {
            let flow = stack_flows(&x, cfg.flow)?;
            let centre = x.slice_outer(cfg.clip_len / 2, 1)?;
            Ok(Prepared::TwoStream {
                frame: centre.reshape(&[c, h, w])?,
                flow,
            })
        }
        _ => Ok(Prepared::Clip(x)),
    }
}

/// Draw the dual-rate frame sets from a whole video `[F,C,H,W]` and resize them.
pub fn prepare_slowfast(cfg: &ModelConfig, video: &Tensor<f32>, seed: u64) -> Result<Prepared> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = slowfast_indices(video.dim(0), &mut rng)?.start;
    prepare_slowfast_at(cfg, video, start)
}

/// Dual-rate frame sets of the window starting at `start`.
pub fn prepare_slowfast_at(cfg: &ModelConfig, video: &Tensor<f32>, start: usize) -> Result<Prepared> {
    let [c, h, w] = cfg.input;
    let idx = slowfast_indices_at(start);
    if idx.fast.last().is_some_and(|&l| l >= video.dim(0)) {
        return Err(Error::shape(
            "prepare_slowfast",
            format!("window at {start} runs past a {}-frame video", video.dim(0)),
        ));
    }
    let fast = conform(&gather_frames(video, &idx.fast)?, c, h, w)?;
    // the slow frames are a subset of the fast ones
    let slow_pos: Vec<usize> = idx
        .slow
        .iter()
        .map(|s| idx.fast.iter().position(|f| f == s).expect("slow ⊂ fast"))
        .collect();
    let slow = gather_frames(&fast, &slow_pos)?;
    if slow.dim(0) != cfg.slowfast.slow_frames || fast.dim(0) != cfg.slowfast.fast_frames {
        return Err(Error::shape(
            "prepare_slowfast",
            format!("sampler gives {}/{} frames, config wants {:?}", slow.dim(0), fast.dim(0), cfg.slowfast),
        ));
    }
    Ok(Prepared::SlowFast { slow, fast })
}

/// Stack prepared samples into a batch, moving time behind channels where needed.
pub fn collate(items: &[&Prepared]) -> Result<ModelInput<f32>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let pick = |f: &dyn Fn(&Prepared) -> Option<Tensor<f32>>| -> Result<Vec<Tensor<f32>>> {
        items
            .iter()
            .map(|p| f(p).ok_or_else(|| Error::InvalidArgument("mixed sample kinds in one batch".into())))
            .collect()
    };
    Ok(match first {
        Prepared::Clip(_) => ModelInput::Clips(Tensor::stack(&pick(&|p| match p {
            Prepared::Clip(t) => Some(t.clone()),
            _ => None,
        })?)?),
        Prepared::TwoStream { .. } => ModelInput::TwoStream {
            frames: Tensor::stack(&pick(&|p| match p {
                Prepared::TwoStream { frame, .. } => Some(frame.clone()),
                _ => None,
            })?)?,
            flow: Tensor::stack(&pick(&|p| match p {
                Prepared::TwoStream { flow, .. } => Some(flow.clone()),
                _ => None,
            })?)?,
        },
        Prepared::SlowFast { .. } => {
            let slow = Tensor::stack(&pick(&|p| match p {
                Prepared::SlowFast { slow, .. } => Some(slow.clone()),
                _ => None,
            })?)?;
            let fast = Tensor::stack(&pick(&|p| match p {
                Prepared::SlowFast { fast, .. } => Some(fast.clone()),
                _ => None,
            })?)?;
            ModelInput::SlowFast {
                slow: slow.swap_axes_12()?,
                fast: fast.swap_axes_12()?,
            }
        }
    })
}

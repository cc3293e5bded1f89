//! Clip extraction, dual-rate sampling and batch layouts.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::Label;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Frames `[S,C,H,W]` in `[0,1]` with their sequence label.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Tensor<f32>,
    pub label: Label,
    pub fps: f64,
    pub source_id: String,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Non-overlapping windows of `s` frames; a trailing remainder is dropped.
pub fn window_ranges(frame_count: usize, s: usize) -> Result<Vec<Range<usize>>> {
    if s == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    Ok((0..frame_count / s).map(|k| k * s..(k + 1) * s).collect())
}

pub fn window_clips(video: &VideoClip, s: usize) -> Result<Vec<VideoClip>> {
    window_ranges(video.len(), s)?
        .into_iter()
        .map(|r| {
            Ok(VideoClip {
                frames: video.frames.slice_outer(r.start, r.len())?,
                label: video.label,
                fps: video.fps,
                source_id: video.source_id.clone(),
            })
        })
        .collect()
}

pub const SLOWFAST_SPAN: usize = 64;
pub const FAST_STRIDE: usize = 2;
pub const SLOW_STRIDE: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlowFastIndices {
    pub start: usize,
    /// `start + {0, 2, …, 62}`
    pub fast: Vec<usize>,
    /// `start + {0, 16, 32, 48}`
    pub slow: Vec<usize>,
}

pub fn slowfast_indices_at(start: usize) -> SlowFastIndices {
    SlowFastIndices {
        start,
        fast: (0..SLOWFAST_SPAN).step_by(FAST_STRIDE).map(|o| start + o).collect(),
        slow: (0..SLOWFAST_SPAN).step_by(SLOW_STRIDE).map(|o| start + o).collect(),
    }
}

/// Draw a uniform start in `[0, frame_count − 64]`.
pub fn slowfast_indices<R: Rng + ?Sized>(frame_count: usize, rng: &mut R) -> Result<SlowFastIndices> {
    if frame_count < SLOWFAST_SPAN {
        return Err(Error::InvalidArgument(format!(
            "dual-rate sampling needs {SLOWFAST_SPAN} consecutive frames, video has {frame_count}"
        )));
    }
    let start = rng.random_range(0..=frame_count - SLOWFAST_SPAN);
    Ok(slowfast_indices_at(start))
}

/// `(slow [4,C,H,W], fast [32,C,H,W])` for one seeded draw.
pub fn slowfast_sample(video: &Tensor<f32>, seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = slowfast_indices(video.dim(0), &mut rng)?;
    Ok((gather_frames(video, &idx.slow)?, gather_frames(video, &idx.fast)?))
}

pub fn gather_frames<T: Scalar>(video: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let frames: Vec<Tensor<T>> = idx
        .iter()
        .map(|&i| video.slice_outer(i, 1))
        .collect::<Result<_>>()?;
    let stacked = Tensor::concat_outer(&frames)?;
    Ok(stacked)
}

/// Clips stacked as `[N,S,C,H,W]` with one label per clip.
#[derive(Clone, Debug)]
pub struct ClipBatch {
    pub data: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl ClipBatch {
    pub fn from_clips(clips: &[&VideoClip]) -> Result<Self> {
        let frames: Vec<Tensor<f32>> = clips.iter().map(|c| c.frames.clone()).collect();
        Ok(ClipBatch {
            data: Tensor::stack(&frames)?,
            labels: clips.iter().map(|c| c.label.index()).collect(),
        })
    }
}

/// `[N,S,C,H,W] → [N·S,C,H,W]`; row `n·S + s` holds frame `s` of clip `n`.
pub fn reshape_for_2d<T: Scalar>(batch: Tensor<T>) -> Result<Tensor<T>> {
    let [n, s, c, h, w] = batch.shape()[..] else {
        return Err(Error::shape("reshape_for_2d", format!("expected rank 5, got {:?}", batch.shape())));
    };
    batch.reshape(&[n * s, c, h, w])
}

pub fn unreshape_from_2d<T: Scalar>(frames: Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let [ns, c, h, w] = frames.shape()[..] else {
        return Err(Error::shape("unreshape_from_2d", format!("expected rank 4, got {:?}", frames.shape())));
    };
    if n == 0 || ns % n != 0 {
        return Err(Error::shape("unreshape_from_2d", format!("{ns} rows do not split into {n} clips")));
    }
    frames.reshape(&[n, ns / n, c, h, w])
}

/// `[N,S,C,H,W] → [N,C,S,H,W]`. Its own inverse.
pub fn reshape_for_3d<T: Scalar>(batch: &Tensor<T>) -> Result<Tensor<T>> {
    if batch.rank() != 5 {
        return Err(Error::shape("reshape_for_3d", format!("expected rank 5, got {:?}", batch.shape())));
    }
    batch.swap_axes_12()
}

//! Input builders shared by the benchmarks.

use meltstream_core::models::{ModelConfig, ModelInput, ModelKind};
use meltstream_core::Tensor;

/// Zero-filled batch of `n` samples shaped for `cfg`.
pub fn model_input(cfg: &ModelConfig, n: usize) -> ModelInput<f32> {
    let [c, h, w] = cfg.input;
    let s = cfg.clip_len;
    match cfg.kind {
        ModelKind::TwoStream => ModelInput::TwoStream {
            frames: Tensor::zeros(&[n, c, h, w]),
            flow: Tensor::zeros(&[n, 2 * (s - 1), h, w]),
        },
        ModelKind::Slowfast => ModelInput::SlowFast {
            slow: Tensor::zeros(&[n, c, cfg.slowfast.slow_frames, h, w]),
            fast: Tensor::zeros(&[n, c, cfg.slowfast.fast_frames, h, w]),
        },
        _ => ModelInput::Clips(Tensor::zeros(&[n, s, c, h, w])),
    }
}

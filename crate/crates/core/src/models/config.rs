use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Hyperparams, OptimizerKind};
use crate::optflow::FlowParams;

pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn1,
    Lrcn,
    R2plus1d,
    TwoStream,
    Slowfast,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Cnn1,
        ModelKind::Lrcn,
        ModelKind::R2plus1d,
        ModelKind::TwoStream,
        ModelKind::Slowfast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn1 => "cnn1",
            ModelKind::Lrcn => "lrcn",
            ModelKind::R2plus1d => "r2plus1d",
            ModelKind::TwoStream => "two_stream",
            ModelKind::Slowfast => "slowfast",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '(', ')', '+'], "");
        Ok(match norm.as_str() {
            "cnn1" => ModelKind::Cnn1,
            "lrcn" | "cnnlstm" => ModelKind::Lrcn,
            "r2plus1d" | "r21d" | "r2plus1d18" | "r21d18" => ModelKind::R2plus1d,
            "two_stream" | "twostream" => ModelKind::TwoStream,
            "slowfast" => ModelKind::Slowfast,
            _ => return Err(Error::InvalidArgument(format!("unknown model {s:?}"))),
        })
    }

    /// Network input `(C,H,W)`.
    pub fn default_input(self) -> [usize; 3] {
        match self {
            ModelKind::Cnn1 => [1, 140, 200],
            ModelKind::Lrcn => [3, 227, 227],
            ModelKind::R2plus1d | ModelKind::TwoStream => [3, 112, 112],
            ModelKind::Slowfast => [1, 224, 224],
        }
    }

    /// Optimiser settings per architecture. Two-stream has no settings of its own;
    /// it borrows the recurrent model's.
    pub fn default_hyperparams(self) -> Hyperparams {
        let (lr, b, opt, momentum, decay, epochs) = match self {
            ModelKind::Cnn1 => (0.001, 64, OptimizerKind::SgdMomentum, Some(0.9), None, 100),
            ModelKind::Lrcn | ModelKind::TwoStream => (0.01, 32, OptimizerKind::SgdMomentum, Some(0.9), None, 50),
            ModelKind::R2plus1d => (0.01, 25, OptimizerKind::Adam, None, Some(5e-4), 50),
            ModelKind::Slowfast => (0.001, 5, OptimizerKind::SgdMomentum, Some(0.9), Some(1e-4), 100),
        };
        Hyperparams {
            learning_rate: lr,
            batch_size: b,
            momentum,
            weight_decay: decay,
            epochs,
            optimizer: opt,
        }
    }

    /// Runs averaged per experiment; SlowFast samples its input at random.
    pub fn default_repeats(self) -> usize {
        if self == ModelKind::Slowfast {
            10
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Mean of the two streams' class probabilities.
    Average,
    /// Concatenate the last conv maps, 1×1 conv, then a shared head.
    Conv,
}

/// Which two-stream branches contribute to the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Streams {
    Both,
    SpatialOnly,
    TemporalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlowFastShape {
    pub slow_frames: usize,
    pub fast_frames: usize,
    /// Fast pathway width is `1/beta_inv` of the slow one.
    pub beta_inv: usize,
}

impl Default for SlowFastShape {
    fn default() -> Self {
        SlowFastShape {
            slow_frames: 4,
            fast_frames: 32,
            beta_inv: 8,
        }
    }
}

impl SlowFastShape {
    /// Frame-rate ratio between the pathways.
    pub fn alpha(&self) -> usize {
        self.fast_frames / self.slow_frames.max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub width: f64,
    pub clip_len: usize,
    pub num_classes: usize,
    /// `(C,H,W)` fed to the network after resizing.
    pub input: [usize; 3],
    #[serde(default = "default_fusion")]
    pub fusion: Fusion,
    #[serde(default = "default_streams")]
    pub streams: Streams,
    #[serde(default)]
    pub slowfast: SlowFastShape,
    #[serde(default)]
    pub flow: FlowParams,
}

fn default_fusion() -> Fusion {
    Fusion::Average
}

fn default_streams() -> Streams {
    Streams::Both
}

impl ModelConfig {
    pub fn new(kind: ModelKind, width: f64) -> Self {
        ModelConfig {
            kind,
            width,
            clip_len: 10,
            num_classes: NUM_CLASSES,
            input: kind.default_input(),
            fusion: Fusion::Average,
            streams: Streams::Both,
            slowfast: SlowFastShape::default(),
            flow: FlowParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.width > 0.0 && self.width <= 1.0) {
            return bad(format!("width multiplier must lie in (0,1], got {}", self.width));
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("{NUM_CLASSES} classes expected, got {}", self.num_classes));
        }
        if self.input.contains(&0) {
            return bad(format!("empty input shape {:?}", self.input));
        }
        match self.kind {
            ModelKind::R2plus1d if self.clip_len < super::r2plus1d::MIN_CLIP_LEN => bad(format!(
                "R(2+1)D downsamples time by {m}; clip length {} is below the minimum of {m}",
                self.clip_len,
                m = super::r2plus1d::MIN_CLIP_LEN
            )),
            ModelKind::TwoStream if self.clip_len < 2 => {
                bad(format!("two-stream needs at least 2 frames per clip, got {}", self.clip_len))
            }
            ModelKind::Slowfast => {
                let s = self.slowfast;
                if s.slow_frames == 0 || s.fast_frames != 8 * s.slow_frames || s.beta_inv == 0 {
                    return bad(format!("SlowFast pathways must be in 8:1 frame ratio, got {s:?}"));
                }
                Ok(())
            }
            _ if self.clip_len == 0 => bad("clip length must be positive".into()),
            _ => Ok(()),
        }
    }

    /// Scale a reference channel count by the width multiplier.
    pub fn channels(&self, c: usize) -> usize {
        ((c as f64 * self.width).round() as usize).max(1)
    }

    /// Frames per training sample before any resampling.
    pub fn frames_per_sample(&self) -> usize {
        match self.kind {
            ModelKind::Slowfast => crate::dataio::clips::SLOWFAST_SPAN,
            _ => self.clip_len,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

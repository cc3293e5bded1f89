//! Training plan resolution: flags, then the JSON config file, then per-model defaults.

use std::path::{Path, PathBuf};

use meltstream_core::harness::{ExperimentPlan, TrainOptions};
use meltstream_core::models::{Fusion, ModelConfig, ModelKind, SlowFastShape, Streams};
use meltstream_core::nn::OptimizerKind;
use meltstream_core::optflow::FlowParams;
use meltstream_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::TrainArgs;

/// Every field optional; anything absent falls through to the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub width: Option<f64>,
    pub clip_len: Option<usize>,
    pub input: Option<[usize; 3]>,
    pub fusion: Option<Fusion>,
    pub streams: Option<Streams>,
    pub slowfast: Option<SlowFastShape>,
    pub flow: Option<FlowParams>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub stop_at_train_acc: Option<f64>,
    pub stop_at_val_acc: Option<f64>,
}

impl TrainFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            detail: e.to_string(),
        })
    }
}

/// Everything `train` needs after precedence has been applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub plan: ExperimentPlan,
    pub manifest_org: Option<PathBuf>,
    pub manifest_aug: Option<PathBuf>,
}

pub fn resolve(args: &TrainArgs, file: &TrainFile, data: Option<&Path>) -> Result<Resolved> {
    let kind: ModelKind = args.model;
    let mut config = ModelConfig::new(kind, args.width.or(file.width).unwrap_or(1.0));
    if let Some(s) = args.clip_len.or(file.clip_len) {
        config.clip_len = s;
    }
    if let Some(i) = file.input {
        config.input = i;
    }
    if let Some(f) = file.fusion {
        config.fusion = f;
    }
    if let Some(s) = file.streams {
        config.streams = s;
    }
    if let Some(s) = file.slowfast {
        config.slowfast = s;
    }
    if let Some(f) = file.flow {
        config.flow = f;
    }

    let mut hp = kind.default_hyperparams();
    if let Some(v) = args.lr.or(file.learning_rate) {
        hp.learning_rate = v;
    }
    if let Some(v) = args.batch_size.or(file.batch_size) {
        hp.batch_size = v;
    }
    if let Some(v) = args.epochs.or(file.epochs) {
        hp.epochs = v;
    }
    if let Some(v) = file.optimizer {
        hp.optimizer = v;
    }
    if file.momentum.is_some() {
        hp.momentum = file.momentum;
    }
    if file.weight_decay.is_some() {
        hp.weight_decay = file.weight_decay;
    }

    let seed = args.seed.or(file.seed).unwrap_or(0);
    let repeats = args.repeats.or(file.repeats).unwrap_or(kind.default_repeats());
    let options = TrainOptions {
        stop_at_train_acc: args.stop_at_train_acc.or(file.stop_at_train_acc),
        stop_at_val_acc: args.stop_at_val_acc.or(file.stop_at_val_acc),
        checkpoint: None,
    };
    let default_manifest = |sub: &str| data.map(|d| d.join(sub).join("manifest.json"));
    let manifest_org = args.manifest_org.clone().or_else(|| default_manifest("original"));
    let manifest_aug = args.manifest_aug.clone().or_else(|| default_manifest("augmented"));
    // every setting trains or tests on both origins
    if manifest_org.is_none() {
        return Err(Error::InvalidArgument(
            "no original manifest: pass --manifest-org or set MELTSTREAM_DATA".into(),
        ));
    }
    if manifest_aug.is_none() {
        return Err(Error::InvalidArgument(
            "no augmented manifest: pass --manifest-aug or set MELTSTREAM_DATA".into(),
        ));
    }

    let plan = ExperimentPlan {
        setting: args.setting,
        config,
        hyperparams: hp,
        seeds: ExperimentPlan::seeds_from(seed, repeats),
        manifest_org: manifest_org.clone(),
        manifest_aug: manifest_aug.clone(),
        options,
    };
    plan.validate()?;
    Ok(Resolved {
        plan,
        manifest_org,
        manifest_aug,
    })
}

//! The three train/test protocols and the clip lists they select.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::clips::{window_ranges, SLOWFAST_SPAN};
use crate::dataio::{Label, Manifest, Split};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    /// Train and validate on original clips, test on augmented validation clips.
    A,
    /// Train and validate on augmented clips, test on original validation clips.
    B,
    /// Train and validate on both, test on each validation set separately.
    C,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::A, Setting::B, Setting::C];

    pub fn name(self) -> &'static str {
        match self {
            Setting::A => "A",
            Setting::B => "B",
            Setting::C => "C",
        }
    }

    /// Test sets reported for this setting.
    pub fn test_sets(self) -> &'static [TestSet] {
        match self {
            Setting::A => &[TestSet::Augmented],
            Setting::B => &[TestSet::Original],
            Setting::C => &[TestSet::Original, TestSet::Augmented],
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Setting::A),
            "B" => Ok(Setting::B),
            "C" => Ok(Setting::C),
            _ => Err(Error::InvalidArgument(format!("unknown setting {s:?}; expected A, B or C"))),
        }
    }
}

/// Which manifest a sample comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Augmented,
}

/// Held-out validation set a model is tested on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    Original,
    Augmented,
}

impl TestSet {
    pub fn origin(self) -> Origin {
        match self {
            TestSet::Original => Origin::Original,
            TestSet::Augmented => Origin::Augmented,
        }
    }

    /// Column name in reports.
    pub fn column(self) -> &'static str {
        match self {
            TestSet::Original => "test_org_acc",
            TestSet::Augmented => "test_aug_acc",
        }
    }
}

/// How videos are cut into samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Non-overlapping windows of this many frames; the remainder is dropped.
    Windows(usize),
    /// One sample per video per pass, drawn at random from the whole video.
    WholeVideo { min_frames: usize },
}

impl Sampling {
    pub fn for_model(cfg: &ModelConfig) -> Self {
        match cfg.kind {
            ModelKind::Slowfast => Sampling::WholeVideo { min_frames: SLOWFAST_SPAN },
            _ => Sampling::Windows(cfg.clip_len),
        }
    }
}

/// One training or evaluation unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRef {
    pub origin: Origin,
    /// Index into the manifest's entries.
    pub entry: usize,
    /// Window index, or `None` for whole-video samples.
    pub window: Option<usize>,
    pub label: Label,
}

/// Identity of a clip across manifests: the source video, the window and the
/// augmentation that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClipKey {
    pub source: String,
    pub window: Option<usize>,
    pub spec_id: Option<usize>,
}

/// The original manifest and, when augmentation has been run, the augmented one.
#[derive(Clone, Debug, Default)]
pub struct Manifests {
    pub original: Option<Manifest>,
    pub augmented: Option<Manifest>,
}

impl Manifests {
    pub fn get(&self, origin: Origin) -> Result<&Manifest> {
        let m = match origin {
            Origin::Original => self.original.as_ref(),
            Origin::Augmented => self.augmented.as_ref(),
        };
        m.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "the {} manifest is required",
                match origin {
                    Origin::Original => "original",
                    Origin::Augmented => "augmented",
                }
            ))
        })
    }

    pub fn key(&self, s: &SampleRef) -> Result<ClipKey> {
        let e = self.get(s.origin)?.entries.get(s.entry).ok_or_else(|| {
            Error::InvalidArgument(format!("sample refers to missing entry {}", s.entry))
        })?;
        Ok(ClipKey {
            source: e.source_id(),
            window: s.window,
            spec_id: e.spec_id,
        })
    }

    /// Frames in the distinct videos the samples are drawn from.
    pub fn frames(&self, samples: &[SampleRef]) -> Result<usize> {
        let mut seen = HashSet::new();
        let mut total = 0;
        for s in samples {
            if seen.insert((s.origin, s.entry)) {
                total += self.get(s.origin)?.entries[s.entry].frame_count;
            }
        }
        Ok(total)
    }
}

/// Samples of one split of one manifest, in manifest order.
pub fn samples(m: &Manifest, origin: Origin, split: Split, sampling: Sampling) -> Result<Vec<SampleRef>> {
    let mut out = Vec::new();
    for (i, e) in m.entries.iter().enumerate().filter(|(_, e)| e.split == split) {
        match sampling {
            Sampling::Windows(s) => {
                let n = window_ranges(e.frame_count, s)?.len();
                out.extend((0..n).map(|w| SampleRef {
                    origin,
                    entry: i,
                    window: Some(w),
                    label: e.label,
                }));
            }
            Sampling::WholeVideo { min_frames } => {
                if e.frame_count < min_frames {
                    return Err(Error::InvalidArgument(format!(
                        "{} has {} frames; dual-rate sampling needs at least {min_frames}",
                        e.path.display(),
                        e.frame_count
                    )));
                }
                out.push(SampleRef {
                    origin,
                    entry: i,
                    window: None,
                    label: e.label,
                });
            }
        }
    }
    Ok(out)
}

/// Train, validation and test samples of one setting.
#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub setting: Setting,
    pub train: Vec<SampleRef>,
    pub val: Vec<SampleRef>,
    pub tests: Vec<(TestSet, Vec<SampleRef>)>,
}

impl SplitPlan {
    pub fn test(&self, set: TestSet) -> Option<&[SampleRef]> {
        self.tests.iter().find(|(t, _)| *t == set).map(|(_, v)| v.as_slice())
    }

    /// No clip, and no source video, is shared between training and any evaluation set.
    pub fn check_integrity(&self, data: &Manifests) -> Result<()> {
        let train_keys: HashSet<ClipKey> = self.train.iter().map(|s| data.key(s)).collect::<Result<_>>()?;
        let train_sources: HashSet<&str> = train_keys.iter().map(|k| k.source.as_str()).collect();
        let held_out = self.val.iter().chain(self.tests.iter().flat_map(|(_, v)| v));
        for s in held_out {
            let k = data.key(s)?;
            if train_keys.contains(&k) || train_sources.contains(k.source.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "clip {k:?} appears in both training and held-out data of setting {}",
                    self.setting
                )));
            }
        }
        Ok(())
    }
}

/// Assemble the splits of `setting`. Setting C pools original and augmented
/// clips without rebalancing.
pub fn make_setting(setting: Setting, data: &Manifests, sampling: Sampling) -> Result<SplitPlan> {
    let pick = |origin: Origin, split: Split| -> Result<Vec<SampleRef>> {
        samples(data.get(origin)?, origin, split, sampling)
    };
    let (train, val) = match setting {
        Setting::A => (pick(Origin::Original, Split::Train)?, pick(Origin::Original, Split::Val)?),
        Setting::B => (pick(Origin::Augmented, Split::Train)?, pick(Origin::Augmented, Split::Val)?),
        Setting::C => {
            let mut train = pick(Origin::Original, Split::Train)?;
            train.extend(pick(Origin::Augmented, Split::Train)?);
            let mut val = pick(Origin::Original, Split::Val)?;
            val.extend(pick(Origin::Augmented, Split::Val)?);
            (train, val)
        }
    };
    let tests = setting
        .test_sets()
        .iter()
        .map(|&t| Ok((t, pick(t.origin(), Split::Val)?)))
        .collect::<Result<Vec<_>>>()?;
    if train.is_empty() || val.is_empty() || tests.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "setting {setting} has an empty split ({} train, {} val samples)",
            train.len(),
            val.len()
        )));
    }
    let plan = SplitPlan {
        setting,
        train,
        val,
        tests,
    };
    plan.check_integrity(data)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Entry;

    fn manifest(videos: &[(Split, usize, Option<usize>)]) -> Manifest {
        let mut m = Manifest::new("/data");
        for (i, &(split, frames, spec)) in videos.iter().enumerate() {
            m.entries.push(Entry {
                path: format!("v{i}.mpv").into(),
                label: Label::from_index(i % 4).unwrap(),
                split,
                frame_count: frames,
                source: Some(format!("src{i}")),
                spec: None,
                spec_id: spec,
            });
        }
        m
    }

    #[test]
    fn settings_parse_case_insensitively() {
        assert_eq!("c".parse::<Setting>().unwrap(), Setting::C);
        assert!("D".parse::<Setting>().is_err());
    }

    #[test]
    fn windows_and_whole_videos() {
        let m = manifest(&[(Split::Train, 284, None), (Split::Train, 63, None), (Split::Val, 160, None)]);
        let w = samples(&m, Origin::Original, Split::Train, Sampling::Windows(10)).unwrap();
        assert_eq!(w.len(), 28 + 6);
        assert_eq!(w[27].window, Some(27));
        assert!(samples(&m, Origin::Original, Split::Train, Sampling::WholeVideo { min_frames: 64 }).is_err());
        let v = samples(&m, Origin::Original, Split::Val, Sampling::WholeVideo { min_frames: 64 }).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn missing_manifest_is_rejected() {
        let data = Manifests {
            original: Some(manifest(&[(Split::Train, 20, None), (Split::Val, 20, None)])),
            augmented: None,
        };
        assert!(make_setting(Setting::A, &data, Sampling::Windows(10)).is_err());
        assert!(make_setting(Setting::B, &data, Sampling::Windows(10)).is_err());
    }

    #[test]
    fn leaked_source_is_detected() {
        let mut org = manifest(&[(Split::Train, 20, None), (Split::Val, 20, None)]);
        org.entries[1].source = org.entries[0].source.clone();
        let data = Manifests {
            original: Some(org),
            augmented: Some(manifest(&[(Split::Train, 20, Some(0)), (Split::Val, 20, Some(0))])),
        };
        assert!(make_setting(Setting::A, &data, Sampling::Windows(10)).is_err());
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mpv;
use crate::error::{Error, Result};

/// The four track conditions, in label-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Balling,
    Irregularity,
    Normal,
    Overheating,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Balling, Label::Irregularity, Label::Normal, Label::Overheating];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Balling => "balling",
            Label::Irregularity => "irregularity",
            Label::Normal => "normal",
            Label::Overheating => "overheating",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    pub frame_count: usize,
    /// Identifier of the original recording; augmented copies keep their parent's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Augmentation applied, e.g. `rotate:-15`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<usize>,
}

impl Entry {
    pub fn source_id(&self) -> String {
        self.source.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

pub const DEFAULT_FPS: f64 = 2000.0;
pub const DEFAULT_T_MAX_MS: f64 = 4.65;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    pub fps: f64,
    pub t_max_ms: f64,
    /// Frames per clip implied by `t_max_ms` at `fps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_length: Option<usize>,
    /// Directory the entry paths are relative to; set on load.
    #[serde(skip)]
    pub root: PathBuf,
}

/// `ceil(t_max · fps)`: 4.65 ms at 2000 fps spans 9.3 frames, so 10.
pub fn clip_length_for(t_max_ms: f64, fps: f64) -> usize {
    (t_max_ms * 1e-3 * fps - 1e-9).ceil().max(1.0) as usize
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Manifest {
            entries: Vec::new(),
            fps: DEFAULT_FPS,
            t_max_ms: DEFAULT_T_MAX_MS,
            clip_length: Some(clip_length_for(DEFAULT_T_MAX_MS, DEFAULT_FPS)),
            root: root.into(),
        }
    }

    /// Parse and check that every entry exists with the declared frame count.
    pub fn load(path: &Path) -> Result<Self> {
        let m = Self::parse(path)?;
        m.validate()?;
        Ok(m)
    }

    /// Parse only; malformed JSON reports line and column.
    pub fn parse(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            detail: e.to_string(),
        })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let p = self.resolve(e);
            let h = mpv::read_header(&p)?;
            if h.frames != e.frame_count {
                return Err(Error::Format {
                    path: p,
                    detail: format!("manifest declares {} frames, file holds {}", e.frame_count, h.frames),
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, e: &Entry) -> PathBuf {
        self.root.join(&e.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn frame_total(&self, split: Split) -> usize {
        self.split(split).map(|e| e.frame_count).sum()
    }

    pub fn clip_len(&self) -> usize {
        self.clip_length.unwrap_or_else(|| clip_length_for(self.t_max_ms, self.fps))
    }
}

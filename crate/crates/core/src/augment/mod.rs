//! The 39 sequence-preserving perturbations and the dataset fan-out.

pub mod transforms;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::manifest::{Entry, Manifest, Split};
use crate::dataio::mpv;
use crate::dataio::synth::derive_seed;
use crate::dataio::{read_clip, VideoClip};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
pub use transforms::{adjust_contrast, downscale, gaussian_noise, rotate, translate, FrameDims, PoissonTable};

pub const GAUSSIAN_VARIANCE: f64 = 0.1;
pub const POISSON_PEAK: f64 = 255.0;
pub const SPEC_COUNT: usize = 39;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Translate,
    Rotate,
    Contrast,
    Downscale,
    GaussianNoise,
    PoissonNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    Translate { dx: i64, dy: i64 },
    Rotate { degrees: f64 },
    Contrast { factor: f64 },
    Downscale { percent: u32 },
    GaussianNoise { variance: f64 },
    PoissonNoise { peak: f64 },
}

impl Augmentation {
    pub fn kind(&self) -> AugKind {
        match self {
            Augmentation::Translate { .. } => AugKind::Translate,
            Augmentation::Rotate { .. } => AugKind::Rotate,
            Augmentation::Contrast { .. } => AugKind::Contrast,
            Augmentation::Downscale { .. } => AugKind::Downscale,
            Augmentation::GaussianNoise { .. } => AugKind::GaussianNoise,
            Augmentation::PoissonNoise { .. } => AugKind::PoissonNoise,
        }
    }

    pub fn is_noise(&self) -> bool {
        matches!(self.kind(), AugKind::GaussianNoise | AugKind::PoissonNoise)
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::Translate { dx, dy } => write!(f, "translate:{dx},{dy}"),
            Augmentation::Rotate { degrees } => write!(f, "rotate:{degrees}"),
            Augmentation::Contrast { factor } => write!(f, "contrast:{factor}"),
            Augmentation::Downscale { percent } => write!(f, "downscale:{percent}"),
            Augmentation::GaussianNoise { variance } => write!(f, "gaussian:{variance}"),
            Augmentation::PoissonNoise { peak } => write!(f, "poisson:{peak}"),
        }
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognised augmentation {s:?}"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        Ok(match kind {
            "translate" => {
                let (a, b) = arg.split_once(',').ok_or_else(bad)?;
                Augmentation::Translate {
                    dx: a.trim().parse().map_err(|_| bad())?,
                    dy: b.trim().parse().map_err(|_| bad())?,
                }
            }
            "rotate" => Augmentation::Rotate { degrees: num(arg)? },
            "contrast" => Augmentation::Contrast { factor: num(arg)? },
            "downscale" => Augmentation::Downscale {
                percent: arg.trim().parse().map_err(|_| bad())?,
            },
            "gaussian" => Augmentation::GaussianNoise { variance: num(arg)? },
            "poisson" => Augmentation::PoissonNoise { peak: num(arg)? },
            _ => return Err(bad()),
        })
    }
}

/// One enumerated perturbation; `spec_id` is its position in [`enumerate_specs`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub spec_id: usize,
    pub op: Augmentation,
}

impl AugmentationSpec {
    pub fn name(&self) -> String {
        self.op.to_string()
    }
}

/// Translations, rotations, contrasts, downscales, then the two noise kinds.
pub fn enumerate_specs() -> Vec<AugmentationSpec> {
    let mut ops = Vec::with_capacity(SPEC_COUNT);
    for sign in [1i64, -1] {
        for k in (5..=25).step_by(5) {
            ops.push(Augmentation::Translate { dx: sign * k, dy: k });
        }
    }
    for sign in [-1.0, 1.0] {
        for k in [5.0, 10.0, 15.0, 20.0, 25.0] {
            ops.push(Augmentation::Rotate { degrees: sign * k });
        }
    }
    for k in 1..=9 {
        ops.push(Augmentation::Contrast { factor: k as f64 / 10.0 });
    }
    for k in 1..=8 {
        ops.push(Augmentation::Downscale { percent: k * 10 });
    }
    ops.push(Augmentation::GaussianNoise { variance: GAUSSIAN_VARIANCE });
    ops.push(Augmentation::PoissonNoise { peak: POISSON_PEAK });
    ops.into_iter()
        .enumerate()
        .map(|(spec_id, op)| AugmentationSpec { spec_id, op })
        .collect()
}

/// Stable 64-bit id for a source name.
pub fn video_key(video_id: &str) -> u64 {
    let digest = Sha256::digest(video_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Seed for the noise of one frame.
pub fn frame_seed(seed: u64, video_id: &str, spec_id: usize, frame: usize) -> u64 {
    derive_seed(seed, &[video_key(video_id), spec_id as u64, frame as u64])
}

/// Apply `op` to one `[C,H,W]` frame. Noise ops need `rng`.
pub fn apply_frame(op: &Augmentation, frame: &[f32], d: FrameDims, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    if frame.len() != d.len() {
        return Err(Error::shape("apply_frame", format!("{} values for {d:?}", frame.len())));
    }
    Ok(match *op {
        Augmentation::Translate { dx, dy } => translate(frame, d, dx, dy),
        Augmentation::Rotate { degrees } => rotate(frame, d, degrees),
        Augmentation::Contrast { factor } => adjust_contrast(frame, factor),
        Augmentation::Downscale { percent } => downscale(frame, d, percent)?,
        Augmentation::GaussianNoise { variance } => gaussian_noise(frame, variance, rng),
        Augmentation::PoissonNoise { peak } => PoissonTable::new(peak).apply(frame, rng),
    })
}

fn dims_of(frames: &Tensor<f32>) -> Result<FrameDims> {
    match frames.shape() {
        &[_, c, h, w] => Ok(FrameDims { c, h, w }),
        s => Err(Error::shape("augment_video", format!("expected [S,C,H,W], got {s:?}"))),
    }
}

/// Apply one spec to every frame; geometry is shared, noise is drawn per frame.
pub fn augment_video(video: &VideoClip, spec: &AugmentationSpec, seed: u64) -> Result<VideoClip> {
    let d = dims_of(&video.frames)?;
    let poisson = match spec.op {
        Augmentation::PoissonNoise { peak } => Some(PoissonTable::new(peak)),
        _ => None,
    };
    let mut out = Vec::with_capacity(video.frames.len());
    for (t, frame) in video.frames.data().chunks(d.len().max(1)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, &video.source_id, spec.spec_id, t));
        match &poisson {
            Some(table) => out.extend(table.apply(frame, &mut rng)),
            None => out.extend(apply_frame(&spec.op, frame, d, &mut rng)?),
        }
    }
    Ok(VideoClip {
        frames: Tensor::from_vec(video.frames.shape(), out)?,
        label: video.label,
        fps: video.fps,
        source_id: video.source_id.clone(),
    })
}

/// Receives each derived video; must tolerate calls from several workers.
pub trait AugmentSink: Sync {
    /// Store `video` and return the manifest path it was written to.
    fn accept(&self, source: &Entry, spec: &AugmentationSpec, video: &VideoClip) -> Result<PathBuf>;
}

/// Writes `{split}/{source}__{spec_id:02}.mpv` under `root`.
pub struct DirectorySink {
    pub root: PathBuf,
}

impl AugmentSink for DirectorySink {
    fn accept(&self, source: &Entry, spec: &AugmentationSpec, video: &VideoClip) -> Result<PathBuf> {
        let split = match source.split {
            Split::Train => "train",
            Split::Val => "val",
        };
        let rel = PathBuf::from(split).join(format!("{}__{:02}.mpv", source.source_id(), spec.spec_id));
        let path = self.root.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        mpv::write(&path, &video.frames)?;
        Ok(rel)
    }
}

/// Discards videos after checking their range; tallies frames per split.
#[derive(Default)]
pub struct CountingSink {
    pub train_frames: AtomicUsize,
    pub val_frames: AtomicUsize,
    pub videos: AtomicUsize,
    pub out_of_range: AtomicUsize,
}

impl AugmentSink for CountingSink {
    fn accept(&self, source: &Entry, spec: &AugmentationSpec, video: &VideoClip) -> Result<PathBuf> {
        let bad = video.frames.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        self.out_of_range.fetch_add(bad, Ordering::Relaxed);
        let counter = match source.split {
            Split::Train => &self.train_frames,
            Split::Val => &self.val_frames,
        };
        counter.fetch_add(video.len(), Ordering::Relaxed);
        self.videos.fetch_add(1, Ordering::Relaxed);
        Ok(PathBuf::from(format!("{}__{:02}", source.source_id(), spec.spec_id)))
    }
}

/// Apply every spec to every entry of `manifest`, handing results to `sink`.
/// Returns the derived manifest (rooted at `out_root`) in source-then-spec order.
pub fn augment_dataset(
    manifest: &Manifest,
    specs: &[AugmentationSpec],
    seed: u64,
    sink: &dyn AugmentSink,
    out_root: &Path,
    jobs: usize,
) -> Result<Manifest> {
    let mut derived = Manifest::new(out_root);
    derived.fps = manifest.fps;
    derived.t_max_ms = manifest.t_max_ms;
    derived.clip_length = manifest.clip_length;
    for (vi, source) in manifest.entries.iter().enumerate() {
        let video = read_clip(manifest, source)?;
        if video.len() != source.frame_count {
            return Err(Error::Format {
                path: manifest.resolve(source),
                detail: format!("expected {} frames, read {}", source.frame_count, video.len()),
            });
        }
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let done: Mutex<Vec<(usize, Entry)>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..jobs.clamp(1, specs.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(spec) = specs.get(i) else { break };
                    if failure.lock().unwrap().is_some() {
                        break;
                    }
                    let result = augment_video(&video, spec, seed).and_then(|v| sink.accept(source, spec, &v));
                    match result {
                        Ok(path) => done.lock().unwrap().push((
                            i,
                            Entry {
                                path,
                                label: source.label,
                                split: source.split,
                                frame_count: source.frame_count,
                                source: Some(source.source_id()),
                                spec: Some(spec.name()),
                                spec_id: Some(spec.spec_id),
                            },
                        )),
                        Err(e) => {
                            failure.lock().unwrap().get_or_insert(e);
                        }
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let mut done = done.into_inner().unwrap();
        done.sort_by_key(|(i, _)| *i);
        derived.entries.extend(done.into_iter().map(|(_, e)| e));
        log::debug!("augmented video {}/{}", vi + 1, manifest.entries.len());
    }
    Ok(derived)
}

/// Original entries followed by augmented ones, paths rewritten relative to `root`.
pub fn mixed_manifest(original: &Manifest, augmented: &Manifest, root: &Path) -> Manifest {
    let mut m = Manifest::new(root);
    m.fps = original.fps;
    m.t_max_ms = original.t_max_ms;
    m.clip_length = original.clip_length;
    for (src, e) in original
        .entries
        .iter()
        .map(|e| (original, e))
        .chain(augmented.entries.iter().map(|e| (augmented, e)))
    {
        let mut e = e.clone();
        let abs = src.resolve(&e);
        e.path = relative_to(&abs, root);
        if e.source.is_none() {
            e.source = Some(e.source_id());
        }
        m.entries.push(e);
    }
    m
}

fn relative_to(path: &Path, root: &Path) -> PathBuf {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, r) = (abs(path), abs(root));
    let pc: Vec<_> = p.components().collect();
    let rc: Vec<_> = r.components().collect();
    let common = pc.iter().zip(&rc).take_while(|(a, b)| a == b).count();
    let mut out = PathBuf::new();
    for _ in common..rc.len() {
        out.push("..");
    }
    for c in &pc[common..] {
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Label;

    #[test]
    fn thirty_nine_specs_by_kind() {
        let specs = enumerate_specs();
        assert_eq!(specs.len(), SPEC_COUNT);
        let count = |k: AugKind| specs.iter().filter(|s| s.op.kind() == k).count();
        assert_eq!(
            [
                count(AugKind::Translate),
                count(AugKind::Rotate),
                count(AugKind::Contrast),
                count(AugKind::Downscale),
                count(AugKind::GaussianNoise) + count(AugKind::PoissonNoise),
            ],
            [10, 10, 9, 8, 2]
        );
        for (i, s) in specs.iter().enumerate() {
            assert_eq!(s.spec_id, i);
        }
        assert_eq!(specs, enumerate_specs());
    }

    #[test]
    fn names_round_trip() {
        let names: Vec<String> = enumerate_specs().iter().map(|s| s.name()).collect();
        for (n, s) in names.iter().zip(enumerate_specs()) {
            assert_eq!(n.parse::<Augmentation>().unwrap(), s.op);
        }
        assert!(names.contains(&"rotate:-15".to_string()));
        assert!(names.contains(&"contrast:0.3".to_string()));
        assert!(names.contains(&"downscale:40".to_string()));
        assert!(names.contains(&"translate:-25,25".to_string()));
        assert!("blur:3".parse::<Augmentation>().is_err());
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), SPEC_COUNT);
    }

    #[test]
    fn relative_paths() {
        assert_eq!(relative_to(Path::new("/a/b/c.mpv"), Path::new("/a/d")), PathBuf::from("../b/c.mpv"));
        assert_eq!(relative_to(Path::new("/a/b/c.mpv"), Path::new("/a")), PathBuf::from("b/c.mpv"));
    }

    #[test]
    fn noise_frames_differ_but_reproduce() {
        let clip = VideoClip {
            frames: Tensor::full(&[2, 1, 8, 8], 0.5),
            label: Label::Normal,
            fps: 2000.0,
            source_id: "v".into(),
        };
        let spec = enumerate_specs()[37];
        let a = augment_video(&clip, &spec, 3).unwrap();
        assert_eq!(a, augment_video(&clip, &spec, 3).unwrap());
        assert_ne!(a.frames.data()[..64], a.frames.data()[64..]);
        assert_ne!(a, augment_video(&clip, &spec, 4).unwrap());
    }
}

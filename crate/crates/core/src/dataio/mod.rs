//! Clip files, manifests, frame preprocessing, clip sampling and the synthetic generator.

pub mod clips;
pub mod image;
pub mod manifest;
pub mod mpv;
pub mod synth;

pub use clips::{
    reshape_for_2d, reshape_for_3d, slowfast_sample, unreshape_from_2d, window_clips, window_ranges, ClipBatch,
    VideoClip,
};
pub use image::{resize_bilinear, resize_bilinear_centered, to_grayscale};
pub use manifest::{Entry, Label, Manifest, Split};
pub use synth::{synthesize_dataset, SynthConfig};

use std::path::Path;

use crate::error::Result;

/// Load a whole video named by a manifest entry.
pub fn read_clip(manifest: &Manifest, entry: &Entry) -> Result<VideoClip> {
    Ok(VideoClip {
        frames: mpv::read(&manifest.resolve(entry))?,
        label: entry.label,
        fps: manifest.fps,
        source_id: entry.source_id(),
    })
}

pub fn write_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    mpv::write(path, &clip.frames)
}

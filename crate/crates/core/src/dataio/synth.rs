//! Synthetic melt-pool videos with class-specific morphology.
//!
//! Geometry is expressed in normalised image coordinates so the same video
//! renders at any resolution.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Entry, Label, Manifest, Split};
use super::mpv::{self, Dtype, Header, Payload};
use crate::error::{Error, Result};

/// Frame counts of every video to generate, per split and class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Indexed by label.
    pub train: [Vec<usize>; 4],
    pub val: [Vec<usize>; 4],
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

pub const FULL_HEIGHT: usize = 140;
pub const FULL_WIDTH: usize = 200;

impl SynthConfig {
    pub fn uniform(train_per_class: usize, val_per_class: usize, frames: usize, height: usize, width: usize) -> Self {
        let v = |n| vec![frames; n];
        SynthConfig {
            train: [v(train_per_class), v(train_per_class), v(train_per_class), v(train_per_class)],
            val: [v(val_per_class), v(val_per_class), v(val_per_class), v(val_per_class)],
            height,
            width,
            channels: 3,
        }
    }

    /// Three training videos per class at 284 frames except one irregularity
    /// video at 160 and one overheating video at 283; one 284-frame validation
    /// video per class.
    pub fn full_size(height: usize, width: usize) -> Self {
        SynthConfig {
            train: [
                vec![284, 284, 284],
                vec![284, 284, 160],
                vec![284, 284, 284],
                vec![284, 284, 283],
            ],
            val: [vec![284], vec![284], vec![284], vec![284]],
            height,
            width,
            channels: 3,
        }
    }

    pub fn frame_total(&self, split: Split) -> usize {
        let lists = match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        };
        lists.iter().flatten().sum()
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `parts` under `base`, independent of generation order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

struct Blob {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    peak: f64,
}

fn smoothstep_edge(d: f64, soft: f64) -> f64 {
    // 1 inside, 0 outside, logistic transition of width `soft` at d = 1
    1.0 / (1.0 + ((d - 1.0) / soft).exp())
}

/// Per-video state evolved frame by frame.
struct Track {
    label: Label,
    scale: f64,
    cx: f64,
    cy: f64,
    gain: f64,
    drops: Vec<(f64, f64, f64)>,
    phases: [f64; 5],
    plume: f64,
}

impl Track {
    fn new(label: Label, rng: &mut ChaCha8Rng) -> Self {
        let drops = (0..rng.random_range(3..=5))
            .map(|_| {
                (
                    rng.random_range(0.2..0.8),
                    0.5 + rng.random_range(-0.08..0.08),
                    rng.random_range(0.045..0.07),
                )
            })
            .collect();
        Track {
            label,
            scale: rng.random_range(0.9..1.1),
            cx: 0.5 + rng.random_range(-0.03..0.03),
            cy: 0.5 + rng.random_range(-0.03..0.03),
            gain: rng.random_range(-0.05..0.05),
            drops,
            phases: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
            plume: rng.random_range(0.2..0.35),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) {
        self.cx += rng.random_range(-0.006..0.006) + (0.5 - self.cx) * 0.1;
        self.cy += rng.random_range(-0.006..0.006) + (0.5 - self.cy) * 0.1;
        match self.label {
            Label::Balling => {
                for d in &mut self.drops {
                    d.0 -= rng.random_range(0.01..0.025);
                    if d.0 < 0.1 {
                        *d = (rng.random_range(0.7..0.9), 0.5 + rng.random_range(-0.08..0.08), rng.random_range(0.045..0.07));
                    }
                }
            }
            Label::Irregularity => {
                for (k, p) in self.phases.iter_mut().enumerate() {
                    *p += rng.random_range(0.2..0.6) * (k + 1) as f64;
                }
            }
            Label::Overheating => {
                self.plume = (self.plume + rng.random_range(-0.04..0.04)).clamp(0.15, 0.45);
            }
            Label::Normal => {}
        }
    }

    fn blobs(&self) -> Vec<Blob> {
        let s = self.scale;
        match self.label {
            Label::Normal => vec![Blob { cx: self.cx, cy: self.cy, ax: 0.16 * s, ay: 0.10 * s, peak: 0.75 + self.gain }],
            Label::Balling => {
                let mut v = vec![Blob { cx: self.cx + 0.12, cy: self.cy, ax: 0.07 * s, ay: 0.06 * s, peak: 0.7 + self.gain }];
                v.extend(self.drops.iter().map(|&(x, y, r)| Blob { cx: x, cy: y, ax: r * s, ay: r * s, peak: 0.65 + self.gain }));
                v
            }
            Label::Irregularity => vec![Blob { cx: self.cx, cy: self.cy, ax: 0.2 * s, ay: 0.12 * s, peak: 0.7 + self.gain }],
            Label::Overheating => vec![Blob { cx: self.cx, cy: self.cy, ax: 0.24 * s, ay: 0.15 * s, peak: 0.97 }],
        }
    }

    /// Intensity in `[0,1]` at normalised `(u, v)`.
    fn intensity(&self, blobs: &[Blob], u: f64, v: f64) -> f64 {
        let mut best: f64 = 0.0;
        for b in blobs {
            let (dx, dy) = ((u - b.cx) / b.ax, (v - b.cy) / b.ay);
            let mut r = (dx * dx + dy * dy).sqrt();
            if self.label == Label::Irregularity {
                let th = dy.atan2(dx);
                let wobble: f64 = self
                    .phases
                    .iter()
                    .enumerate()
                    .map(|(k, p)| ((k + 3) as f64 * th + p).sin() / (k + 1) as f64)
                    .sum();
                r /= 1.0 + 0.4 * wobble;
            }
            // brighter core, soft rim
            let core = 1.0 - 0.35 * r.min(1.0).powi(2);
            best = best.max(b.peak * core * smoothstep_edge(r, 0.08));
        }
        if self.label == Label::Overheating {
            // plume streak trailing up and behind the pool
            let (px, py) = (u - self.cx + 0.1, self.cy - 0.1 - v);
            let along = (px * 0.6 + py * 0.8) / self.plume;
            let across = (-px * 0.8 + py * 0.6) / 0.035;
            if along > 0.0 {
                let s = 0.55 * (-along * along * 0.8 - across * across).exp();
                best = best.max(s);
            }
        }
        best
    }
}

/// Render one video as u8 `[S,C,H,W]`.
pub fn render_video(label: Label, frames: usize, height: usize, width: usize, channels: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut track = Track::new(label, &mut rng);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let plane = height * width;
    let mut out = Vec::with_capacity(frames * channels * plane);
    let mut lum = vec![0.0f64; plane];
    for _ in 0..frames {
        track.step(&mut rng);
        let blobs = track.blobs();
        for y in 0..height {
            let v = (y as f64 + 0.5) / height as f64;
            for x in 0..width {
                let u = (x as f64 + 0.5) / width as f64;
                lum[y * width + x] = (track.intensity(&blobs, u, v) + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        for c in 0..channels {
            // hot-metal tint: red saturates first
            let (gain, gamma) = match (channels, c) {
                (3, 0) => (1.0, 1.0),
                (3, 1) => (0.85, 1.2),
                (3, _) => (0.6, 1.5),
                _ => (1.0, 1.0),
            };
            out.extend(lum.iter().map(|&l| mpv::quantize((gain * l.powf(gamma)) as f32)));
        }
    }
    out
}

/// Write every video of `config` plus `manifest.json` under `out`; returns the manifest.
pub fn synthesize_dataset(config: &SynthConfig, seed: u64, out: &Path, jobs: usize) -> Result<Manifest> {
    let mut jobs_list: Vec<(Split, Label, usize, usize)> = Vec::new();
    for (split, lists) in [(Split::Train, &config.train), (Split::Val, &config.val)] {
        for label in Label::ALL {
            for (k, &frames) in lists[label.index()].iter().enumerate() {
                jobs_list.push((split, label, k, frames));
            }
        }
    }
    for dir in ["train", "val"] {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let entries: Mutex<Vec<(usize, Entry)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(split, label, k, frames)) = jobs_list.get(i) else { break };
                if failure.lock().unwrap().is_some() {
                    break;
                }
                let split_name = match split {
                    Split::Train => "train",
                    Split::Val => "val",
                };
                let rel = PathBuf::from(split_name).join(format!("{}_{k:02}.mpv", label.name()));
                let pixels = render_video(
                    label,
                    frames,
                    config.height,
                    config.width,
                    config.channels,
                    derive_seed(seed, &[i as u64]),
                );
                let header = Header {
                    frames,
                    channels: config.channels,
                    height: config.height,
                    width: config.width,
                    dtype: Dtype::U8,
                };
                match mpv::write_raw(&out.join(&rel), &header, &Payload::U8(pixels)) {
                    Ok(()) => entries.lock().unwrap().push((
                        i,
                        Entry {
                            path: rel,
                            label,
                            split,
                            frame_count: frames,
                            source: Some(format!("{split_name}-{}-{k:02}", label.name())),
                            spec: None,
                            spec_id: None,
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
    let mut entries = entries.into_inner().unwrap();
    entries.sort_by_key(|(i, _)| *i);
    let mut manifest = Manifest::new(out);
    manifest.entries = entries.into_iter().map(|(_, e)| e).collect();
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_totals() {
        let c = SynthConfig::full_size(FULL_HEIGHT, FULL_WIDTH);
        assert_eq!(c.frame_total(Split::Train), 3283);
        assert_eq!(c.frame_total(Split::Val), 1136);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, &[0]);
        assert_ne!(a, derive_seed(1, &[1]));
        assert_ne!(a, derive_seed(2, &[0]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
    }

    #[test]
    fn overheating_is_brighter_than_normal() {
        let mean = |l| {
            let v = render_video(l, 6, 28, 40, 1, 5);
            v.iter().map(|&b| b as f64).sum::<f64>() / v.len() as f64
        };
        assert!(mean(Label::Overheating) > mean(Label::Normal));
    }
}

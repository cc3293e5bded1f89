//! Single-frame transforms on `[C,H,W]` data in `[0,1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::dataio::image::resize_bilinear_centered;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FrameDims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shift content by `(dx, dy)` pixels (x right, y down); vacated pixels are 0.
pub fn translate(frame: &[f32], d: FrameDims, dx: i64, dy: i64) -> Vec<f32> {
    let mut out = vec![0.0; frame.len()];
    let (h, w) = (d.h as i64, d.w as i64);
    for c in 0..d.c {
        let base = c * d.plane();
        for y in 0..h {
            let sy = y - dy;
            if sy < 0 || sy >= h {
                continue;
            }
            let x0 = dx.max(0);
            let x1 = (w + dx).min(w);
            if x0 >= x1 {
                continue;
            }
            let dst = base + (y * w) as usize;
            let src = base + (sy * w) as usize;
            out[dst + x0 as usize..dst + x1 as usize]
                .copy_from_slice(&frame[src + (x0 - dx) as usize..src + (x1 - dx) as usize]);
        }
    }
    out
}

/// Rotate by `degrees` counter-clockwise (as displayed) about the image centre,
/// bilinear resampling, 0 where the source point falls outside the frame.
pub fn rotate(frame: &[f32], d: FrameDims, degrees: f64) -> Vec<f32> {
    if degrees == 0.0 {
        return frame.to_vec();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((d.w as f64 - 1.0) / 2.0, (d.h as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; frame.len()];
    let (wmax, hmax) = (d.w as f64 - 1.0, d.h as f64 - 1.0);
    for y in 0..d.h {
        for x in 0..d.w {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            // inverse map: with y pointing down, a displayed CCW turn is R(-θ)
            let sx = c * px - s * py + cx;
            let sy = s * px + c * py + cy;
            if sx < -1e-9 || sy < -1e-9 || sx > wmax + 1e-9 || sy > hmax + 1e-9 {
                continue;
            }
            let (sx, sy) = (sx.clamp(0.0, wmax), sy.clamp(0.0, hmax));
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(d.w - 1), (y0 + 1).min(d.h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..d.c {
                let p = &frame[ch * d.plane()..(ch + 1) * d.plane()];
                let top = p[y0 * d.w + x0] + (p[y0 * d.w + x1] - p[y0 * d.w + x0]) * fx;
                let bot = p[y1 * d.w + x0] + (p[y1 * d.w + x1] - p[y1 * d.w + x0]) * fx;
                out[ch * d.plane() + y * d.w + x] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// `clamp(μ + c·(x − μ))` with μ the mean of the whole frame.
pub fn adjust_contrast(frame: &[f32], factor: f64) -> Vec<f32> {
    let mu = frame.iter().map(|&v| v as f64).sum::<f64>() / frame.len().max(1) as f64;
    frame
        .iter()
        .map(|&v| (mu + factor * (v as f64 - mu)).clamp(0.0, 1.0) as f32)
        .collect()
}

/// Shrink content to `percent`% of each side and centre it on a zero canvas.
pub fn downscale(frame: &[f32], d: FrameDims, percent: u32) -> Result<Vec<f32>> {
    let scaled = |n: usize| ((n as f64 * percent as f64 / 100.0).round() as usize).clamp(1, n);
    let (h2, w2) = (scaled(d.h), scaled(d.w));
    let src = Tensor::from_vec(&[d.c, d.h, d.w], frame.to_vec())?;
    let small = resize_bilinear_centered(&src, h2, w2)?;
    let (oy, ox) = ((d.h - h2) / 2, (d.w - w2) / 2);
    let mut out = vec![0.0; frame.len()];
    for ch in 0..d.c {
        for y in 0..h2 {
            let dst = ch * d.plane() + (oy + y) * d.w + ox;
            let s = (ch * h2 + y) * w2;
            out[dst..dst + w2].copy_from_slice(&small.data()[s..s + w2]);
        }
    }
    Ok(out)
}

/// `clamp(x + N(0, variance))`.
pub fn gaussian_noise<R: Rng + ?Sized>(frame: &[f32], variance: f64, rng: &mut R) -> Vec<f32> {
    if variance == 0.0 {
        return frame.to_vec();
    }
    let n = Normal::new(0.0f32, variance.sqrt() as f32).expect("finite variance");
    frame.iter().map(|&v| (v + n.sample(rng)).clamp(0.0, 1.0)).collect()
}

/// Photon noise at `peak` levels: `clamp(Poisson(x·peak)/peak)`.
pub struct PoissonTable {
    peak: f64,
    integer: Vec<Option<Poisson<f64>>>,
}

impl PoissonTable {
    pub fn new(peak: f64) -> Self {
        let levels = peak.round().max(0.0) as usize;
        PoissonTable {
            peak,
            integer: (0..=levels).map(|k| Poisson::new(k as f64).ok()).collect(),
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, frame: &[f32], rng: &mut R) -> Vec<f32> {
        frame
            .iter()
            .map(|&v| {
                let lambda = v.clamp(0.0, 1.0) as f64 * self.peak;
                if lambda <= 0.0 {
                    return 0.0;
                }
                let k = lambda.round();
                let draw = if (lambda - k).abs() < 1e-4 && (k as usize) < self.integer.len() {
                    self.integer[k as usize].as_ref().map_or(0.0, |p| p.sample(rng))
                } else {
                    Poisson::new(lambda).map_or(0.0, |p| p.sample(rng))
                };
                (draw / self.peak).clamp(0.0, 1.0) as f32
            })
            .collect()
    }
}

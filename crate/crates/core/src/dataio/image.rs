//! Per-frame resampling and colour conversion.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Source coordinate and weight table. Align-corners maps corner pixels onto each
/// other; otherwise pixel centres map as `(i + ½)·src/dst − ½`, clamped.
fn axis_taps(src: usize, dst: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if !align_corners {
                ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
            } else if dst == 1 || src == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn resize_plane<T: Scalar>(src: &[T], w: usize, out: &mut Vec<T>, ht: &[(usize, usize, f64)], wt: &[(usize, usize, f64)]) {
    for &(y0, y1, fy) in ht {
        let fy = T::of(fy);
        for &(x0, x1, fx) in wt {
            let fx = T::of(fx);
            let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
            let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
            let v = top + (bot - top) * fy;
            // exact convex combination can still drift by an ulp; keep within the corners
            let lo = src[y0 * w + x0].min(src[y0 * w + x1]).min(src[y1 * w + x0]).min(src[y1 * w + x1]);
            let hi = src[y0 * w + x0].max(src[y0 * w + x1]).max(src[y1 * w + x0]).max(src[y1 * w + x1]);
            out.push(v.max(lo).min(hi));
        }
    }
}

/// Bilinear resize of the last two axes of `[..., H, W]`, mapping corner pixels
/// onto corner pixels.
pub fn resize_bilinear<T: Scalar>(frames: &Tensor<T>, h2: usize, w2: usize) -> Result<Tensor<T>> {
    resize_with(frames, h2, w2, true)
}

/// Bilinear resize with pixel-centre alignment, so content scales by exactly `h2/h`, `w2/w`.
pub fn resize_bilinear_centered<T: Scalar>(frames: &Tensor<T>, h2: usize, w2: usize) -> Result<Tensor<T>> {
    resize_with(frames, h2, w2, false)
}

fn resize_with<T: Scalar>(frames: &Tensor<T>, h2: usize, w2: usize, align_corners: bool) -> Result<Tensor<T>> {
    let shape = frames.shape();
    if shape.len() < 2 || h2 == 0 || w2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize of {shape:?} to {h2}x{w2}"
        )));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h == h2 && w == w2 {
        return Ok(frames.clone());
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("resize of empty frame {shape:?}")));
    }
    let (ht, wt) = (axis_taps(h, h2, align_corners), axis_taps(w, w2, align_corners));
    let planes = frames.len() / (h * w);
    let mut out = Vec::with_capacity(planes * h2 * w2);
    for p in frames.data().chunks_exact(h * w) {
        resize_plane(p, w, &mut out, &ht, &wt);
    }
    let mut new_shape = shape.to_vec();
    let r = new_shape.len();
    new_shape[r - 2] = h2;
    new_shape[r - 1] = w2;
    Tensor::from_vec(&new_shape, out)
}

/// Luminance of `[3,H,W]` or `[S,3,H,W]` frames; the channel axis becomes 1.
pub fn to_grayscale<T: Scalar>(frames: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = frames.shape();
    let caxis = match shape.len() {
        3 => 0,
        4 => 1,
        _ => return Err(Error::shape("to_grayscale", format!("expected [3,H,W] or [S,3,H,W], got {shape:?}"))),
    };
    if shape[caxis] != 3 {
        return Err(Error::shape(
            "to_grayscale",
            format!("needs 3 channels, got {}", shape[caxis]),
        ));
    }
    let plane = shape[caxis + 1] * shape[caxis + 2];
    let k = LUMA.map(T::of);
    let mut out = Vec::with_capacity(frames.len() / 3);
    for f in frames.data().chunks_exact(3 * plane) {
        let (r, rest) = f.split_at(plane);
        let (g, b) = rest.split_at(plane);
        out.extend((0..plane).map(|i| k[0] * r[i] + k[1] * g[i] + k[2] * b[i]));
    }
    let mut new_shape = shape.to_vec();
    new_shape[caxis] = 1;
    Tensor::from_vec(&new_shape, out)
}

/// Bring `[S,C,H,W]` frames to `channels` (1 via luminance, 3 via replication)
/// and `h×w`.
pub fn conform<T: Scalar>(frames: &Tensor<T>, channels: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let c = frames.dim(1);
    let recoloured = match (c, channels) {
        (a, b) if a == b => frames.clone(),
        (3, 1) => to_grayscale(frames)?,
        (1, 3) => {
            let [s, _, fh, fw] = frames.shape()[..] else { unreachable!() };
            let plane = fh * fw;
            let mut out = Vec::with_capacity(frames.len() * 3);
            for f in frames.data().chunks_exact(plane) {
                for _ in 0..3 {
                    out.extend_from_slice(f);
                }
            }
            Tensor::from_vec(&[s, 3, fh, fw], out)?
        }
        (a, b) => return Err(Error::shape("conform", format!("cannot map {a} channels to {b}"))),
    };
    resize_bilinear(&recoloured, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_corners_midpoint() {
        let row = Tensor::from_vec(&[1, 1, 2], vec![0.0f64, 1.0]).unwrap();
        let r = resize_bilinear(&row, 1, 3).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn identity_and_constant() {
        let t = Tensor::from_vec(&[1, 2, 3], vec![0.1f32, 0.7, 0.3, 0.9, 0.2, 0.4]).unwrap();
        assert_eq!(resize_bilinear(&t, 2, 3).unwrap(), t);
        let c = Tensor::full(&[2, 5, 7], 0.37f32);
        let r = resize_bilinear(&c, 13, 4).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn luminance_coefficients() {
        let px = |r: f64, g: f64, b: f64| {
            let t = Tensor::from_vec(&[3, 1, 1], vec![r, g, b]).unwrap();
            to_grayscale(&t).unwrap().data()[0]
        };
        assert!((px(0.5, 0.5, 0.5) - 0.5).abs() < 1e-15);
        assert!((px(1.0, 0.0, 0.0) - 0.299).abs() < 1e-15);
        assert!((px(0.0, 0.0, 1.0) - 0.114).abs() < 1e-15);
        assert!(to_grayscale(&Tensor::<f64>::zeros(&[2, 1, 1])).is_err());
    }
}

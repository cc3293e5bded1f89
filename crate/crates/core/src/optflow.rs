//! Dense optical flow (Horn–Schunck) and stacked temporal-stream inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::image::{conform, resize_bilinear};
use crate::dataio::mpv::{self, Dtype, Header, Payload};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Intensities are rescaled to 0..255 before solving so `alpha` is in grey levels.
pub const INTENSITY_SCALE: f32 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 10.0,
            iterations: 100,
        }
    }
}

impl FlowParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || self.iterations == 0 {
            return Err(Error::InvalidArgument(format!(
                "flow needs alpha > 0 and at least one iteration, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-pixel displacement in pixels, `u` along x and `v` along y.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Tensor<f32>,
    pub v: Tensor<f32>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField {
            u: Tensor::zeros(&[h, w]),
            v: Tensor::zeros(&[h, w]),
        }
    }

    pub fn height(&self) -> usize {
        self.u.dim(0)
    }

    pub fn width(&self) -> usize {
        self.u.dim(1)
    }
}

fn plane_dims(t: &Tensor<f32>) -> Result<(usize, usize)> {
    match t.shape() {
        &[h, w] | &[1, h, w] => Ok((h, w)),
        s => Err(Error::shape("dense_flow", format!("expected a single-channel frame, got {s:?}"))),
    }
}

/// 4-neighbour mean with edge replication.
fn neighbour_mean(f: &[f32], h: usize, w: usize, out: &mut [f32]) {
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            out[y * w + x] = 0.25 * (f[up * w + x] + f[down * w + x] + f[y * w + left] + f[y * w + right]);
        }
    }
}

/// Central differences (one-sided at the border) averaged over both frames.
fn gradients(a: &[f32], b: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    let mut it = vec![0.0; h * w];
    let s = INTENSITY_SCALE;
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let i = y * w + x;
            let dx = (x1 - x0).max(1) as f32;
            let dy = (y1 - y0).max(1) as f32;
            ix[i] = s * 0.5 * ((a[y * w + x1] - a[y * w + x0]) + (b[y * w + x1] - b[y * w + x0])) / dx;
            iy[i] = s * 0.5 * ((a[y1 * w + x] - a[y0 * w + x]) + (b[y1 * w + x] - b[y0 * w + x])) / dy;
            it[i] = s * (b[i] - a[i]);
        }
    }
    (ix, iy, it)
}

/// Flow from `f1` to `f2` (`[H,W]` or `[1,H,W]`, values in `[0,1]`).
pub fn dense_flow(f1: &Tensor<f32>, f2: &Tensor<f32>, params: FlowParams) -> Result<FlowField> {
    dense_flow_traced(f1, f2, params, |_, _| {})
}

/// As [`dense_flow`], calling `observe(k, field)` after each iteration `k` (1-based).
pub fn dense_flow_traced(
    f1: &Tensor<f32>,
    f2: &Tensor<f32>,
    params: FlowParams,
    mut observe: impl FnMut(usize, &FlowField),
) -> Result<FlowField> {
    params.validate()?;
    let (h, w) = plane_dims(f1)?;
    if plane_dims(f2)? != (h, w) {
        return Err(Error::shape(
            "dense_flow",
            format!("frame sizes differ: {:?} vs {:?}", f1.shape(), f2.shape()),
        ));
    }
    let mut field = FlowField::zeros(h, w);
    if h == 0 || w == 0 {
        return Ok(field);
    }
    let (ix, iy, it) = gradients(f1.data(), f2.data(), h, w);
    let alpha2 = (params.alpha * params.alpha) as f32;
    let denom: Vec<f32> = ix.iter().zip(&iy).map(|(a, b)| alpha2 + a * a + b * b).collect();
    let mut ubar = vec![0.0; h * w];
    let mut vbar = vec![0.0; h * w];
    for k in 1..=params.iterations {
        neighbour_mean(field.u.data(), h, w, &mut ubar);
        neighbour_mean(field.v.data(), h, w, &mut vbar);
        let (u, v) = (field.u.data_mut(), &mut vbar);
        for i in 0..h * w {
            let r = (ix[i] * ubar[i] + iy[i] * v[i] + it[i]) / denom[i];
            u[i] = ubar[i] - ix[i] * r;
            v[i] -= iy[i] * r;
        }
        field.v.data_mut().copy_from_slice(&vbar);
        observe(k, &field);
    }
    Ok(field)
}

/// Mean `|f2(x + u, y + v) − f1(x, y)|` with bilinear lookup, border-clamped.
pub fn warp_residual(f1: &Tensor<f32>, f2: &Tensor<f32>, flow: &FlowField) -> Result<f64> {
    let (h, w) = plane_dims(f1)?;
    if plane_dims(f2)? != (h, w) || flow.u.shape() != [h, w] {
        return Err(Error::shape("warp_residual", "frame and flow sizes differ"));
    }
    let (a, b) = (f1.data(), f2.data());
    let mut total = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = (x as f32 + flow.u.data()[i]).clamp(0.0, (w - 1) as f32);
            let sy = (y as f32 + flow.v.data()[i]).clamp(0.0, (h - 1) as f32);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
            let top = b[y0 * w + x0] + (b[y0 * w + x1] - b[y0 * w + x0]) * fx;
            let bot = b[y1 * w + x0] + (b[y1 * w + x1] - b[y1 * w + x0]) * fx;
            total += ((top + (bot - top) * fy) - a[i]).abs() as f64;
        }
    }
    Ok(total / (h * w).max(1) as f64)
}

/// Flows of the S−1 consecutive pairs of `clip` (`[S,C,H,W]`, C ∈ {1,3}),
/// interleaved as `[2(S−1),H,W]`: channel 2k is u of pair k, 2k+1 its v.
pub fn stack_flows(clip: &Tensor<f32>, params: FlowParams) -> Result<Tensor<f32>> {
    stack_flows_jobs(clip, params, 1)
}

/// [`stack_flows`] with pairs solved on up to `jobs` threads; the result does
/// not depend on `jobs`.
pub fn stack_flows_jobs(clip: &Tensor<f32>, params: FlowParams, jobs: usize) -> Result<Tensor<f32>> {
    let &[s, c, h, w] = clip.shape() else {
        return Err(Error::shape("stack_flows", format!("expected [S,C,H,W], got {:?}", clip.shape())));
    };
    if s < 2 {
        return Err(Error::InvalidArgument(format!("flow stack needs at least 2 frames, got {s}")));
    }
    params.validate()?;
    let gray = if c == 1 { clip.clone() } else { conform(clip, 1, h, w)? };
    let plane = h * w;
    let frame = |t: usize| Tensor::from_vec(&[h, w], gray.data()[t * plane..(t + 1) * plane].to_vec());
    let pair = |t: usize| -> Result<FlowField> { dense_flow(&frame(t)?, &frame(t + 1)?, params) };
    let fields: Vec<Result<FlowField>> = if jobs <= 1 {
        (0..s - 1).map(pair).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(Vec::with_capacity(s - 1));
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(s - 1) {
                scope.spawn(|| loop {
                    let t = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if t >= s - 1 {
                        break;
                    }
                    let f = pair(t);
                    done.lock().unwrap().push((t, f));
                });
            }
        });
        let mut done = done.into_inner().unwrap();
        done.sort_by_key(|(t, _)| *t);
        done.into_iter().map(|(_, f)| f).collect()
    };
    let mut out = Vec::with_capacity(2 * (s - 1) * plane);
    for f in fields {
        let f = f?;
        out.extend_from_slice(f.u.data());
        out.extend_from_slice(f.v.data());
    }
    Tensor::from_vec(&[2 * (s - 1), h, w], out)
}

/// Temporal-stream input for a batch `[N,S,C,H,W]`: frames are resized to
/// `size`×`size`, then stacked to `[N,2(S−1),size,size]`.
pub fn flow_batch(batch: &Tensor<f32>, size: usize, params: FlowParams) -> Result<Tensor<f32>> {
    let &[n, s, c, h, w] = batch.shape() else {
        return Err(Error::shape("flow_batch", format!("expected [N,S,C,H,W], got {:?}", batch.shape())));
    };
    let per = s * c * h * w;
    let mut stacks = Vec::with_capacity(n);
    for i in 0..n {
        let clip = Tensor::from_vec(&[s, c, h, w], batch.data()[i * per..(i + 1) * per].to_vec())?;
        let clip = if (h, w) == (size, size) { clip } else { resize_bilinear(&clip, size, size)? };
        stacks.push(stack_flows(&clip, params)?);
    }
    Tensor::stack(&stacks)
}

/// Write a `[2(S−1),H,W]` stack as an f32 MPV1 file of S−1 two-channel frames.
pub fn write_flow_dump(path: &Path, stack: &Tensor<f32>) -> Result<()> {
    let &[c2, h, w] = stack.shape() else {
        return Err(Error::shape("write_flow_dump", format!("expected [2P,H,W], got {:?}", stack.shape())));
    };
    if c2 % 2 != 0 {
        return Err(Error::shape("write_flow_dump", format!("odd channel count {c2}")));
    }
    let header = Header {
        frames: c2 / 2,
        channels: 2,
        height: h,
        width: w,
        dtype: Dtype::F32,
    };
    mpv::write_raw(path, &header, &Payload::F32(stack.data().to_vec()))
}

pub fn read_flow_dump(path: &Path) -> Result<Tensor<f32>> {
    let (header, payload) = mpv::read_raw(path)?;
    let Payload::F32(data) = payload else {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "flow dumps hold f32 data".into(),
        });
    };
    if header.channels != 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("flow dumps hold 2 channels, found {}", header.channels),
        });
    }
    Tensor::from_vec(&[2 * header.frames, header.height, header.width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_constant_frames_give_zero_flow() {
        let f = Tensor::from_vec(&[3, 4], (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let flow = dense_flow(&f, &f, FlowParams::default()).unwrap();
        assert!(flow.u.data().iter().chain(flow.v.data()).all(|&x| x == 0.0));
        let a = Tensor::full(&[5, 5], 0.2);
        let b = Tensor::full(&[5, 5], 0.7);
        let flow = dense_flow(&a, &b, FlowParams::default()).unwrap();
        assert!(flow.u.data().iter().chain(flow.v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Tensor::<f32>::zeros(&[4, 4]);
        let b = Tensor::<f32>::zeros(&[4, 5]);
        assert!(dense_flow(&a, &b, FlowParams::default()).is_err());
        let p = FlowParams { alpha: 0.0, iterations: 5 };
        assert!(dense_flow(&a, &a, p).is_err());
        assert!(stack_flows(&Tensor::zeros(&[1, 1, 4, 4]), FlowParams::default()).is_err());
    }

    #[test]
    fn threaded_stack_matches_serial() {
        let clip = Tensor::from_vec(
            &[5, 1, 12, 12],
            (0..5 * 144).map(|i| ((i % 144) as f32 * 0.3 + (i / 144) as f32).sin() * 0.5 + 0.5).collect(),
        )
        .unwrap();
        let p = FlowParams { alpha: 5.0, iterations: 20 };
        assert_eq!(stack_flows_jobs(&clip, p, 3).unwrap(), stack_flows(&clip, p).unwrap());
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mpv");
        let t = Tensor::from_vec(&[4, 2, 3], (0..24).map(|i| i as f32 * -0.25).collect()).unwrap();
        write_flow_dump(&p, &t).unwrap();
        assert_eq!(read_flow_dump(&p).unwrap(), t);
        assert_eq!(mpv::read_header(&p).unwrap().channels, 2);
    }
}

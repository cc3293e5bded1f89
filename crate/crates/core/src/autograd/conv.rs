//! Convolution and pooling over `[N,C,S,H,W]` volumes (2D inputs use `S = 1`).
//!
//! Convolutions lower each output time slice to a column matrix and hand the
//! product to GEMM, so the scratch buffer never exceeds one slice.

use serde::{Deserialize, Serialize};

use super::{Backward, GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef, Scalar, Tensor};

/// Per-axis stride and zero padding, ordered (time, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn new(stride: [usize; 3], pad: [usize; 3]) -> Self {
        ConvGeom { stride, pad }
    }

    /// Unit stride, no padding.
    pub fn unit() -> Self {
        Self::new([1, 1, 1], [0, 0, 0])
    }

    /// Spatial-only geometry.
    pub fn spatial(stride: usize, pad: usize) -> Self {
        Self::new([1, stride, stride], [0, pad, pad])
    }
}

/// `floor((n + 2p − k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    n: usize,
    c: usize,
    s: usize,
    h: usize,
    w: usize,
    k: [usize; 3],
    o: [usize; 3],
    st: [usize; 3],
    pd: [usize; 3],
}

impl Dims {
    fn new(op: &'static str, input: [usize; 5], k: [usize; 3], g: ConvGeom) -> Result<Self> {
        let [n, c, s, h, w] = input;
        let mut o = [0; 3];
        for (axis, extent) in [s, h, w].into_iter().enumerate() {
            o[axis] = conv_output_len(extent, k[axis], g.stride[axis], g.pad[axis]).ok_or_else(|| {
                Error::shape(
                    op,
                    format!(
                        "kernel {k:?} with stride {:?} and padding {:?} does not fit input extents {:?}",
                        g.stride,
                        g.pad,
                        [s, h, w]
                    ),
                )
            })?;
        }
        Ok(Dims {
            n,
            c,
            s,
            h,
            w,
            k,
            o,
            st: g.stride,
            pd: g.pad,
        })
    }

    fn in_len(&self) -> usize {
        self.c * self.s * self.h * self.w
    }

    fn plane(&self) -> usize {
        self.o[1] * self.o[2]
    }

    fn rows(&self) -> usize {
        self.c * self.k[0] * self.k[1] * self.k[2]
    }

    fn pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.st == [1, 1, 1] && self.pd == [0, 0, 0]
    }
}

/// Output positions `o` in `0..out_len` whose source `o·stride + off − pad` lies in `0..in_len`.
fn valid_range(out_len: usize, stride: usize, off: usize, pad: usize, in_len: usize) -> (usize, usize) {
    let lo = if off >= pad {
        0
    } else {
        (pad - off).div_ceil(stride)
    };
    let hi = if in_len + pad > off {
        ((in_len - 1 + pad - off) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[inline(always)]
fn source(o: usize, stride: usize, off: usize, pad: usize) -> usize {
    o * stride + off - pad
}

/// Lower output time slice `to` of one sample into `col[rows, plane]`.
fn fill_col<T: Scalar>(x: &[T], d: &Dims, to: usize, col: &mut [T]) {
    let p = d.plane();
    let (ho_n, wo_n) = (d.o[1], d.o[2]);
    for c in 0..d.c {
        for dt in 0..d.k[0] {
            let ti = (to * d.st[0] + dt) as isize - d.pd[0] as isize;
            for dh in 0..d.k[1] {
                let (hlo, hhi) = valid_range(ho_n, d.st[1], dh, d.pd[1], d.h);
                for dw in 0..d.k[2] {
                    let row = ((c * d.k[0] + dt) * d.k[1] + dh) * d.k[2] + dw;
                    let dst = &mut col[row * p..(row + 1) * p];
                    if ti < 0 || ti as usize >= d.s {
                        dst.fill(T::zero());
                        continue;
                    }
                    let plane = &x[(c * d.s + ti as usize) * d.h * d.w..][..d.h * d.w];
                    let (wlo, whi) = valid_range(wo_n, d.st[2], dw, d.pd[2], d.w);
                    dst[..hlo * wo_n].fill(T::zero());
                    dst[hhi * wo_n..].fill(T::zero());
                    for ho in hlo..hhi {
                        let seg = &mut dst[ho * wo_n..(ho + 1) * wo_n];
                        let src = &plane[source(ho, d.st[1], dh, d.pd[1]) * d.w..][..d.w];
                        seg[..wlo].fill(T::zero());
                        seg[whi..].fill(T::zero());
                        if d.st[2] == 1 {
                            let base = source(wlo, 1, dw, d.pd[2]);
                            seg[wlo..whi].copy_from_slice(&src[base..base + (whi - wlo)]);
                        } else {
                            let base = source(wlo, d.st[2], dw, d.pd[2]);
                            for (v, &x) in seg[wlo..whi].iter_mut().zip(src[base..].iter().step_by(d.st[2])) {
                                *v = x;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `col[rows, plane]` back onto one sample's input gradient.
fn add_col<T: Scalar>(col: &[T], d: &Dims, to: usize, dx: &mut [T]) {
    let p = d.plane();
    let (ho_n, wo_n) = (d.o[1], d.o[2]);
    for c in 0..d.c {
        for dt in 0..d.k[0] {
            let ti = (to * d.st[0] + dt) as isize - d.pd[0] as isize;
            if ti < 0 || ti as usize >= d.s {
                continue;
            }
            let plane = &mut dx[(c * d.s + ti as usize) * d.h * d.w..][..d.h * d.w];
            for dh in 0..d.k[1] {
                let (hlo, hhi) = valid_range(ho_n, d.st[1], dh, d.pd[1], d.h);
                for dw in 0..d.k[2] {
                    let row = ((c * d.k[0] + dt) * d.k[1] + dh) * d.k[2] + dw;
                    let src = &col[row * p..(row + 1) * p];
                    let (wlo, whi) = valid_range(wo_n, d.st[2], dw, d.pd[2], d.w);
                    for ho in hlo..hhi {
                        let seg = &src[ho * wo_n..(ho + 1) * wo_n];
                        let dst = &mut plane[source(ho, d.st[1], dh, d.pd[1]) * d.w..][..d.w];
                        let base = source(wlo, d.st[2], dw, d.pd[2]);
                        for (x, &v) in dst[base..].iter_mut().step_by(d.st[2]).zip(&seg[wlo..whi]) {
                            *x += v;
                        }
                    }
                }
            }
        }
    }
}

/// Above this many cached elements per sample the per-slice lowering is used instead.
const FRAME_CACHE_LIMIT: usize = 1 << 26;

/// Spatial columns of every input frame of one sample. A temporal kernel of
/// length `kt` reads each frame from `kt` output slices, so lowering frames once
/// turns the strided gathers of all but the first visit into block copies.
struct FrameCols<T> {
    frame: Dims,
    block: usize,
    data: Vec<T>,
}

impl<T: Scalar> FrameCols<T> {
    fn new(d: &Dims) -> Option<Self> {
        let block = d.k[1] * d.k[2] * d.plane();
        if d.k[0] == 1 || d.c * d.s * block > FRAME_CACHE_LIMIT {
            return None;
        }
        let frame = Dims {
            n: 1,
            c: 1,
            s: 1,
            k: [1, d.k[1], d.k[2]],
            o: [1, d.o[1], d.o[2]],
            st: [1, d.st[1], d.st[2]],
            pd: [0, d.pd[1], d.pd[2]],
            ..*d
        };
        Some(FrameCols {
            frame,
            block,
            data: vec![T::zero(); d.c * d.s * block],
        })
    }

    fn load(&mut self, xn: &[T]) {
        let hw = self.frame.h * self.frame.w;
        for (f, dst) in self.data.chunks_exact_mut(self.block).enumerate() {
            fill_col(&xn[f * hw..(f + 1) * hw], &self.frame, 0, dst);
        }
    }

    /// Frame feeding kernel tap `dt` of output slice `to`, if inside the clip.
    fn frame_of(d: &Dims, to: usize, dt: usize) -> Option<usize> {
        let ti = (to * d.st[0] + dt).checked_sub(d.pd[0])?;
        (ti < d.s).then_some(ti)
    }

    fn fill(&self, d: &Dims, to: usize, col: &mut [T]) {
        for c in 0..d.c {
            for dt in 0..d.k[0] {
                let dst = &mut col[(c * d.k[0] + dt) * self.block..][..self.block];
                match Self::frame_of(d, to, dt) {
                    Some(ti) => dst.copy_from_slice(&self.data[(c * d.s + ti) * self.block..][..self.block]),
                    None => dst.fill(T::zero()),
                }
            }
        }
    }

    /// Accumulate a slice's column gradient onto the per-frame buffers.
    fn gather(&mut self, d: &Dims, to: usize, dcol: &[T]) {
        for c in 0..d.c {
            for dt in 0..d.k[0] {
                if let Some(ti) = Self::frame_of(d, to, dt) {
                    let src = &dcol[(c * d.k[0] + dt) * self.block..][..self.block];
                    let dst = &mut self.data[(c * d.s + ti) * self.block..][..self.block];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
        }
    }

    fn scatter(&mut self, dx: &mut [T]) {
        let hw = self.frame.h * self.frame.w;
        for (f, src) in self.data.chunks_exact_mut(self.block).enumerate() {
            add_col(src, &self.frame, 0, &mut dx[f * hw..(f + 1) * hw]);
            src.fill(T::zero());
        }
    }
}

fn conv_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, d: &Dims, co: usize) -> Vec<T> {
    let p = d.plane();
    let out_sample = co * d.o[0] * p;
    let mut out = vec![T::zero(); d.n * out_sample];
    let rows = d.rows();
    let mut col = if d.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * p]
    };
    let mut frames = FrameCols::new(d);
    for n in 0..d.n {
        let xn = &x[n * d.in_len()..(n + 1) * d.in_len()];
        let on = &mut out[n * out_sample..(n + 1) * out_sample];
        if d.pointwise() {
            let shw = d.s * d.h * d.w;
            gemm(
                MatRef::new(w, co, d.c),
                MatRef::new(xn, d.c, shw),
                T::zero(),
                MatMut::new(on, co, shw),
            );
        } else {
            if let Some(fc) = frames.as_mut() {
                fc.load(xn);
            }
            for to in 0..d.o[0] {
                match &frames {
                    Some(fc) => fc.fill(d, to, &mut col),
                    None => fill_col(xn, d, to, &mut col),
                }
                gemm(
                    MatRef::new(w, co, rows),
                    MatRef::new(&col, rows, p),
                    T::zero(),
                    MatMut::strided(&mut on[to * p..], co, p, d.o[0] * p),
                );
            }
        }
        if let Some(b) = bias {
            let per = d.o[0] * p;
            for (oc, &bv) in b.iter().enumerate() {
                for v in on[oc * per..(oc + 1) * per].iter_mut() {
                    *v += bv;
                }
            }
        }
    }
    out
}

struct ConvOp {
    x: Var,
    w: Var,
    b: Option<Var>,
    d: Dims,
    co: usize,
}

impl<T: Scalar> Backward<T> for ConvOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let d = &self.d;
        let co = self.co;
        let p = d.plane();
        let per = d.o[0] * p;
        let out_sample = co * per;
        let rows = d.rows();
        let xv = sink.value(self.x).data();
        let wv = sink.value(self.w).data();

        if let Some(b) = self.b {
            if sink.wants(b) {
                let db = sink.buf(b);
                for n in 0..d.n {
                    for (oc, acc) in db.iter_mut().enumerate() {
                        let start = n * out_sample + oc * per;
                        *acc += g[start..start + per].iter().copied().sum::<T>();
                    }
                }
            }
        }

        let want_w = sink.wants(self.w);
        let want_x = sink.wants(self.x);
        let mut dw = if want_w {
            vec![T::zero(); co * rows]
        } else {
            Vec::new()
        };
        let mut col = vec![T::zero(); if d.pointwise() { 0 } else { rows * p }];
        let mut dcol = col.clone();
        let mut x_frames = if want_w { FrameCols::new(d) } else { None };
        let mut dx_frames = if want_x { FrameCols::new(d) } else { None };
        for n in 0..d.n {
            let xn = &xv[n * d.in_len()..(n + 1) * d.in_len()];
            let gn = &g[n * out_sample..(n + 1) * out_sample];
            if d.pointwise() {
                let shw = d.s * d.h * d.w;
                if want_w {
                    gemm(
                        MatRef::new(gn, co, shw),
                        MatRef::t(xn, d.c, shw),
                        T::one(),
                        MatMut::new(&mut dw, co, d.c),
                    );
                }
                if want_x {
                    let dx = &mut sink.buf(self.x)[n * d.in_len()..(n + 1) * d.in_len()];
                    gemm(
                        MatRef::t(wv, co, d.c),
                        MatRef::new(gn, co, shw),
                        T::one(),
                        MatMut::new(dx, d.c, shw),
                    );
                }
                continue;
            }
            if let Some(fc) = x_frames.as_mut() {
                fc.load(xn);
            }
            for to in 0..d.o[0] {
                let gslice = MatRef::strided(&gn[to * p..], co, p, per);
                if want_w {
                    match &x_frames {
                        Some(fc) => fc.fill(d, to, &mut col),
                        None => fill_col(xn, d, to, &mut col),
                    }
                    gemm(
                        gslice,
                        MatRef::t(&col, rows, p),
                        T::one(),
                        MatMut::new(&mut dw, co, rows),
                    );
                }
                if want_x {
                    gemm(
                        MatRef::t(wv, co, rows),
                        gslice,
                        T::zero(),
                        MatMut::new(&mut dcol, rows, p),
                    );
                    match dx_frames.as_mut() {
                        Some(fc) => fc.gather(d, to, &dcol),
                        None => {
                            let dx = &mut sink.buf(self.x)[n * d.in_len()..(n + 1) * d.in_len()];
                            add_col(&dcol, d, to, dx);
                        }
                    }
                }
            }
            if let Some(fc) = dx_frames.as_mut() {
                fc.scatter(&mut sink.buf(self.x)[n * d.in_len()..(n + 1) * d.in_len()]);
            }
        }
        if want_w {
            sink.add(self.w, &dw);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    Max,
    Avg,
}

struct PoolOp {
    x: Var,
    d: Dims,
    kind: PoolKind,
    /// Flat input index feeding each max output; `usize::MAX` marks a padded winner.
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for PoolOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if !sink.wants(self.x) {
            return;
        }
        let d = self.d;
        let dx = sink.buf(self.x);
        match self.kind {
            PoolKind::Max => {
                for (&idx, &gi) in self.argmax.iter().zip(g) {
                    if idx != usize::MAX {
                        dx[idx] += gi;
                    }
                }
            }
            PoolKind::Avg => {
                let inv = T::one() / T::of((d.k[0] * d.k[1] * d.k[2]) as f64);
                let mut o = 0;
                for nc in 0..d.n * d.c {
                    let base = nc * d.s * d.h * d.w;
                    for to in 0..d.o[0] {
                        for ho in 0..d.o[1] {
                            for wo in 0..d.o[2] {
                                let gi = g[o] * inv;
                                o += 1;
                                for_window(&d, to, ho, wo, |idx| {
                                    if let Some(i) = idx {
                                        dx[base + i] += gi;
                                    }
                                });
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Visit the window feeding output `(to, ho, wo)`; `None` marks zero padding.
fn for_window(d: &Dims, to: usize, ho: usize, wo: usize, mut f: impl FnMut(Option<usize>)) {
    for dt in 0..d.k[0] {
        let t = (to * d.st[0] + dt) as isize - d.pd[0] as isize;
        for dh in 0..d.k[1] {
            let h = (ho * d.st[1] + dh) as isize - d.pd[1] as isize;
            for dw in 0..d.k[2] {
                let w = (wo * d.st[2] + dw) as isize - d.pd[2] as isize;
                let inside = t >= 0
                    && (t as usize) < d.s
                    && h >= 0
                    && (h as usize) < d.h
                    && w >= 0
                    && (w as usize) < d.w;
                f(inside.then(|| ((t as usize) * d.h + h as usize) * d.w + w as usize));
            }
        }
    }
}

struct GlobalAvgOp {
    x: Var,
    spatial: usize,
}

impl<T: Scalar> Backward<T> for GlobalAvgOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if sink.wants(self.x) {
            let inv = T::one() / T::of(self.spatial as f64);
            let dx = sink.buf(self.x);
            for (chunk, &gi) in dx.chunks_exact_mut(self.spatial).zip(g) {
                for v in chunk {
                    *v += gi * inv;
                }
            }
        }
    }
}

/// Interpret a rank-4 or rank-5 shape as `[N,C,S,H,W]`.
fn volume(op: &'static str, shape: &[usize]) -> Result<([usize; 5], bool)> {
    match *shape {
        [n, c, h, w] => Ok(([n, c, 1, h, w], true)),
        [n, c, s, h, w] => Ok(([n, c, s, h, w], false)),
        _ => Err(Error::shape(op, format!("expected rank 4 or 5 input, got {shape:?}"))),
    }
}

impl<T: Scalar> Tape<T> {
    /// 3D convolution: `x[N,C,S,H,W] ⊛ w[C',C,kt,kh,kw] + b[C']`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (input, flat) = volume("conv3d", self.shape(x))?;
        if flat {
            return Err(Error::shape(
                "conv3d",
                format!("expected [N,C,S,H,W], got {:?}", self.shape(x)),
            ));
        }
        let ws = self.shape(w).to_vec();
        if ws.len() != 5 {
            return Err(Error::shape("conv3d", format!("weight must be rank 5, got {ws:?}")));
        }
        self.conv_impl("conv3d", x, w, b, input, &ws, geom, false)
    }

    /// 2D convolution: `x[N,C,H,W] ⊛ w[C',C,kh,kw] + b[C']` with symmetric stride and padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, wd] = shape[..] else {
            return Err(Error::shape("conv2d", format!("expected [N,C,H,W], got {shape:?}")));
        };
        let ws = self.shape(w).to_vec();
        let [o, i, kh, kw] = ws[..] else {
            return Err(Error::shape("conv2d", format!("weight must be rank 4, got {ws:?}")));
        };
        self.conv_impl(
            "conv2d",
            x,
            w,
            b,
            [n, c, 1, h, wd],
            &[o, i, 1, kh, kw],
            ConvGeom::spatial(stride, pad),
            true,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_impl(
        &mut self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        input: [usize; 5],
        ws: &[usize],
        geom: ConvGeom,
        flat: bool,
    ) -> Result<Var> {
        let (co, ci) = (ws[0], ws[1]);
        if ci != input[1] {
            return Err(Error::shape(
                op,
                format!("weight expects {ci} input channels, input has {}", input[1]),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(Error::shape(
                    op,
                    format!("bias {:?}, expected [{co}]", self.shape(b)),
                ));
            }
        }
        let d = Dims::new(op, input, [ws[2], ws[3], ws[4]], geom)?;
        let data = conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
            co,
        );
        let shape = if flat {
            vec![d.n, co, d.o[1], d.o[2]]
        } else {
            vec![d.n, co, d.o[0], d.o[1], d.o[2]]
        };
        let out = Tensor::from_vec(&shape, data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, &inputs, ConvOp { x, w, b, d, co }))
    }

    /// Max or average pooling over (time, height, width) of `[N,C,S,H,W]`, or over
    /// (height, width) of `[N,C,H,W]` when `window[0] == 1`. Padding is zero fill.
    pub fn pool(&mut self, x: Var, kind: PoolKind, window: [usize; 3], geom: ConvGeom) -> Result<Var> {
        let (input, flat) = volume("pool", self.shape(x))?;
        if flat && (window[0] != 1 || geom.stride[0] != 1 || geom.pad[0] != 0) {
            return Err(Error::shape("pool", "temporal window on a rank-4 input"));
        }
        let d = Dims::new("pool", input, window, geom)?;
        let xv = self.value(x).data();
        let total = d.n * d.c * d.o[0] * d.o[1] * d.o[2];
        let mut data = Vec::with_capacity(total);
        let mut argmax = Vec::new();
        if kind == PoolKind::Max {
            argmax.reserve(total);
        }
        let inv = T::one() / T::of((window[0] * window[1] * window[2]) as f64);
        for nc in 0..d.n * d.c {
            let base = nc * d.s * d.h * d.w;
            for to in 0..d.o[0] {
                for ho in 0..d.o[1] {
                    for wo in 0..d.o[2] {
                        match kind {
                            PoolKind::Max => {
                                let mut best = T::neg_infinity();
                                let mut arg = usize::MAX;
                                for_window(&d, to, ho, wo, |idx| {
                                    let v = idx.map_or(T::zero(), |i| xv[base + i]);
                                    if v > best {
                                        best = v;
                                        arg = idx.map_or(usize::MAX, |i| base + i);
                                    }
                                });
                                data.push(best);
                                argmax.push(arg);
                            }
                            PoolKind::Avg => {
                                let mut acc = T::zero();
                                for_window(&d, to, ho, wo, |idx| {
                                    if let Some(i) = idx {
                                        acc += xv[base + i];
                                    }
                                });
                                data.push(acc * inv);
                            }
                        }
                    }
                }
            }
        }
        let shape = if flat {
            vec![d.n, d.c, d.o[1], d.o[2]]
        } else {
            vec![d.n, d.c, d.o[0], d.o[1], d.o[2]]
        };
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(out, &[x], PoolOp { x, d, kind, argmax }))
    }

    /// Square spatial pooling on `[N,C,H,W]`.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize, pad: usize) -> Result<Var> {
        self.pool(x, kind, [1, window, window], ConvGeom::spatial(stride, pad))
    }

    /// Mean over every axis after the channel axis: `[N,C,...] → [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("expected [N,C,...], got {shape:?}"),
            ));
        }
        let spatial: usize = shape[2..].iter().product();
        let inv = T::one() / T::of(spatial as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(spatial)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(&shape[..2], data)?;
        Ok(self.push(out, &[x], GlobalAvgOp { x, spatial }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_respects_padding() {
        // in_len 5, kernel offset 0, pad 1, stride 1, 5 outputs: o=0 reads -1.
        assert_eq!(valid_range(5, 1, 0, 1, 5), (1, 5));
        // offset 2 with pad 1 reads o+1, last valid o = 3.
        assert_eq!(valid_range(5, 1, 2, 1, 5), (0, 4));
        // stride 2: o·2 + 0 − 1 ∈ [0,5) → o ∈ {1, 2}.
        assert_eq!(valid_range(3, 2, 0, 1, 5), (1, 3));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]), false);
        let w = tape.leaf(Tensor::zeros(&[1, 1, 5, 5]), false);
        let err = tape.conv2d(x, w, None, 1, 0).unwrap_err();
        assert!(err.to_string().contains("does not fit"), "{err}");
        assert!(tape.conv2d(x, w, None, 1, 1).is_ok());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 3, 3]), false);
        let w = tape.leaf(Tensor::zeros(&[1, 3, 1, 1]), false);
        assert!(tape.conv2d(x, w, None, 1, 0).is_err());
    }

    #[test]
    fn pool_window_larger_than_input_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]), false);
        assert!(tape.pool2d(x, PoolKind::Max, 3, 1, 0).is_err());
    }
}

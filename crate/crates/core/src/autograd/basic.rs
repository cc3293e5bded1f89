//! Elementwise, linear-algebra and layout operations.

use super::{Backward, GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef, Scalar, Tensor};

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}

struct AddOp {
    a: Var,
    b: Var,
}

impl<T: Scalar> Backward<T> for AddOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        sink.add(self.a, g);
        sink.add(self.b, g);
    }
}

struct MulOp {
    a: Var,
    b: Var,
}

impl<T: Scalar> Backward<T> for MulOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (av, bv) = (sink.value(self.a), sink.value(self.b));
        if sink.wants(self.a) {
            for ((d, &gi), &bi) in sink.buf(self.a).iter_mut().zip(g).zip(bv.data()) {
                *d += gi * bi;
            }
        }
        if sink.wants(self.b) {
            for ((d, &gi), &ai) in sink.buf(self.b).iter_mut().zip(g).zip(av.data()) {
                *d += gi * ai;
            }
        }
    }
}

struct ScaleOp<T> {
    x: Var,
    s: T,
}

impl<T: Scalar> Backward<T> for ScaleOp<T> {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if sink.wants(self.x) {
            for (d, &gi) in sink.buf(self.x).iter_mut().zip(g) {
                *d += gi * self.s;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

struct ActOp {
    x: Var,
    kind: Activation,
}

impl<T: Scalar> Backward<T> for ActOp {
    fn backward(&self, out: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if !sink.wants(self.x) {
            return;
        }
        let one = T::one();
        let d = sink.buf(self.x);
        let y = out.data();
        match self.kind {
            Activation::Relu => {
                for i in 0..d.len() {
                    if y[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
            Activation::Sigmoid => {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i] * (one - y[i]);
                }
            }
            Activation::Tanh => {
                for i in 0..d.len() {
                    d[i] += g[i] * (one - y[i] * y[i]);
                }
            }
        }
    }
}

struct MatMulOp {
    a: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Scalar> Backward<T> for MatMulOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (m, k, n) = (self.m, self.k, self.n);
        let (av, bv) = (sink.value(self.a), sink.value(self.b));
        if sink.wants(self.a) {
            // dA = G · Bᵀ
            let da = sink.buf(self.a);
            gemm(
                MatRef::new(g, m, n),
                MatRef::t(bv.data(), k, n),
                T::one(),
                MatMut::new(da, m, k),
            );
        }
        if sink.wants(self.b) {
            // dB = Aᵀ · G
            let db = sink.buf(self.b);
            gemm(
                MatRef::t(av.data(), m, k),
                MatRef::new(g, m, n),
                T::one(),
                MatMut::new(db, k, n),
            );
        }
    }
}

struct LinearOp {
    x: Var,
    w: Var,
    b: Option<Var>,
    n: usize,
    din: usize,
    dout: usize,
}

impl<T: Scalar> Backward<T> for LinearOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (n, din, dout) = (self.n, self.din, self.dout);
        let (xv, wv) = (sink.value(self.x), sink.value(self.w));
        if sink.wants(self.x) {
            // dX[n,in] = G[n,out] · W[out,in]
            let dx = sink.buf(self.x);
            gemm(
                MatRef::new(g, n, dout),
                MatRef::new(wv.data(), dout, din),
                T::one(),
                MatMut::new(dx, n, din),
            );
        }
        if sink.wants(self.w) {
            // dW[out,in] = Gᵀ · X
            let dw = sink.buf(self.w);
            gemm(
                MatRef::t(g, n, dout),
                MatRef::new(xv.data(), n, din),
                T::one(),
                MatMut::new(dw, dout, din),
            );
        }
        if let Some(b) = self.b {
            if sink.wants(b) {
                let db = sink.buf(b);
                for row in g.chunks_exact(dout) {
                    for (d, &gi) in db.iter_mut().zip(row) {
                        *d += gi;
                    }
                }
            }
        }
    }
}

struct RowBiasOp {
    x: Var,
    b: Var,
    cols: usize,
}

impl<T: Scalar> Backward<T> for RowBiasOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        sink.add(self.x, g);
        if sink.wants(self.b) {
            let db = sink.buf(self.b);
            for row in g.chunks_exact(self.cols) {
                for (d, &gi) in db.iter_mut().zip(row) {
                    *d += gi;
                }
            }
        }
    }
}

struct ReshapeOp {
    x: Var,
}

impl<T: Scalar> Backward<T> for ReshapeOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        sink.add(self.x, g);
    }
}

struct SwapOp {
    x: Var,
}

impl<T: Scalar> Backward<T> for SwapOp {
    fn backward(&self, out: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if sink.wants(self.x) {
            let gt = Tensor::from_vec(out.shape(), g.to_vec())
                .and_then(|t| t.swap_axes_12())
                .expect("swap shape");
            sink.add(self.x, gt.data());
        }
    }
}

/// Extents of `shape` split around `axis`: (outer, axis, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct ConcatOp {
    parts: Vec<Var>,
    axis: usize,
}

impl<T: Scalar> Backward<T> for ConcatOp {
    fn backward(&self, out: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (outer, total, inner) = split_axis(out.shape(), self.axis);
        let mut offset = 0;
        for &p in &self.parts {
            let len = sink.value(p).shape()[self.axis];
            if sink.wants(p) {
                let d = sink.buf(p);
                for o in 0..outer {
                    let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                    let dst = &mut d[o * len * inner..(o + 1) * len * inner];
                    for (a, &b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
            offset += len;
        }
    }
}

struct NarrowOp {
    x: Var,
    axis: usize,
    start: usize,
}

impl<T: Scalar> Backward<T> for NarrowOp {
    fn backward(&self, out: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if !sink.wants(self.x) {
            return;
        }
        let (outer, total, inner) = split_axis(sink.value(self.x).shape(), self.axis);
        let len = out.shape()[self.axis];
        let d = sink.buf(self.x);
        for o in 0..outer {
            let dst = &mut d[(o * total + self.start) * inner..(o * total + self.start + len) * inner];
            for (a, &b) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                *a += b;
            }
        }
    }
}

struct MeanOp {
    x: Var,
}

impl<T: Scalar> Backward<T> for MeanOp {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if sink.wants(self.x) {
            let d = sink.buf(self.x);
            let s = g[0] / T::of(d.len() as f64);
            for v in d.iter_mut() {
                *v += s;
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(out, &[a, b], AddOp { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(out, &[a, b], MulOp { a, b }))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, &[x], ScaleOp { x, s })
    }

    fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let one = T::one();
        let out = self.value(x).map(|v| match kind {
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => one / (one + (-v).exp()),
            Activation::Tanh => v.tanh(),
        });
        self.push(out, &[x], ActOp { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            T::zero(),
            MatMut::new(&mut data, m, n),
        );
        let out = Tensor::from_vec(&[m, n], data)?;
        Ok(self.push(out, &[a, b], MatMulOp { a, b, m, k, n }))
    }

    /// Fully-connected layer: `x[N,in] · w[out,in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape(
                "linear",
                format!("input {sx:?} against weight {sw:?}"),
            ));
        }
        let (n, din, dout) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?}, expected [{dout}]", self.shape(b)),
                ));
            }
        }
        let mut data = vec![T::zero(); n * dout];
        if let Some(b) = b {
            for row in data.chunks_exact_mut(dout) {
                row.copy_from_slice(self.value(b).data());
            }
        }
        gemm(
            MatRef::new(self.value(x).data(), n, din),
            MatRef::t(self.value(w).data(), dout, din),
            T::one(),
            MatMut::new(&mut data, n, dout),
        );
        let out = Tensor::from_vec(&[n, dout], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            &inputs,
            LinearOp {
                x,
                w,
                b,
                n,
                din,
                dout,
            },
        ))
    }

    /// Add `b[M]` to every row of `x[N,M]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x);
        let cols = *sx.last().unwrap_or(&0);
        if self.shape(b) != [cols] {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for rows of {sx:?}", self.shape(b)),
            ));
        }
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (v, &bi) in row.iter_mut().zip(&bv) {
                *v += bi;
            }
        }
        Ok(self.push(out, &[x, b], RowBiasOp { x, b, cols }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, &[x], ReshapeOp { x }))
    }

    /// Swap axes 1 and 2, e.g. `[N,S,C,H,W] → [N,C,S,H,W]`.
    pub fn swap_axes_12(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).swap_axes_12()?;
        Ok(self.push(out, &[x], SwapOp { x }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                data.extend_from_slice(&self.value(p).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(
            out,
            parts,
            ConcatOp {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Sub-range `start..start+len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(out, &[x], NarrowOp { x, axis, start }))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        self.push(out, &[x], MeanOp { x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn linear_forward_and_bias_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]), true);
        let w = tape.leaf(t(&[1, 3], &[1., 0., -1.]), true);
        let b = tape.leaf(t(&[1], &[0.5]), true);
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.5, -1.5]);
        let loss = tape.mean_all(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap(), &[1.0]);
        assert_eq!(g.get(w).unwrap(), &[2.5, 3.5, 4.5]);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 1, 2], &[1., 2., 3., 4.]), false);
        let b = tape.leaf(t(&[2, 2, 2], &[5., 6., 7., 8., 9., 10., 11., 12.]), false);
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2]);
        assert_eq!(
            tape.value(c).data(),
            &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]
        );
        let back = tape.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(b));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[3, 2]), false);
        assert!(tape.add(a, b).is_err());
        let w = tape.leaf(Tensor::zeros(&[4, 2]), false);
        assert!(tape.linear(a, w, None).is_err());
    }
}

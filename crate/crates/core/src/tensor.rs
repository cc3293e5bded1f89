//! Dense row-major tensors and the scalar trait that backs them.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

/// Floating point element type usable in tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    /// `C ← alpha·A·B + beta·C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// Pointers must be valid for the extents and strides given.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided matrix view used by [`gemm`].
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Dense row-major `rows × cols`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Rows `rs` elements apart, columns contiguous.
    pub fn strided(data: &'a [T], rows: usize, cols: usize, rs: usize) -> Self {
        MatRef { data, rows, cols, rs, cs: 1 }
    }

    /// Transpose of the dense row-major `rows × cols` matrix in `data`.
    pub fn t(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows: cols, cols: rows, rs: 1, cs: cols }
    }

    /// Transpose of a `rows × cols` matrix whose rows are `rs` apart.
    pub fn t_strided(data: &'a [T], rows: usize, cols: usize, rs: usize) -> Self {
        MatRef { data, rows: cols, cols: rows, rs: 1, cs: rs }
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < len
    }
}

/// Mutable strided destination for [`gemm`]; columns are contiguous.
#[derive(Debug)]
pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        MatMut { data, rows, cols, rs: cols }
    }

    pub fn strided(data: &'a mut [T], rows: usize, cols: usize, rs: usize) -> Self {
        MatMut { data, rows, cols, rs }
    }
}

/// `out ← a·b + beta·out`.
pub fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (out.rows, out.cols), "gemm output extents");
    assert!(a.fits(a.data.len()) && b.fits(b.data.len()), "gemm operand bounds");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * out.rs + n <= out.data.len(), "gemm output bounds");
    if k == 0 {
        for r in 0..m {
            for v in out.data[r * out.rs..r * out.rs + n].iter_mut() {
                *v *= beta;
            }
        }
        return;
    }
    if m < SMALL_M && gemm_small(&a, &b, beta, &mut *out.data, out.rs) {
        return;
    }
    // SAFETY: every operand's extents and strides were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.data.as_mut_ptr(),
            out.rs as isize,
            1,
        );
    }
}

/// Below this many output rows the packed kernel wastes most of its lanes and
/// the packing pass costs as much as the arithmetic.
const SMALL_M: usize = 8;

/// Row-at-a-time product for short `a`. Returns false when neither operand
/// layout suits it.
fn gemm_small<T: Scalar>(a: &MatRef<'_, T>, b: &MatRef<'_, T>, beta: T, out: &mut [T], rs: usize) -> bool {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if b.cs == 1 {
        for r in 0..m {
            let row = &mut out[r * rs..r * rs + n];
            if beta == T::zero() {
                row.fill(T::zero());
            } else if beta != T::one() {
                row.iter_mut().for_each(|v| *v *= beta);
            }
            for j in 0..k {
                let s = a.data[r * a.rs + j * a.cs];
                if s == T::zero() {
                    continue;
                }
                let src = &b.data[j * b.rs..j * b.rs + n];
                for (o, &x) in row.iter_mut().zip(src) {
                    *o += s * x;
                }
            }
        }
        true
    } else if b.rs == 1 && a.cs == 1 {
        for r in 0..m {
            let ar = &a.data[r * a.rs..r * a.rs + k];
            for c in 0..n {
                let bc = &b.data[c * b.cs..c * b.cs + k];
                let mut acc = [T::zero(); 8];
                let mut ca = ar.chunks_exact(8);
                let mut cb = bc.chunks_exact(8);
                for (x, y) in (&mut ca).zip(&mut cb) {
                    for l in 0..8 {
                        acc[l] += x[l] * y[l];
                    }
                }
                let mut sum = acc.iter().copied().fold(T::zero(), |s, v| s + v);
                for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
                    sum += x * y;
                }
                let o = &mut out[r * rs + c];
                *o = if beta == T::zero() { sum } else { beta * *o + sum };
            }
        }
        true
    } else {
        false
    }
}

/// Dense n-dimensional array stored contiguously in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} holds {expected} elements, buffer has {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(lo..hi))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// Same buffer under a new shape with an equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Convert element type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Contiguous sub-block along axis 0.
    pub fn slice_outer(&self, start: usize, len: usize) -> Result<Self> {
        let outer = *self.shape.first().ok_or_else(|| {
            Error::shape("slice_outer", "rank-0 tensor has no outer axis")
        })?;
        if start + len > outer {
            return Err(Error::shape(
                "slice_outer",
                format!("range {start}..{} exceeds extent {outer}", start + len),
            ));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Tensor {
            shape,
            data: self.data[start * inner..(start + len) * inner].to_vec(),
        })
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Concatenate along axis 0; trailing extents must agree.
    pub fn concat_outer(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        if first.rank() == 0 {
            return Err(Error::shape("concat_outer", "rank-0 tensor has no outer axis"));
        }
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut outer = 0;
        for t in items {
            if t.rank() != first.rank() || t.shape[1..] != first.shape[1..] {
                return Err(Error::shape(
                    "concat_outer",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            outer += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = outer;
        Ok(Tensor { shape, data })
    }

    /// Swap axes 1 and 2 of a rank ≥ 3 tensor.
    pub fn swap_axes_12(&self) -> Result<Self> {
        if self.rank() < 3 {
            return Err(Error::shape(
                "swap_axes_12",
                format!("need rank >= 3, got {:?}", self.shape),
            ));
        }
        let (a0, a1, a2) = (self.shape[0], self.shape[1], self.shape[2]);
        let inner: usize = self.shape[3..].iter().product();
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..a0 {
            for k in 0..a2 {
                for j in 0..a1 {
                    let off = ((i * a1 + j) * a2 + k) * inner;
                    data.extend_from_slice(&self.data[off..off + inner]);
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(1, 2);
        Ok(Tensor { shape, data })
    }
}

/// He-uniform initialisation bound for a layer with the given fan-in.
pub fn he_uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

//! Batch normalisation over the channel axis of `[N,C,...]`.

use super::{Backward, GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel statistics of the batch seen by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Elements reduced per channel.
    pub count: usize,
}

struct BatchNormOp<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    channels: usize,
    spatial: usize,
    /// Training mode couples every element of a channel through the batch statistics.
    batch_stats: bool,
}

impl<T: Scalar> Backward<T> for BatchNormOp<T> {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let (c_n, sp) = (self.channels, self.spatial);
        let n = g.len() / (c_n * sp);
        let mut sum_g = vec![T::zero(); c_n];
        let mut sum_gx = vec![T::zero(); c_n];
        for b in 0..n {
            for c in 0..c_n {
                let off = (b * c_n + c) * sp;
                for i in off..off + sp {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * self.xhat[i];
                }
            }
        }
        let gamma = sink.value(self.gamma).data();
        if sink.wants(self.x) {
            let m = T::of((n * sp) as f64);
            let dx = sink.buf(self.x);
            for b in 0..n {
                for c in 0..c_n {
                    let off = (b * c_n + c) * sp;
                    let k = gamma[c] * self.inv_std[c];
                    if self.batch_stats {
                        let (mg, mgx) = (sum_g[c] / m, sum_gx[c] / m);
                        for i in off..off + sp {
                            dx[i] += k * (g[i] - mg - self.xhat[i] * mgx);
                        }
                    } else {
                        for i in off..off + sp {
                            dx[i] += k * g[i];
                        }
                    }
                }
            }
        }
        sink.add(self.gamma, &sum_gx);
        sink.add(self.beta, &sum_g);
    }
}

impl<T: Scalar> Tape<T> {
    fn bn_shape(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let shape = self.shape(x);
        if shape.len() < 2 {
            return Err(Error::shape("batchnorm", format!("expected [N,C,...], got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::shape(
                    "batchnorm",
                    format!("per-channel parameter {:?} for {c} channels", self.shape(p)),
                ));
            }
        }
        Ok((n, c, spatial))
    }

    /// Normalise with the batch's own statistics; also returns those statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let (n, c_n, sp) = self.bn_shape(x, gamma, beta)?;
        let count = n * sp;
        if count == 0 {
            return Err(Error::shape("batchnorm", "empty batch"));
        }
        let xv = self.value(x).data();
        let m = T::of(count as f64);
        let mut mean = vec![T::zero(); c_n];
        let mut var = vec![T::zero(); c_n];
        for b in 0..n {
            for c in 0..c_n {
                let off = (b * c_n + c) * sp;
                mean[c] += xv[off..off + sp].iter().copied().sum::<T>();
            }
        }
        for v in mean.iter_mut() {
            *v = *v / m;
        }
        for b in 0..n {
            for c in 0..c_n {
                let off = (b * c_n + c) * sp;
                var[c] += xv[off..off + sp]
                    .iter()
                    .map(|&v| (v - mean[c]) * (v - mean[c]))
                    .sum::<T>();
            }
        }
        for v in var.iter_mut() {
            *v = *v / m;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let (out, xhat) = self.bn_apply(x, gamma, beta, &mean, &inv_std, c_n, sp);
        let var_out = self.push(
            out,
            &[x, gamma, beta],
            BatchNormOp {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels: c_n,
                spatial: sp,
                batch_stats: true,
            },
        );
        Ok((var_out, BatchStats { mean, var, count }))
    }

    /// Normalise with fixed statistics (inference mode).
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (_, c_n, sp) = self.bn_shape(x, gamma, beta)?;
        if mean.len() != c_n || var.len() != c_n {
            return Err(Error::shape(
                "batchnorm",
                format!("running statistics for {} channels, input has {c_n}", mean.len()),
            ));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let (out, xhat) = self.bn_apply(x, gamma, beta, mean, &inv_std, c_n, sp);
        Ok(self.push(
            out,
            &[x, gamma, beta],
            BatchNormOp {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels: c_n,
                spatial: sp,
                batch_stats: false,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        c_n: usize,
        sp: usize,
    ) -> (Tensor<T>, Vec<T>) {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = xv.clone();
        let n = xv.len() / (c_n * sp).max(1);
        for bi in 0..n {
            for c in 0..c_n {
                let off = (bi * c_n + c) * sp;
                for i in off..off + sp {
                    let h = (xv.data()[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out.data_mut()[i] = g[c] * h + b[c];
                }
            }
        }
        (out, xhat)
    }
}

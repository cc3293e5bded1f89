//! Classification losses and probability fusion.

use super::{Backward, GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[N,K]` logits, stabilised by max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - m).exp();
            z += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / z;
        }
    }
    out
}

struct XentOp<T> {
    logits: Var,
    probs: Vec<T>,
    labels: Vec<usize>,
    k: usize,
}

impl<T: Scalar> Backward<T> for XentOp<T> {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        if !sink.wants(self.logits) {
            return;
        }
        let n = self.labels.len();
        let s = g[0] / T::of(n as f64);
        let d = sink.buf(self.logits);
        for (i, &y) in self.labels.iter().enumerate() {
            for j in 0..self.k {
                let target = if j == y { T::one() } else { T::zero() };
                d[i * self.k + j] += s * (self.probs[i * self.k + j] - target);
            }
        }
    }
}

struct LogMeanSoftmaxOp<T> {
    parts: Vec<Var>,
    probs: Vec<Vec<T>>,
    mixed: Vec<T>,
    k: usize,
}

impl<T: Scalar> Backward<T> for LogMeanSoftmaxOp<T> {
    fn backward(&self, _: &Tensor<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        let w = T::one() / T::of(self.parts.len() as f64);
        for (pi, &part) in self.parts.iter().enumerate() {
            if !sink.wants(part) {
                continue;
            }
            let p = &self.probs[pi];
            let d = sink.buf(part);
            for (r, row) in g.chunks_exact(self.k).enumerate() {
                let base = r * self.k;
                let dot: T = (0..self.k)
                    .map(|i| row[i] * p[base + i] / self.mixed[base + i])
                    .sum();
                for j in 0..self.k {
                    let idx = base + j;
                    d[idx] += w * p[idx] * (row[j] / self.mixed[idx] - dot);
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Mean negative log-likelihood of `labels` under `softmax(logits[N,K])`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        let [n, k] = shape[..] else {
            return Err(Error::shape("softmax_xent", format!("expected [N,K], got {shape:?}")));
        };
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_xent",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside 0..{k}"
            )));
        }
        let probs = softmax_rows(self.value(logits).data(), k);
        let lv = self.value(logits).data();
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss += lse - row[y];
        }
        let out = Tensor::scalar(loss / T::of(n as f64));
        Ok(self.push(
            out,
            &[logits],
            XentOp {
                logits,
                probs,
                labels: labels.to_vec(),
                k,
            },
        ))
    }

    /// `ln(mean_i softmax(parts[i]))`: average fusion of class probabilities,
    /// returned in log space so the result is itself a valid logit tensor.
    pub fn log_mean_softmax(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("fusion of zero streams".into()))?;
        let shape = self.shape(first).to_vec();
        let [_, k] = shape[..] else {
            return Err(Error::shape("log_mean_softmax", format!("expected [N,K], got {shape:?}")));
        };
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::shape(
                    "log_mean_softmax",
                    format!("stream outputs {:?} vs {shape:?}", self.shape(p)),
                ));
            }
        }
        let probs: Vec<Vec<T>> = parts
            .iter()
            .map(|&p| softmax_rows(self.value(p).data(), k))
            .collect();
        let w = T::one() / T::of(parts.len() as f64);
        let mut mixed = vec![T::zero(); probs[0].len()];
        for p in &probs {
            for (m, &v) in mixed.iter_mut().zip(p) {
                *m += v * w;
            }
        }
        let out = Tensor::from_vec(&shape, mixed.iter().map(|&m| m.ln()).collect())?;
        Ok(self.push(
            out,
            parts,
            LogMeanSoftmaxOp {
                parts: parts.to_vec(),
                probs,
                mixed,
                k,
            },
        ))
    }
}

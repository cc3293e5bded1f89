//! Randomised finite-difference sweep over every differentiable op.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::grad_check;
use super::{ConvGeom, PoolKind, Tape, Var};
use crate::error::Result;
use crate::nn::lstm_step;
use crate::tensor::Tensor;

/// Worst relative error seen for one op.
#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub trials: usize,
    pub worst: f64,
}

type Probe = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero and from each other, so kinks (relu, max) sit
/// well outside the finite-difference stencil.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|k| (k as f64 - (n / 2) as f64) * 0.05 + 0.025 + rng.random_range(-0.005..0.005))
        .collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).unwrap()
}

/// Reduce `y` to a scalar through a fixed random projection, so every output
/// element contributes with its own weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let r = tape.constant(uniform(&mut rng, &shape));
    let p = tape.mul(y, r)?;
    let n = tape.value(p).len() as f64;
    let m = tape.mean_all(p);
    Ok(tape.scale(m, n))
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// One random instance of `op`: the parameters and the scalar function of them.
fn instance(op: &'static str, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Probe) {
    let pseed: u64 = rng.random();
    match op {
        "add" | "mul" => {
            let s = [dim(rng, 1, 3), dim(rng, 1, 4)];
            let ps = vec![uniform(rng, &s), uniform(rng, &s)];
            let f: Probe = if op == "add" {
                Box::new(move |t, v| {
                    let y = t.add(v[0], v[1])?;
                    project(t, y, pseed)
                })
            } else {
                Box::new(move |t, v| {
                    let y = t.mul(v[0], v[1])?;
                    project(t, y, pseed)
                })
            };
            (ps, f)
        }
        "scale" => {
            let a = rng.random_range(-2.0..2.0);
            let s = [dim(rng, 1, 5)];
            (
                vec![uniform(rng, &s)],
                Box::new(move |t, v| {
                    let y = t.scale(v[0], a);
                    project(t, y, pseed)
                }),
            )
        }
        "relu" | "sigmoid" | "tanh" => {
            let s = [dim(rng, 1, 3), dim(rng, 2, 5)];
            let x = if op == "relu" { separated(rng, &s) } else { uniform(rng, &s).map(|v| 2.0 * v) };
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = match op {
                        "relu" => t.relu(v[0]),
                        "sigmoid" => t.sigmoid(v[0]),
                        _ => t.tanh(v[0]),
                    };
                    project(t, y, pseed)
                }),
            )
        }
        "matmul" => {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            (
                vec![uniform(rng, &[m, k]), uniform(rng, &[k, n])],
                Box::new(move |t, v| {
                    let y = t.matmul(v[0], v[1])?;
                    project(t, y, pseed)
                }),
            )
        }
        "linear" => {
            let (n, i, o) = (dim(rng, 1, 3), dim(rng, 1, 5), dim(rng, 1, 4));
            (
                vec![uniform(rng, &[n, i]), uniform(rng, &[o, i]), uniform(rng, &[o])],
                Box::new(move |t, v| {
                    let y = t.linear(v[0], v[1], Some(v[2]))?;
                    project(t, y, pseed)
                }),
            )
        }
        "add_row_bias" => {
            let (n, k) = (dim(rng, 1, 3), dim(rng, 1, 5));
            (
                vec![uniform(rng, &[n, k]), uniform(rng, &[k])],
                Box::new(move |t, v| {
                    let y = t.add_row_bias(v[0], v[1])?;
                    project(t, y, pseed)
                }),
            )
        }
        "reshape" | "swap_axes_12" => {
            let s = [dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            (
                vec![uniform(rng, &s)],
                Box::new(move |t, v| {
                    let y = if op == "reshape" {
                        let n: usize = s.iter().product();
                        t.reshape(v[0], &[n])?
                    } else {
                        t.swap_axes_12(v[0])?
                    };
                    project(t, y, pseed)
                }),
            )
        }
        "concat" => {
            let axis = dim(rng, 0, 2);
            let mut a = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            let mut b = a;
            a[axis] = dim(rng, 1, 3);
            b[axis] = dim(rng, 1, 3);
            (
                vec![uniform(rng, &a), uniform(rng, &b)],
                Box::new(move |t, v| {
                    let y = t.concat(&[v[0], v[1]], axis)?;
                    project(t, y, pseed)
                }),
            )
        }
        "narrow" => {
            let s = [dim(rng, 1, 3), dim(rng, 2, 5), dim(rng, 1, 3)];
            let start = dim(rng, 0, s[1] - 1);
            let len = dim(rng, 1, s[1] - start);
            (
                vec![uniform(rng, &s)],
                Box::new(move |t, v| {
                    let y = t.narrow(v[0], 1, start, len)?;
                    project(t, y, pseed)
                }),
            )
        }
        "mean_all" => {
            let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
            (vec![uniform(rng, &s)], Box::new(|t, v| Ok(t.mean_all(v[0]))))
        }
        "conv2d" => {
            let (c, co, k) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
            let (stride, pad) = (dim(rng, 1, 2), dim(rng, 0, 1));
            let (n, h, w) = (dim(rng, 1, 2), dim(rng, k, 6), dim(rng, k, 6));
            (
                vec![
                    uniform(rng, &[n, c, h, w]),
                    uniform(rng, &[co, c, k, k]),
                    uniform(rng, &[co]),
                ],
                Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    project(t, y, pseed)
                }),
            )
        }
        "conv3d" => {
            let (c, co) = (dim(rng, 1, 2), dim(rng, 1, 3));
            let k = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            let geom = ConvGeom::new(
                [dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 2)],
                [dim(rng, 0, 1), dim(rng, 0, 1), dim(rng, 0, 1)],
            );
            let x = [1, c, dim(rng, k[0], 5), dim(rng, k[1], 5), dim(rng, k[2], 5)];
            (
                vec![uniform(rng, &x), uniform(rng, &[co, c, k[0], k[1], k[2]]), uniform(rng, &[co])],
                Box::new(move |t, v| {
                    let y = t.conv3d(v[0], v[1], Some(v[2]), geom)?;
                    project(t, y, pseed)
                }),
            )
        }
        "max_pool" | "avg_pool" => {
            let win = [dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3)];
            let geom = ConvGeom::new(
                [dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 2)],
                [0, dim(rng, 0, win[1] / 2), dim(rng, 0, win[2] / 2)],
            );
            let s = [dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, win[0], 4), dim(rng, win[1], 5), dim(rng, win[2], 5)];
            let (x, kind) = if op == "max_pool" {
                (separated(rng, &s), PoolKind::Max)
            } else {
                (uniform(rng, &s), PoolKind::Avg)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.pool(v[0], kind, win, geom)?;
                    project(t, y, pseed)
                }),
            )
        }
        "global_avg_pool" => {
            let s = [dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4)];
            (
                vec![uniform(rng, &s)],
                Box::new(move |t, v| {
                    let y = t.global_avg_pool(v[0])?;
                    project(t, y, pseed)
                }),
            )
        }
        "batchnorm_train" | "batchnorm_eval" => {
            let c = dim(rng, 1, 3);
            let s = [dim(rng, 2, 3), c, dim(rng, 2, 3), dim(rng, 2, 3)];
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            let ps = vec![uniform(rng, &s).map(|v| 2.0 * v), uniform(rng, &[c]), uniform(rng, &[c])];
            let train = op == "batchnorm_train";
            (
                ps,
                Box::new(move |t, v| {
                    let y = if train {
                        t.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0
                    } else {
                        t.batchnorm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?
                    };
                    project(t, y, pseed)
                }),
            )
        }
        "softmax_xent" => {
            let n = dim(rng, 1, 4);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            (
                vec![uniform(rng, &[n, 4]).map(|v| 3.0 * v)],
                Box::new(move |t, v| t.softmax_xent(v[0], &labels)),
            )
        }
        "log_mean_softmax" => {
            // Probed as in training, through the loss on the fused logits. A
            // random projection makes each row's gradient sum to zero, which
            // leaves near-zero components dominated by truncation error.
            let n = dim(rng, 1, 3);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            (
                vec![uniform(rng, &[n, 4]), uniform(rng, &[n, 4]).map(|v| 2.0 * v)],
                Box::new(move |t, v| {
                    let y = t.log_mean_softmax(&[v[0], v[1]])?;
                    t.softmax_xent(y, &labels)
                }),
            )
        }
        "lstm_step" => {
            let (n, d, h) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 4));
            // gate weights at the layer's own init scale
            let bound = 1.0 / (h as f64).sqrt();
            (
                vec![
                    uniform(rng, &[n, d]),
                    uniform(rng, &[n, h]),
                    uniform(rng, &[n, h]),
                    uniform(rng, &[d + h, 4 * h]).map(|v| v * bound),
                    uniform(rng, &[4 * h]).map(|v| v * bound),
                ],
                Box::new(move |t, v| {
                    let (h2, c2) = lstm_step(t, v[0], v[1], v[2], v[3], v[4])?;
                    let both = t.concat(&[h2, c2], 1)?;
                    project(t, both, pseed)
                }),
            )
        }
        other => unreachable!("unknown op {other}"),
    }
}

pub const OPS: &[&str] = &[
    "add",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "tanh",
    "matmul",
    "linear",
    "add_row_bias",
    "reshape",
    "swap_axes_12",
    "concat",
    "narrow",
    "mean_all",
    "conv2d",
    "conv3d",
    "max_pool",
    "avg_pool",
    "global_avg_pool",
    "batchnorm_train",
    "batchnorm_eval",
    "softmax_xent",
    "log_mean_softmax",
    "lstm_step",
];

/// Run `trials` random instances of every op in [`OPS`] through [`grad_check`].
pub fn check_all_ops(trials: usize, seed: u64, eps: f64) -> Result<Vec<OpReport>> {
    let mut reports = Vec::with_capacity(OPS.len());
    for (oi, &op) in OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((oi as u64 + 1) << 32));
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let (params, f) = instance(op, &mut rng);
            worst = worst.max(grad_check(&f, &params, eps)?);
        }
        reports.push(OpReport { op, trials, worst });
    }
    Ok(reports)
}

//! Parameterised layers. Each layer owns only [`ParamId`]s; values live in the store.

use rand::Rng;

use super::params::{Ctx, Mode, ParamId, ParamStore};
use crate::autograd::{ConvGeom, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{he_uniform_bound, Scalar, Tensor};

/// 2D or 3D convolution with He-uniform weights.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub geom: ConvGeom,
    planar: bool,
}

impl Conv {
    /// Square-kernel 2D convolution over `[N,C,H,W]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new2d<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut c = Self::new3d(
            store,
            name,
            cin,
            cout,
            [1, kernel, kernel],
            ConvGeom::spatial(stride, pad),
            bias,
            rng,
        );
        c.planar = true;
        c
    }

    /// 3D convolution over `[N,C,S,H,W]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new3d<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let bound = he_uniform_bound(fan_in);
        let shape = [cout, cin, kernel[0], kernel[1], kernel[2]];
        let weight = store.param(
            &format!("{name}.weight"),
            Tensor::uniform(&shape, -bound, bound, rng),
        );
        let bias = bias.then(|| store.param(&format!("{name}.bias"), Tensor::zeros(&[cout])));
        Conv {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            geom,
            planar: false,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        if self.planar {
            let shape = ctx.tape.shape(w).to_vec();
            let w4 = ctx.tape.reshape(w, &[shape[0], shape[1], shape[3], shape[4]])?;
            // Square kernels and symmetric geometry by construction.
            ctx.tape.conv2d(x, w4, b, self.geom.stride[1], self.geom.pad[1])
        } else {
            ctx.tape.conv3d(x, w, b, self.geom)
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.iter().product::<usize>()
            + self.bias.map_or(0, |_| self.out_channels)
    }
}

/// Fully-connected layer, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Self {
        let bound = he_uniform_bound(din);
        Linear {
            weight: store.param(
                &format!("{name}.weight"),
                Tensor::uniform(&[dout, din], -bound, bound, rng),
            ),
            bias: store.param(&format!("{name}.bias"), Tensor::zeros(&[dout])),
            in_features: din,
            out_features: dout,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.linear(x, w, Some(b))
    }

    /// Zero the weights and bias so every input maps to identical logits.
    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.weight).data_mut().fill(T::zero());
        store.get_mut(self.bias).data_mut().fill(T::zero());
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Batch normalisation with running statistics kept as store buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Number of training batches folded into the running statistics.
    pub tracked: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.param(&format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.param(&format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.buffer(&format!("{name}.running_var"), Tensor::ones(&[channels])),
            tracked: store.buffer(&format!("{name}.tracked"), Tensor::zeros(&[1])),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = ctx.tape.batchnorm_train(x, gamma, beta, BN_EPS)?;
                let m = T::of(BN_MOMENTUM);
                let keep = T::one() - m;
                let unbias = if stats.count > 1 {
                    T::of(stats.count as f64 / (stats.count - 1) as f64)
                } else {
                    T::one()
                };
                let store = ctx.store_mut();
                for (r, &b) in store
                    .get_mut(self.running_mean)
                    .data_mut()
                    .iter_mut()
                    .zip(&stats.mean)
                {
                    *r = keep * *r + m * b;
                }
                for (r, &b) in store
                    .get_mut(self.running_var)
                    .data_mut()
                    .iter_mut()
                    .zip(&stats.var)
                {
                    *r = keep * *r + m * b * unbias;
                }
                store.get_mut(self.tracked).data_mut()[0] += T::one();
                Ok(y)
            }
            Mode::Eval => {
                let store = ctx.store();
                if store.get(self.tracked).data()[0] <= T::zero() {
                    return Err(Error::NoRunningStats);
                }
                let mean = store.get(self.running_mean).data().to_vec();
                let var = store.get(self.running_var).data().to_vec();
                ctx.tape.batchnorm_eval(x, gamma, beta, &mean, &var, BN_EPS)
            }
        }
    }
}

/// Single-layer LSTM. Gates are packed as `[input, forget, candidate, output]`
/// along the columns of `weight[D+H, 4H]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Lstm {
            weight: store.param(
                &format!("{name}.weight"),
                Tensor::uniform(&[input_size + hidden, 4 * hidden], -bound, bound, rng),
            ),
            bias: store.param(
                &format!("{name}.bias"),
                Tensor::uniform(&[4 * hidden], -bound, bound, rng),
            ),
            input_size,
            hidden,
        }
    }

    /// Run over `x[N,S,D]` from a zero state; returns the last hidden state `[N,H]`.
    pub fn last_hidden<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let [n, s, d] = shape[..] else {
            return Err(Error::shape("lstm", format!("expected [N,S,D], got {shape:?}")));
        };
        if d != self.input_size {
            return Err(Error::shape(
                "lstm",
                format!("input width {d}, layer expects {}", self.input_size),
            ));
        }
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let mut h = ctx.input(Tensor::zeros(&[n, self.hidden]));
        let mut c = ctx.input(Tensor::zeros(&[n, self.hidden]));
        for t in 0..s {
            let xt = ctx.tape.narrow(x, 1, t, 1)?;
            let xt = ctx.tape.reshape(xt, &[n, d])?;
            (h, c) = lstm_step(&mut ctx.tape, xt, h, c, w, b)?;
        }
        Ok(h)
    }
}

/// One LSTM cell update: `x[N,D]`, `h,c[N,H]`, `w[D+H,4H]`, `b[4H]` → `(h', c')`.
pub fn lstm_step<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    h: Var,
    c: Var,
    w: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let hd = tape.shape(h)[1];
    let (xs, ws) = (tape.shape(x).to_vec(), tape.shape(w).to_vec());
    if tape.shape(c) != tape.shape(h) || ws != [xs[1] + hd, 4 * hd] || tape.shape(b) != [4 * hd] {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "x {xs:?}, h {:?}, c {:?}, weight {ws:?}, bias {:?}",
                tape.shape(h),
                tape.shape(c),
                tape.shape(b)
            ),
        ));
    }
    let xh = tape.concat(&[x, h], 1)?;
    let z = tape.matmul(xh, w)?;
    let z = tape.add_row_bias(z, b)?;
    let i = tape.narrow(z, 1, 0, hd)?;
    let f = tape.narrow(z, 1, hd, hd)?;
    let g = tape.narrow(z, 1, 2 * hd, hd)?;
    let o = tape.narrow(z, 1, 3 * hd, hd)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_lstm_is_a_fixed_point() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = Lstm::new(&mut store, "lstm", 3, 2, &mut rng);
        store.get_mut(lstm.weight).data_mut().fill(0.0);
        store.get_mut(lstm.bias).data_mut().fill(0.0);
        let mut ctx = Ctx::new(&mut store, Mode::Eval);
        let x = ctx.input(Tensor::from_vec(&[1, 3], vec![5.0, -2.0, 0.3]).unwrap());
        let h = ctx.input(Tensor::zeros(&[1, 2]));
        let c = ctx.input(Tensor::zeros(&[1, 2]));
        let (w, b) = (ctx.param(lstm.weight), ctx.param(lstm.bias));
        let (h2, c2) = lstm_step(&mut ctx.tape, x, h, c, w, b).unwrap();
        assert!(ctx.tape.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(ctx.tape.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_matches_hand_arithmetic() {
        // D = H = 1. Weight rows: [x; h], columns: [i, f, g, o].
        let wv = [0.5, -0.3, 0.8, 0.2, 0.1, 0.4, -0.6, 0.7];
        let bv = [0.05, 0.1, -0.2, 0.3];
        let (x0, h0, c0) = (0.9, -0.4, 0.25);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |k: usize| x0 * wv[k] + h0 * wv[4 + k] + bv[k];
        let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
        let c_want = f * c0 + i * g;
        let h_want = o * c_want.tanh();

        let mut store = ParamStore::<f64>::new();
        let w_id = store.param("w", Tensor::from_vec(&[2, 4], wv.to_vec()).unwrap());
        let b_id = store.param("b", Tensor::from_vec(&[4], bv.to_vec()).unwrap());
        let mut ctx = Ctx::new(&mut store, Mode::Eval);
        let x = ctx.input(Tensor::from_vec(&[1, 1], vec![x0]).unwrap());
        let h = ctx.input(Tensor::from_vec(&[1, 1], vec![h0]).unwrap());
        let c = ctx.input(Tensor::from_vec(&[1, 1], vec![c0]).unwrap());
        let (w, b) = (ctx.param(w_id), ctx.param(b_id));
        let (h2, c2) = lstm_step(&mut ctx.tape, x, h, c, w, b).unwrap();
        assert!((ctx.tape.value(h2).data()[0] - h_want).abs() < 1e-12);
        assert!((ctx.tape.value(c2).data()[0] - c_want).abs() < 1e-12);
    }

    #[test]
    fn hidden_size_mismatch_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let w_id = store.param("w", Tensor::zeros(&[3, 8]));
        let b_id = store.param("b", Tensor::zeros(&[8]));
        let mut ctx = Ctx::new(&mut store, Mode::Eval);
        let x = ctx.input(Tensor::zeros(&[1, 1]));
        let h = ctx.input(Tensor::zeros(&[1, 3]));
        let c = ctx.input(Tensor::zeros(&[1, 3]));
        let (w, b) = (ctx.param(w_id), ctx.param(b_id));
        assert!(lstm_step(&mut ctx.tape, x, h, c, w, b).is_err());
    }

    #[test]
    fn batchnorm_eval_requires_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        {
            let mut ctx = Ctx::new(&mut store, Mode::Eval);
            let xv = ctx.input(x.clone());
            assert!(matches!(bn.forward(&mut ctx, xv), Err(Error::NoRunningStats)));
        }
        {
            let mut ctx = Ctx::new(&mut store, Mode::Train);
            let xv = ctx.input(x.clone());
            bn.forward(&mut ctx, xv).unwrap();
        }
        // running mean moved 10% of the way to the batch mean [2, 3.5]
        let rm = store.get(bn.running_mean).data();
        assert!((rm[0] - 0.2).abs() < 1e-12 && (rm[1] - 0.35).abs() < 1e-12);
        let mut ctx = Ctx::new(&mut store, Mode::Eval);
        let xv = ctx.input(x);
        assert!(bn.forward(&mut ctx, xv).is_ok());
    }
}

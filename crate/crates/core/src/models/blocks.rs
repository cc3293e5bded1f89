//! Small building blocks shared by the architectures.

use rand::Rng;

use crate::autograd::{ConvGeom, PoolKind, Var};
use crate::error::Result;
use crate::nn::{BatchNorm, Conv, Ctx, ParamStore};
use crate::tensor::Scalar;

/// Convolution (no bias) → batch norm → optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new2d<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        ConvBn {
            conv: Conv::new2d(store, &format!("{name}.conv"), cin, cout, k, stride, pad, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
            relu,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new3d<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        geom: ConvGeom,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        ConvBn {
            conv: Conv::new3d(store, &format!("{name}.conv"), cin, cout, kernel, geom, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
            relu,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(if self.relu { ctx.tape.relu(y) } else { y })
    }
}

pub fn max_pool2d<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, window: usize, stride: usize, pad: usize) -> Result<Var> {
    ctx.tape.pool2d(x, PoolKind::Max, window, stride, pad)
}

/// `[N, ...] → [N, prod(...)]`.
pub fn flatten<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
    let shape = ctx.tape.shape(x).to_vec();
    let n = shape[0];
    let rest: usize = shape[1..].iter().product();
    ctx.tape.reshape(x, &[n, rest])
}

//! (2+1)D factorisation of a `t×d×d` convolution into a `1×d×d` spatial
//! convolution followed by a `t×1×1` temporal one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv};
use super::params::{Ctx, ParamStore};
use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorizedConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub temporal_kernel: usize,
    pub spatial_kernel: usize,
    pub mid_channels: usize,
    /// `[temporal, spatial]`
    pub stride: [usize; 2],
    /// `[temporal, spatial]`
    pub pad: [usize; 2],
}

impl FactorizedConvSpec {
    /// Weights of the dense `t×d×d` convolution this pair replaces.
    pub fn dense_params(&self) -> usize {
        let d = self.spatial_kernel;
        self.temporal_kernel * d * d * self.in_channels * self.out_channels
    }

    /// Weights of the spatial + temporal pair.
    pub fn factorized_params(&self) -> usize {
        let d = self.spatial_kernel;
        self.mid_channels * (d * d * self.in_channels + self.temporal_kernel * self.out_channels)
    }

    /// `|pair − dense| / dense`.
    pub fn parity_error(&self) -> f64 {
        let dense = self.dense_params() as f64;
        (self.factorized_params() as f64 - dense).abs() / dense
    }

    pub fn with_geometry(mut self, stride: [usize; 2], pad: [usize; 2]) -> Self {
        self.stride = stride;
        self.pad = pad;
        self
    }
}

/// Mid width `M = ⌊t·d²·Nin·Nout / (d²·Nin + t·Nout)⌋`, chosen so the pair has
/// about as many weights as the dense kernel. Stride 1 and "same" padding.
pub fn factorize_conv3d(n_in: usize, n_out: usize, t: usize, d: usize) -> Result<FactorizedConvSpec> {
    if n_in == 0 || n_out == 0 || t == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "factorize_conv3d needs positive arguments, got Nin={n_in} Nout={n_out} t={t} d={d}"
        )));
    }
    let num = t * d * d * n_in * n_out;
    let den = d * d * n_in + t * n_out;
    let m = num / den;
    if m == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate factorisation: M = 0 for Nin={n_in} Nout={n_out} t={t} d={d}"
        )));
    }
    Ok(FactorizedConvSpec {
        in_channels: n_in,
        out_channels: n_out,
        temporal_kernel: t,
        spatial_kernel: d,
        mid_channels: m,
        stride: [1, 1],
        pad: [t / 2, d / 2],
    })
}

/// Spatial conv → BN → ReLU → temporal conv.
#[derive(Clone, Debug)]
pub struct Conv2Plus1d {
    pub spec: FactorizedConvSpec,
    pub spatial: Conv,
    pub mid_bn: BatchNorm,
    pub temporal: Conv,
}

impl Conv2Plus1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: FactorizedConvSpec,
        rng: &mut R,
    ) -> Self {
        let (t, d, m) = (spec.temporal_kernel, spec.spatial_kernel, spec.mid_channels);
        let spatial = Conv::new3d(
            store,
            &format!("{name}.spatial"),
            spec.in_channels,
            m,
            [1, d, d],
            ConvGeom::new([1, spec.stride[1], spec.stride[1]], [0, spec.pad[1], spec.pad[1]]),
            false,
            rng,
        );
        let mid_bn = BatchNorm::new(store, &format!("{name}.mid_bn"), m);
        let temporal = Conv::new3d(
            store,
            &format!("{name}.temporal"),
            m,
            spec.out_channels,
            [t, 1, 1],
            ConvGeom::new([spec.stride[0], 1, 1], [spec.pad[0], 0, 0]),
            false,
            rng,
        );
        Conv2Plus1d {
            spec,
            spatial,
            mid_bn,
            temporal,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.spatial.forward(ctx, x)?;
        let y = self.mid_bn.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        self.temporal.forward(ctx, y)
    }
}

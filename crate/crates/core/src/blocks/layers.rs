//! Parameterized layers over `[C, H, W]` feature maps.

use super::params::{Ctx, Init, ParamId};
use crate::error::Result;
use crate::tensor::Var;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Convolution with PyTorch-style uniform initialization.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(init: &mut Init<'_>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        let mut s = init.sub(name);
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Ok(Self {
            weight: s.uniform("weight", &[cout, cin, k, k], bound)?,
            bias: s.uniform("bias", &[cout], bound)?,
            stride,
            padding,
        })
    }

    /// Stride 1, "same" padding for odd `k`.
    pub fn same(init: &mut Init<'_>, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Self::new(init, name, cin, cout, k, 1, k / 2)
    }

    /// Weights and bias start at zero.
    pub fn zeroed(init: &mut Init<'_>, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        let mut s = init.sub(name);
        Ok(Self {
            weight: s.constant("weight", &[cout, cin, k, k], 0.0)?,
            bias: s.constant("bias", &[cout], 0.0)?,
            stride: 1,
            padding: k / 2,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(ctx.p(self.weight), Some(ctx.p(self.bias)), self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize, k: usize) -> Result<Self> {
        let mut s = init.sub(name);
        let bound = 1.0 / k as f64;
        Ok(Self {
            weight: s.uniform("weight", &[channels, 1, k, k], bound)?,
            bias: s.uniform("bias", &[channels], bound)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.depthwise_conv2d(ctx.p(self.weight), Some(ctx.p(self.bias)))
    }
}

/// Layer normalization over the channel axis of `[C, H, W]`, with a
/// per-channel affine.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Result<Self> {
        let mut s = init.sub(name);
        Ok(Self {
            gamma: s.constant("gamma", &[channels, 1, 1], 1.0)?,
            beta: s.constant("beta", &[channels, 1, 1], 0.0)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.standardize(&[0], NORM_EPS)?
            .mul(ctx.p(self.gamma))?
            .add(ctx.p(self.beta))
    }
}

/// Dense layer on row vectors: `[n, in] -> [n, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let mut s = init.sub(name);
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: s.uniform("weight", &[fan_in, fan_out], bound)?,
            bias: s.uniform("bias", &[1, fan_out], bound)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(ctx.p(self.weight))?.add(ctx.p(self.bias))
    }
}

/// True for names of additive offsets (conv/linear biases, norm shifts).
pub fn is_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.ends_with(".beta")
}

//! Noise predictors: a small conditional U-Net and exact test doubles.

use serde::{Deserialize, Serialize};

use super::schedule::DiffusionSchedule;
use crate::blocks::{Conv2d, Ctx, Init, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Tensor, Var};

/// Predicts the noise `ε` present in `x_t` given the condition.
pub trait Denoiser: Sync {
    fn predict_noise(&self, x_t: &Tensor, cond: &Tensor, t: usize, sched: &DiffusionSchedule) -> Result<Tensor>;
}

/// Always returns a fixed tensor.
pub struct StoredNoise(pub Tensor);

impl Denoiser for StoredNoise {
    fn predict_noise(&self, x_t: &Tensor, _: &Tensor, _: usize, _: &DiffusionSchedule) -> Result<Tensor> {
        if x_t.shape() != self.0.shape() {
            return Err(Error::mismatch("stored noise", x_t.shape(), self.0.shape()));
        }
        Ok(self.0.clone())
    }
}

/// Knows the clean sample: returns the unique `ε` with
/// `x_t = √ᾱ_t x₀ + √(1−ᾱ_t) ε`.
pub struct ResidualOracle {
    pub x0: Tensor,
}

impl Denoiser for ResidualOracle {
    fn predict_noise(&self, x_t: &Tensor, _: &Tensor, t: usize, sched: &DiffusionSchedule) -> Result<Tensor> {
        sched.check_t(t)?;
        let ab = sched.alpha_bar[t];
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        x_t.zip_map(&self.x0, "residual oracle", |x, x0| (x - a * x0) / s)
    }
}

/// Oracle for an all-zero residual, valid for any shape.
pub struct ZeroResidual;

impl Denoiser for ZeroResidual {
    fn predict_noise(&self, x_t: &Tensor, _: &Tensor, t: usize, sched: &DiffusionSchedule) -> Result<Tensor> {
        sched.check_t(t)?;
        Ok(x_t.scale(1.0 / (1.0 - sched.alpha_bar[t]).sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    /// Resolutions including the bottleneck.
    pub levels: usize,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            levels: 2,
            time_dim: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.levels == 0 || self.levels > 6 {
            return Err(Error::Config(format!(
                "denoiser needs positive base_channels and 1..=6 levels, got {} and {}",
                self.base_channels, self.levels
            )));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time_dim must be positive and even, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }
}

/// Sinusoidal embedding `[1, dim]` of a (possibly rescaled) timestep.
pub fn timestep_embedding(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    Tensor::new(&[1, dim], out).expect("finite embedding")
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    time: Linear,
}

impl ResBlock {
    fn new(init: &mut Init<'_>, name: &str, c: usize, tdim: usize) -> Result<Self> {
        let mut s = init.sub(name);
        Ok(Self {
            conv1: Conv2d::same(&mut s, "conv1", c, c, 3)?,
            conv2: Conv2d::same(&mut s, "conv2", c, c, 3)?,
            time: Linear::new(&mut s, "time", tdim, c)?,
        })
    }

    fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, temb: Var<'t>) -> Result<Var<'t>> {
        let c = x.shape()[0];
        let shift = self.time.forward(ctx, temb)?.reshape(&[c, 1, 1])?;
        let h = self.conv1.forward(ctx, x.silu())?.add(shift)?;
        let h = self.conv2.forward(ctx, h.silu())?;
        x.add(h)
    }
}

#[derive(Clone, Debug)]
struct UpLevel {
    up: Conv2d,
    fuse: Conv2d,
    block: ResBlock,
}

/// Conditional U-Net `ε_θ(x_t, x_c, t)`: the condition is concatenated to
/// `x_t` along channels and a sinusoidal embedding of `t·1000/T` shifts
/// every residual block.
#[derive(Clone, Debug)]
pub struct UNetDenoiser {
    pub cfg: DenoiserConfig,
    pub channels: usize,
    pub params: ParamStore,
    time1: Linear,
    time2: Linear,
    input: Conv2d,
    down: Vec<(ResBlock, Conv2d)>,
    mid: ResBlock,
    up: Vec<UpLevel>,
    output: Conv2d,
}

impl UNetDenoiser {
    /// `channels` is the channel count of `x_t` (and of the condition).
    pub fn new(cfg: &DenoiserConfig, channels: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, rng);
        let td = cfg.time_dim;
        let ch = |l: usize| cfg.base_channels << l;
        let time1 = Linear::new(&mut init, "time1", td, td)?;
        let time2 = Linear::new(&mut init, "time2", td, td)?;
        let input = Conv2d::same(&mut init, "input", 2 * channels, ch(0), 3)?;
        let last = cfg.levels - 1;
        let mut down = Vec::new();
        for l in 0..last {
            let mut s = init.sub(&format!("down{l}"));
            down.push((
                ResBlock::new(&mut s, "block", ch(l), td)?,
                Conv2d::new(&mut s, "pool", ch(l), ch(l + 1), 2, 2, 0)?,
            ));
        }
        let mid = ResBlock::new(&mut init, "mid", ch(last), td)?;
        let mut up = Vec::new();
        for l in (0..last).rev() {
            let mut s = init.sub(&format!("up{l}"));
            up.push(UpLevel {
                up: Conv2d::same(&mut s, "up", ch(l + 1), ch(l), 3)?,
                fuse: Conv2d::same(&mut s, "fuse", 2 * ch(l), ch(l), 1)?,
                block: ResBlock::new(&mut s, "block", ch(l), td)?,
            });
        }
        let output = Conv2d::same(&mut init, "output", ch(0), channels, 3)?;
        Ok(Self {
            cfg: cfg.clone(),
            channels,
            params,
            time1,
            time2,
            input,
            down,
            mid,
            up,
            output,
        })
    }

    fn size_multiple(&self) -> usize {
        1 << (self.cfg.levels - 1)
    }

    /// Differentiable forward pass; spatial extents must be divisible by
    /// `2^(levels−1)`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x_t: Var<'t>, cond: Var<'t>, t: usize, sched: &DiffusionSchedule) -> Result<Var<'t>> {
        sched.check_t(t)?;
        let (xs, cs) = (x_t.shape(), cond.shape());
        if xs != cs || xs.len() != 3 || xs[0] != self.channels {
            return Err(Error::dim(
                "denoiser",
                format!("x_t {xs:?} and condition {cs:?} must both be [{}, h, w]", self.channels),
            ));
        }
        let m = self.size_multiple();
        if xs[1] % m != 0 || xs[2] % m != 0 {
            return Err(Error::dim(
                "denoiser",
                format!("extents {}x{} not divisible by {m}", xs[1], xs[2]),
            ));
        }
        let scaled_t = t as f64 * 1000.0 / sched.steps() as f64;
        let temb = ctx.input(timestep_embedding(scaled_t, self.cfg.time_dim));
        let temb = self.time2.forward(ctx, self.time1.forward(ctx, temb)?.silu())?;

        let mut h = self.input.forward(ctx, Var::cat(&[x_t, cond], 0)?)?;
        let mut skips = Vec::new();
        for (block, pool) in &self.down {
            h = block.forward(ctx, h, temb)?;
            skips.push(h);
            h = pool.forward(ctx, h)?;
        }
        h = self.mid.forward(ctx, h, temb)?;
        for lvl in &self.up {
            let skip = skips.pop().expect("one skip per level");
            h = lvl.up.forward(ctx, h.upsample_nearest2()?)?;
            h = lvl.fuse.forward(ctx, Var::cat(&[h, skip], 0)?)?;
            h = lvl.block.forward(ctx, h, temb)?;
        }
        self.output.forward(ctx, h.silu())
    }
}

impl Denoiser for UNetDenoiser {
    fn predict_noise(&self, x_t: &Tensor, cond: &Tensor, t: usize, sched: &DiffusionSchedule) -> Result<Tensor> {
        let (_, h, w) = x_t.chw()?;
        let m = self.size_multiple();
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params, false);
        let x = ctx.input(crate::wavelet::pad_edge(x_t, hp, wp)?);
        let c = ctx.input(crate::wavelet::pad_edge(cond, hp, wp)?);
        let out = self.forward(&ctx, x, c, t, sched)?.to_tensor();
        crate::wavelet::crop(&out, h, w)
    }
}

//! Spatial-frequency fusion block for the low-frequency branch.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::layers::Conv2d;
use super::params::{Ctx, Init, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

pub(crate) const FDU_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SffbConfig {
    pub channels: usize,
    pub kernels: Vec<usize>,
}

impl SffbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("SFFB channels must be positive".into()));
        }
        if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "SFFB kernels must be odd, got {:?}",
                self.kernels
            )));
        }
        Ok(())
    }
}

/// Two pointwise layers with a leaky ReLU between them.
#[derive(Clone, Debug)]
struct PointwisePair {
    first: Conv2d,
    second: Conv2d,
}

impl PointwisePair {
    fn new(init: &mut Init<'_>, name: &str, c: usize) -> Result<Self> {
        let mut s = init.sub(name);
        Ok(Self {
            first: Conv2d::same(&mut s, "conv1", c, c, 1)?,
            second: Conv2d::same(&mut s, "conv2", c, c, 1)?,
        })
    }

    fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let hidden = self.first.forward(ctx, x)?.leaky_relu(FDU_SLOPE);
        self.second.forward(ctx, hidden)
    }

    fn set_identity(&self, store: &mut ParamStore, c: usize, shift: f64) {
        *store.get_mut(self.first.weight) = Tensor::eye(c).reshape(&[c, c, 1, 1]).unwrap();
        *store.get_mut(self.first.bias) = Tensor::full(&[c], shift);
        *store.get_mut(self.second.weight) = Tensor::eye(c).reshape(&[c, c, 1, 1]).unwrap();
        *store.get_mut(self.second.bias) = Tensor::full(&[c], -shift);
    }
}

/// `F_s` is the sum of parallel "same" convolutions; the frequency unit
/// maps the amplitude and phase of `F_s` through pointwise layers and
/// returns to image space. Output is `F_s + F_f`.
#[derive(Clone, Debug)]
pub struct Sffb {
    pub cfg: SffbConfig,
    sdu: Vec<Conv2d>,
    amp: PointwisePair,
    phase: PointwisePair,
}

impl Sffb {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &SffbConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut s = init.sub(name);
        Ok(Self {
            sdu: cfg
                .kernels
                .iter()
                .map(|&k| Conv2d::same(&mut s, &format!("sdu{k}"), c, c, k))
                .collect::<Result<_>>()?,
            amp: PointwisePair::new(&mut s, "fdu_amp", c)?,
            phase: PointwisePair::new(&mut s, "fdu_phase", c)?,
            cfg: cfg.clone(),
        })
    }

    /// Makes the frequency unit an exact identity: identity weights, and a
    /// `+π` / `−π` bias pair on the phase path so the leaky ReLU only sees
    /// nonnegative values.
    pub fn set_fdu_identity(&self, store: &mut ParamStore) {
        let c = self.cfg.channels;
        self.amp.set_identity(store, c, 0.0);
        self.phase.set_identity(store, c, PI);
    }

    pub fn spatial<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut fs = self.sdu[0].forward(ctx, x)?;
        for conv in &self.sdu[1..] {
            fs = fs.add(conv.forward(ctx, x)?)?;
        }
        Ok(fs)
    }

    pub fn frequency<'t>(&self, ctx: &Ctx<'t>, fs: Var<'t>) -> Result<Var<'t>> {
        let spec = fs.dft2()?;
        let (c, h, w) = match spec.shape()[..] {
            [_, c, h, w] => (c, h, w),
            _ => unreachable!("dft2 yields rank 4"),
        };
        let re = spec.narrow(0, 0, 1)?.reshape(&[c, h, w])?;
        let im = spec.narrow(0, 1, 1)?.reshape(&[c, h, w])?;
        let amp = self.amp.forward(ctx, re.hypot(im)?)?;
        let phase = self.phase.forward(ctx, im.atan2(re)?)?;
        let re2 = amp.mul(phase.cos())?.reshape(&[1, c, h, w])?;
        let im2 = amp.mul(phase.sin())?.reshape(&[1, c, h, w])?;
        Var::cat(&[re2, im2], 0)?.idft2_real()
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let c = self.cfg.channels;
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != c {
            return Err(Error::dim("sffb", format!("expected [{c}, h, w], got {shape:?}")));
        }
        let fs = self.spatial(ctx, x)?;
        fs.add(self.frequency(ctx, fs)?)
    }
}

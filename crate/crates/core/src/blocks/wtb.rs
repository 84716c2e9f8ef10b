//! Wide transformer block over stacked high-frequency embeddings.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, DepthwiseConv, LayerNorm};
use super::params::{Ctx, Init};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WtbConfig {
    pub channels: usize,
    pub heads: usize,
    pub dw_kernels: Vec<usize>,
    pub ffn_expansion: usize,
}

impl WtbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "WTB channels {} not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        if self.dw_kernels.is_empty() || self.dw_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "depthwise kernels must be odd, got {:?}",
                self.dw_kernels
            )));
        }
        if self.ffn_expansion == 0 {
            return Err(Error::Config("FFN expansion must be positive".into()));
        }
        Ok(())
    }
}

/// `T̂ = SA(Q,K,V) + CA(L) + T`, then `FFN(Norm(T̂)) + T̂`. Q, K, V and L
/// are equal channel splits of a pointwise projection followed by summed
/// multi-scale depthwise convolutions. Channel attention is a
/// squeeze-and-excite gate on L.
#[derive(Clone, Debug)]
pub struct Wtb {
    pub cfg: WtbConfig,
    norm1: LayerNorm,
    wp: Conv2d,
    wd: Vec<DepthwiseConv>,
    proj: Conv2d,
    ca_down: Conv2d,
    ca_up: Conv2d,
    norm2: LayerNorm,
    ffn_in: Conv2d,
    ffn_out: Conv2d,
}

impl Wtb {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &WtbConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let squeeze = (c / 4).max(1);
        let hidden = c * cfg.ffn_expansion;
        let mut s = init.sub(name);
        Ok(Self {
            norm1: LayerNorm::new(&mut s, "norm1", c)?,
            wp: Conv2d::same(&mut s, "wp", c, 4 * c, 1)?,
            wd: cfg
                .dw_kernels
                .iter()
                .map(|&k| DepthwiseConv::new(&mut s, &format!("wd{k}"), 4 * c, k))
                .collect::<Result<_>>()?,
            proj: Conv2d::same(&mut s, "proj", c, c, 1)?,
            ca_down: Conv2d::same(&mut s, "ca_down", c, squeeze, 1)?,
            ca_up: Conv2d::same(&mut s, "ca_up", squeeze, c, 1)?,
            norm2: LayerNorm::new(&mut s, "norm2", c)?,
            ffn_in: Conv2d::same(&mut s, "ffn_in", c, hidden, 1)?,
            ffn_out: Conv2d::same(&mut s, "ffn_out", hidden, c, 1)?,
            cfg: cfg.clone(),
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_traced(ctx, x)?.0)
    }

    /// Also returns the self-attention weights `[heads, n, n]`.
    pub fn forward_traced<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<(Var<'t>, Rc<Tensor>)> {
        let shape = x.shape();
        let c = self.cfg.channels;
        if shape.len() != 3 || shape[0] != c {
            return Err(Error::dim(
                "wtb",
                format!("expected [{c}, h, w], got {shape:?}"),
            ));
        }
        let (h, w) = (shape[1], shape[2]);
        let n = h * w;
        let p = self.wp.forward(ctx, self.norm1.forward(ctx, x)?)?;
        let mut mixed = self.wd[0].forward(ctx, p)?;
        for dw in &self.wd[1..] {
            mixed = mixed.add(dw.forward(ctx, p)?)?;
        }
        let q = mixed.narrow(0, 0, c)?;
        let k = mixed.narrow(0, c, c)?;
        let v = mixed.narrow(0, 2 * c, c)?;
        let l = mixed.narrow(0, 3 * c, c)?;

        let heads = self.cfg.heads;
        let d = c / heads;
        let (att, probs) = Var::attention(
            q.reshape(&[heads, d, n])?,
            k.reshape(&[heads, d, n])?,
            v.reshape(&[heads, d, n])?,
            1.0 / (d as f64).sqrt(),
        )?;
        let sa = self.proj.forward(ctx, att.reshape(&[c, h, w])?)?;

        let pooled = l.mean_axis(2, true)?.mean_axis(1, true)?;
        let gate = self
            .ca_up
            .forward(ctx, self.ca_down.forward(ctx, pooled)?.gelu())?
            .sigmoid();
        let ca = l.mul(gate)?;

        let t_hat = sa.add(ca)?.add(x)?;
        let ffn = self
            .ffn_out
            .forward(ctx, self.ffn_in.forward(ctx, self.norm2.forward(ctx, t_hat)?)?.gelu())?;
        Ok((ffn.add(t_hat)?, probs))
    }
}

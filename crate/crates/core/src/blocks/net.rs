//! Two-branch encoder-decoder over Haar subbands.

use serde::{Deserialize, Serialize};

use super::cfc::Cfc;
use super::layers::Conv2d;
use super::params::{Ctx, Init, ParamStore};
use super::sffb::{Sffb, SffbConfig};
use super::wtb::{Wtb, WtbConfig};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Var};
use crate::wavelet::SubbandSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WfiConfig {
    /// Channels of the source image (1 or 3).
    pub image_channels: usize,
    /// Number of resolutions, including the bottleneck.
    pub scales: usize,
    pub base_channels: usize,
    /// Blocks per scale, from finest to coarsest.
    pub blocks: Vec<usize>,
    pub heads: usize,
    pub dw_kernels: Vec<usize>,
    pub sdu_kernels: Vec<usize>,
    pub ffn_expansion: usize,
}

impl Default for WfiConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            scales: 2,
            base_channels: 16,
            blocks: vec![1, 1],
            heads: 4,
            dw_kernels: vec![3, 5],
            sdu_kernels: vec![1, 3, 5],
            ffn_expansion: 2,
        }
    }
}

impl WfiConfig {
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn wtb(&self, level: usize) -> WtbConfig {
        WtbConfig {
            channels: 3 * self.channels_at(level),
            heads: self.heads,
            dw_kernels: self.dw_kernels.clone(),
            ffn_expansion: self.ffn_expansion,
        }
    }

    fn sffb(&self, level: usize) -> SffbConfig {
        SffbConfig {
            channels: self.channels_at(level),
            kernels: self.sdu_kernels.clone(),
        }
    }

    /// Subband extents must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::Config(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        if self.scales == 0 || self.scales > 6 {
            return Err(Error::Config(format!("scales must be in 1..=6, got {}", self.scales)));
        }
        if self.blocks.len() != self.scales {
            return Err(Error::Config(format!(
                "blocks lists {} scales, expected {}",
                self.blocks.len(),
                self.scales
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        for level in 0..self.scales {
            self.wtb(level).validate()?;
            self.sffb(level).validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Level {
    wtb: Vec<Wtb>,
    sffb: Vec<Sffb>,
}

impl Level {
    fn new(init: &mut Init<'_>, cfg: &WfiConfig, level: usize, count: usize) -> Result<Self> {
        Ok(Self {
            wtb: (0..count)
                .map(|i| Wtb::new(init, &format!("wtb{i}"), &cfg.wtb(level)))
                .collect::<Result<_>>()?,
            sffb: (0..count)
                .map(|i| Sffb::new(init, &format!("sffb{i}"), &cfg.sffb(level)))
                .collect::<Result<_>>()?,
        })
    }

    fn forward<'t>(&self, ctx: &Ctx<'t>, mut t: Var<'t>, mut f: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        for b in &self.wtb {
            t = b.forward(ctx, t)?;
        }
        for b in &self.sffb {
            f = b.forward(ctx, f)?;
        }
        Ok((t, f))
    }
}

#[derive(Clone, Debug)]
struct Down {
    hf: Conv2d,
    lf: Conv2d,
}

#[derive(Clone, Debug)]
struct Up {
    hf_up: Conv2d,
    lf_up: Conv2d,
    hf_fuse: Conv2d,
    lf_fuse: Conv2d,
    level: Level,
}

/// The stage-1 enhancement network. The high-frequency branch embeds each
/// of lh, hl, hh with a shared convolution and stacks them along channels
/// (`3C`); the low-frequency branch embeds ll (`C`). Encoder scales are
/// followed by a cross-frequency conditioner whose outputs are added back
/// to both branches. Outputs are added to the input subbands, and the
/// output convolutions start at zero so the untrained net is the identity.
#[derive(Clone, Debug)]
pub struct WfiNet {
    pub cfg: WfiConfig,
    pub params: ParamStore,
    embed_hf: Conv2d,
    embed_lf: Conv2d,
    encoder: Vec<(Level, Cfc, Down)>,
    bottleneck: (Level, Cfc),
    decoder: Vec<Up>,
    out_hf: Conv2d,
    out_lf: Conv2d,
}

impl WfiNet {
    pub fn new(cfg: &WfiConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, rng);
        let c0 = cfg.base_channels;
        let ic = cfg.image_channels;
        let embed_hf = Conv2d::same(&mut init, "embed_hf", ic, c0, 3)?;
        let embed_lf = Conv2d::same(&mut init, "embed_lf", ic, c0, 3)?;
        let last = cfg.scales - 1;
        let mut encoder = Vec::new();
        for level in 0..last {
            let (c, c2) = (cfg.channels_at(level), cfg.channels_at(level + 1));
            let mut s = init.sub(&format!("enc{level}"));
            encoder.push((
                Level::new(&mut s, cfg, level, cfg.blocks[level])?,
                Cfc::new(&mut s, "cfc", c)?,
                Down {
                    hf: Conv2d::new(&mut s, "down_hf", 3 * c, 3 * c2, 2, 2, 0)?,
                    lf: Conv2d::new(&mut s, "down_lf", c, c2, 2, 2, 0)?,
                },
            ));
        }
        let bottleneck = {
            let mut s = init.sub("mid");
            (
                Level::new(&mut s, cfg, last, cfg.blocks[last])?,
                Cfc::new(&mut s, "cfc", cfg.channels_at(last))?,
            )
        };
        let mut decoder = Vec::new();
        for level in (0..last).rev() {
            let (c, c2) = (cfg.channels_at(level), cfg.channels_at(level + 1));
            let mut s = init.sub(&format!("dec{level}"));
            decoder.push(Up {
                hf_up: Conv2d::same(&mut s, "up_hf", 3 * c2, 3 * c, 3)?,
                lf_up: Conv2d::same(&mut s, "up_lf", c2, c, 3)?,
                hf_fuse: Conv2d::same(&mut s, "fuse_hf", 6 * c, 3 * c, 1)?,
                lf_fuse: Conv2d::same(&mut s, "fuse_lf", 2 * c, c, 1)?,
                level: Level::new(&mut s, cfg, level, cfg.blocks[level])?,
            });
        }
        let out_hf = Conv2d::zeroed(&mut init, "out_hf", 3 * c0, 3 * ic, 3)?;
        let out_lf = Conv2d::zeroed(&mut init, "out_lf", c0, ic, 3)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            embed_hf,
            embed_lf,
            encoder,
            bottleneck,
            decoder,
            out_hf,
            out_lf,
        })
    }

    /// Names of the zero-initialized output parameters.
    pub fn residual_tail(&self) -> [&str; 4] {
        [
            self.params.name(self.out_hf.weight),
            self.params.name(self.out_hf.bias),
            self.params.name(self.out_lf.weight),
            self.params.name(self.out_lf.bias),
        ]
    }

    /// Differentiable forward pass. `ll` is `[c, h, w]` and `hf` the stacked
    /// `[3c, h, w]` detail bands; returns the enhanced pair.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, ll: Var<'t>, hf: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let ic = self.cfg.image_channels;
        let (ls, hs) = (ll.shape(), hf.shape());
        if ls.len() != 3 || ls[0] != ic || hs.len() != 3 || hs[0] != 3 * ic || ls[1..] != hs[1..] {
            return Err(Error::dim(
                "wfi2_forward",
                format!("ll {ls:?} and stacked hf {hs:?} do not match {ic} image channels"),
            ));
        }
        let m = self.cfg.size_multiple();
        if ls[1] % m != 0 || ls[2] % m != 0 {
            return Err(Error::dim(
                "wfi2_forward",
                format!("subband extents {}x{} not divisible by {m}", ls[1], ls[2]),
            ));
        }
        let bands = (0..3)
            .map(|i| self.embed_hf.forward(ctx, hf.narrow(0, i * ic, ic)?))
            .collect::<Result<Vec<_>>>()?;
        let mut t = Var::cat(&bands, 0)?;
        let mut f = self.embed_lf.forward(ctx, ll)?;

        let mut skips = Vec::new();
        for (level, cfc, down) in &self.encoder {
            (t, f) = level.forward(ctx, t, f)?;
            (t, f) = exchange(ctx, cfc, t, f)?;
            skips.push((t, f));
            t = down.hf.forward(ctx, t)?;
            f = down.lf.forward(ctx, f)?;
        }
        (t, f) = self.bottleneck.0.forward(ctx, t, f)?;
        (t, f) = exchange(ctx, &self.bottleneck.1, t, f)?;
        for up in &self.decoder {
            let (st, sf) = skips.pop().expect("one skip per decoder level");
            t = up.hf_up.forward(ctx, t.upsample_nearest2()?)?;
            f = up.lf_up.forward(ctx, f.upsample_nearest2()?)?;
            t = up.hf_fuse.forward(ctx, Var::cat(&[t, st], 0)?)?;
            f = up.lf_fuse.forward(ctx, Var::cat(&[f, sf], 0)?)?;
            (t, f) = up.level.forward(ctx, t, f)?;
        }
        let ll_out = self.out_lf.forward(ctx, f)?.add(ll)?;
        let hf_out = self.out_hf.forward(ctx, t)?.add(hf)?;
        Ok((ll_out, hf_out))
    }

    /// Inference on a subband set of any even size; extents that the
    /// scale count cannot divide are edge-padded and cropped back.
    pub fn enhance(&self, bands: &SubbandSet) -> Result<SubbandSet> {
        let (_, h, w) = bands.ll.chw()?;
        let m = self.cfg.size_multiple();
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params, false);
        let ll = ctx.input(crate::wavelet::pad_edge(&bands.ll, hp, wp)?);
        let hf = ctx.input(crate::wavelet::pad_edge(&bands.hf_stack(), hp, wp)?);
        let (ll, hf) = self.forward(&ctx, ll, hf)?;
        let ll = crate::wavelet::crop(&ll.to_tensor(), h, w)?;
        let hf = crate::wavelet::crop(&hf.to_tensor(), h, w)?;
        SubbandSet::from_stack(ll, &hf)
    }
}

fn exchange<'t>(ctx: &Ctx<'t>, cfc: &Cfc, t: Var<'t>, f: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let out = cfc.forward(ctx, t, f)?;
    Ok((t.add(out.t_out)?, f.add(out.f_out)?))
}

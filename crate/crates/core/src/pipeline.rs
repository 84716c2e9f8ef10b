//! Two-stage training and enhancement on single images.

use std::path::Path;

use crate::blocks::checkpoint::{self, Checkpoint};
use crate::blocks::{Adam, Ctx, WfiNet};
use crate::config::{RunConfig, TrainConfig};
use crate::diffusion::{self, BandPair, DiffusionSchedule, UNetDenoiser};
use crate::error::{Error, Result};
use crate::losses::stage1_loss_var;
use crate::tensor::{Rng, Tape, Tensor};
use crate::wavelet::{crop, dwt2, idwt2, pad_even, SubbandSet};

const WFI_PREFIX: &str = "wfi.";
const LDFB_PREFIX: &str = "ldfb.";
const HDFB_PREFIX: &str = "hdfb.";

/// RNG streams derived from the run seed.
mod stream {
    pub const WFI_INIT: u64 = 10;
    pub const LDFB_INIT: u64 = 11;
    pub const HDFB_INIT: u64 = 12;
    pub const LDFB_TRAIN: u64 = 21;
    pub const HDFB_TRAIN: u64 = 22;
}

/// The stage-1 network and, once stage 2 has run, the two denoisers.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: RunConfig,
    pub wfi: WfiNet,
    pub ldfb: Option<UNetDenoiser>,
    pub hdfb: Option<UNetDenoiser>,
}

impl Model {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let rng = Rng::new(config.train.seed);
        Ok(Self {
            wfi: WfiNet::new(&config.wfi, &mut rng.fork(stream::WFI_INIT))?,
            config: config.clone(),
            ldfb: None,
            hdfb: None,
        })
    }

    /// Fresh denoisers for both chains.
    pub fn init_denoisers(&mut self) -> Result<()> {
        let rng = Rng::new(self.config.train.seed);
        let c = self.config.wfi.image_channels;
        let cfg = &self.config.denoiser;
        self.ldfb = Some(UNetDenoiser::new(cfg, c, &mut rng.fork(stream::LDFB_INIT))?);
        self.hdfb = Some(UNetDenoiser::new(cfg, 3 * c, &mut rng.fork(stream::HDFB_INIT))?);
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        self.config.diffusion.build()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut params = crate::blocks::ParamStore::new();
        self.wfi.params.export_into(&mut params, WFI_PREFIX)?;
        if let (Some(l), Some(h)) = (&self.ldfb, &self.hdfb) {
            l.params.export_into(&mut params, LDFB_PREFIX)?;
            h.params.export_into(&mut params, HDFB_PREFIX)?;
        }
        Ok(Checkpoint {
            header: self.config.to_json(),
            params,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = RunConfig::from_json(&ckpt.header)?;
        let mut model = Self::new(&config)?;
        model.wfi.params.load_from(&ckpt.params, WFI_PREFIX)?;
        let has_denoisers = ckpt.params.iter().any(|(n, _)| n.starts_with(LDFB_PREFIX));
        if has_denoisers {
            model.init_denoisers()?;
            if let (Some(l), Some(h)) = (&mut model.ldfb, &mut model.hdfb) {
                l.params.load_from(&ckpt.params, LDFB_PREFIX)?;
                h.params.load_from(&ckpt.params, HDFB_PREFIX)?;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.to_checkpoint()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load(path)?)
    }

    fn check_image(&self, img: &Tensor) -> Result<()> {
        let (c, _, _) = img.chw()?;
        if c != self.config.wfi.image_channels {
            return Err(Error::InvalidArgument(format!(
                "model expects {} image channels, got {c}",
                self.config.wfi.image_channels
            )));
        }
        Ok(())
    }

    /// Stage-1 subbands of an image (padded to even extents first).
    pub fn initial_bands(&self, img: &Tensor) -> Result<SubbandSet> {
        self.check_image(img)?;
        let (padded, _) = pad_even(img)?;
        self.wfi.enhance(&dwt2(&padded)?)
    }

    /// Stage-1 output, optionally refined by residual diffusion. `rng`
    /// only matters when `adjust` is set.
    pub fn enhance(&self, img: &Tensor, adjust: bool, sched: &DiffusionSchedule, rng: &Rng) -> Result<Tensor> {
        let (_, h, w) = img.chw()?;
        let bands = self.initial_bands(img)?;
        let out = if adjust {
            let (Some(l), Some(hf)) = (&self.ldfb, &self.hdfb) else {
                return Err(Error::InvalidArgument(
                    "checkpoint has no diffusion stage; train stage 2 first".into(),
                ));
            };
            diffusion::frdam_adjust(&bands, l, hf, sched, rng)?
        } else {
            idwt2(&bands)?
        };
        crop(&out, h, w)
    }
}

/// Loss trajectory of a training run.
#[derive(Clone, Debug)]
pub struct RunReport {
    /// Loss at every evaluated step, the last one after the final update.
    pub history: Vec<f64>,
    /// Optimizer updates applied.
    pub updates: usize,
    pub initial: f64,
    pub final_value: f64,
    pub reached_target: bool,
}

fn check_pair(degraded: &Tensor, clean: &Tensor) -> Result<()> {
    if degraded.shape() != clean.shape() {
        return Err(Error::mismatch("training pair", degraded.shape(), clean.shape()));
    }
    Ok(())
}

/// Overfits the stage-1 network to one degraded/clean pair with
/// `w_h·L_h + w_a·L_a`. Runs at most `stage1_steps` updates; with
/// `early_stop` it ends as soon as the loss is below
/// `stage1_target × initial`.
pub fn train_stage1(model: &mut Model, degraded: &Tensor, clean: &Tensor, mut log: impl FnMut(usize, f64)) -> Result<RunReport> {
    check_pair(degraded, clean)?;
    model.check_image(degraded)?;
    let cfg = model.config.train.clone();
    let input = dwt2(&pad_even(degraded)?.0)?;
    let target = dwt2(&pad_even(clean)?.0)?;
    let m = model.config.wfi.size_multiple();
    let (_, h, w) = input.ll.chw()?;
    if h % m != 0 || w % m != 0 {
        return Err(Error::InvalidArgument(format!(
            "training subbands {h}x{w} must be divisible by {m}"
        )));
    }
    let (in_hf, in_ll) = (input.hf_stack(), input.ll);
    let (gt_hf, gt_ll) = (target.hf_stack(), target.ll);
    let mut opt = optimizer(cfg.stage1_lr, &cfg);
    let net = &mut model.wfi;
    let mut history = Vec::new();
    let mut reached = false;
    for step in 0..=cfg.stage1_steps {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &net.params, true);
        let (ll, hf) = net.forward(&ctx, ctx.input(in_ll.clone()), ctx.input(in_hf.clone()))?;
        let loss = stage1_loss_var(ll, hf, ctx.input(gt_ll.clone()), ctx.input(gt_hf.clone()), cfg.loss_weights)?;
        let value = loss.value().item()?;
        history.push(value);
        log(step, value);
        reached = value < cfg.stage1_target * history[0];
        if step == cfg.stage1_steps || (cfg.early_stop && reached) {
            break;
        }
        let grads = ctx.grads(&tape.backward(loss)?)?;
        opt.step(&mut net.params, &grads)?;
    }
    Ok(RunReport {
        updates: history.len() - 1,
        initial: history[0],
        final_value: *history.last().expect("at least one step"),
        reached_target: reached,
        history,
    })
}

fn optimizer(lr: f64, cfg: &TrainConfig) -> Adam {
    let mut opt = Adam::new(lr);
    opt.clip_norm = Some(cfg.clip_norm);
    opt
}

/// Residual pairs `(I′, G)` for both chains, with the stage-1 network
/// frozen.
pub fn stage2_pairs(model: &Model, degraded: &Tensor, clean: &Tensor) -> Result<(BandPair, BandPair)> {
    check_pair(degraded, clean)?;
    let initial = model.initial_bands(degraded)?;
    let truth = dwt2(&pad_even(clean)?.0)?;
    Ok((
        BandPair::new(initial.ll.clone(), truth.ll.clone())?,
        BandPair::new(initial.hf_stack(), truth.hf_stack())?,
    ))
}

/// Noise-prediction training of one denoiser on one residual pair.
/// The initial and final values are means over the first and the last
/// `window` steps.
pub fn train_denoiser(
    den: &mut UNetDenoiser,
    pair: &BandPair,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut log: impl FnMut(usize, f64),
) -> Result<RunReport> {
    let mut opt = optimizer(cfg.stage2_lr, cfg);
    let window = cfg.window.min(cfg.stage2_steps.max(1));
    let mut history = Vec::new();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    for step in 0..cfg.stage2_steps.max(1) {
        let loss = diffusion::train_step(pair, den, &mut opt, sched, rng, cfg.noise_norm)?;
        history.push(loss);
        log(step, loss);
        if history.len() >= 2 * window {
            let initial = mean(&history[..window]);
            if cfg.early_stop && mean(&history[history.len() - window..]) < cfg.stage2_target * initial {
                break;
            }
        }
    }
    let initial = mean(&history[..window]);
    let final_value = mean(&history[history.len() - window..]);
    Ok(RunReport {
        updates: history.len(),
        initial,
        final_value,
        reached_target: final_value < cfg.stage2_target * initial,
        history,
    })
}

pub struct Stage2Report {
    pub ldfb: RunReport,
    pub hdfb: RunReport,
}

/// Trains fresh low- and high-frequency denoisers on the residuals left
/// by the (frozen) stage-1 network.
pub fn train_stage2(
    model: &mut Model,
    degraded: &Tensor,
    clean: &Tensor,
    mut log: impl FnMut(&str, usize, f64),
) -> Result<Stage2Report> {
    let (ll_pair, hf_pair) = stage2_pairs(model, degraded, clean)?;
    model.init_denoisers()?;
    let sched = model.schedule()?;
    let cfg = model.config.train.clone();
    let rng = Rng::new(cfg.seed);
    let (Some(ldfb), Some(hdfb)) = (&mut model.ldfb, &mut model.hdfb) else {
        unreachable!("denoisers were just created")
    };
    let l = train_denoiser(ldfb, &ll_pair, &sched, &cfg, &mut rng.fork(stream::LDFB_TRAIN), |s, v| log("ldfb", s, v))?;
    let h = train_denoiser(hdfb, &hf_pair, &sched, &cfg, &mut rng.fork(stream::HDFB_TRAIN), |s, v| log("hdfb", s, v))?;
    Ok(Stage2Report { ldfb: l, hdfb: h })
}

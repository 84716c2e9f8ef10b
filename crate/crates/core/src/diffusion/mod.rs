//! Residual denoising diffusion over wavelet subbands.
//!
//! Each chain models `x₀ = G − I′`, the gap between a ground-truth band and
//! the stage-1 estimate, conditioned on `I′`. The low-frequency chain runs
//! on ll and the high-frequency chain on the channel-stacked detail bands.

pub mod denoiser;
pub mod schedule;

pub use denoiser::{Denoiser, DenoiserConfig, ResidualOracle, StoredNoise, UNetDenoiser, ZeroResidual};
pub use schedule::{make_schedule, DiffusionSchedule, ScheduleConfig};

use crate::blocks::{Adam, Ctx};
use crate::error::{Error, Result};
use crate::losses::{loss_dm_var, NoiseNorm};
use crate::tensor::{Rng, Tape, Tensor};
use crate::wavelet::{idwt2, SubbandSet};

/// RNG stream ids for the two sampling chains.
pub const LDFB_STREAM: u64 = 1;
pub const HDFB_STREAM: u64 = 2;

/// `x_t = √ᾱ_t x₀ + √(1−ᾱ_t) ε`.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar[t];
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, "q_sample", |x, e| a * x + s * e)
}

/// Inverts `q_sample` given the noise.
pub fn predict_x0(x_t: &Tensor, eps: &Tensor, t: usize, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar[t];
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps, "predict_x0", |x, e| (x - s * e) / a)
}

/// Reverse-process mean `(x_t − β_t/√(1−ᾱ_t) · ε̂) / √α_t`.
pub fn posterior_mean(x_t: &Tensor, eps: &Tensor, t: usize, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let coef = sched.beta[t] / (1.0 - sched.alpha_bar[t]).sqrt();
    let inv = 1.0 / sched.alpha[t].sqrt();
    x_t.zip_map(eps, "p_step", |x, e| inv * (x - coef * e))
}

/// One ancestral step `x_t → x_{t−1}`. At `t = 1` no noise is added.
pub fn p_step(
    x_t: &Tensor,
    cond: &Tensor,
    t: usize,
    denoiser: &dyn Denoiser,
    sched: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<Tensor> {
    sched.check_t(t)?;
    let eps = denoiser.predict_noise(x_t, cond, t, sched)?;
    let mean = posterior_mean(x_t, &eps, t, sched)?;
    if t == 1 {
        return Ok(mean);
    }
    let sigma = sched.sigma2[t].sqrt();
    let z = Tensor::randn(mean.shape(), rng);
    mean.zip_map(&z, "p_step", |m, z| m + sigma * z)
}

/// Draws `x_T ~ N(0, I)` shaped like `cond` and runs the chain down to
/// `t = 1`, returning the residual estimate.
pub fn sample(cond: &Tensor, denoiser: &dyn Denoiser, sched: &DiffusionSchedule, rng: &mut Rng) -> Result<Tensor> {
    let mut x = Tensor::randn(cond.shape(), rng);
    for t in (1..=sched.steps()).rev() {
        x = p_step(&x, cond, t, denoiser, sched, rng)?;
    }
    Ok(x)
}

/// A stage-2 training pair: stage-1 estimate and ground truth of a band.
#[derive(Clone, Debug)]
pub struct BandPair {
    pub estimate: Tensor,
    pub truth: Tensor,
}

impl BandPair {
    pub fn new(estimate: Tensor, truth: Tensor) -> Result<Self> {
        if estimate.shape() != truth.shape() {
            return Err(Error::mismatch("band pair", estimate.shape(), truth.shape()));
        }
        Ok(Self { estimate, truth })
    }

    pub fn residual(&self) -> Tensor {
        self.truth.sub(&self.estimate).expect("shapes checked")
    }
}

/// Draws `t` uniformly from `1..=T`, then `ε`.
fn draw(pair: &BandPair, sched: &DiffusionSchedule, rng: &mut Rng) -> (usize, Tensor) {
    let t = rng.int_inclusive(1, sched.steps());
    (t, Tensor::randn(pair.truth.shape(), rng))
}

/// Noise-prediction loss of any denoiser at a random `(t, ε)`, no update.
pub fn diffusion_loss(
    pair: &BandPair,
    denoiser: &dyn Denoiser,
    sched: &DiffusionSchedule,
    rng: &mut Rng,
    norm: NoiseNorm,
) -> Result<f64> {
    let (t, eps) = draw(pair, sched, rng);
    let x_t = q_sample(&pair.residual(), t, &eps, sched)?;
    let pred = denoiser.predict_noise(&x_t, &pair.estimate, t, sched)?;
    crate::losses::loss_dm_with(&eps, &pred, norm)
}

/// One optimizer step on the noise-prediction loss; returns the loss
/// before the update.
pub fn train_step(
    pair: &BandPair,
    denoiser: &mut UNetDenoiser,
    opt: &mut Adam,
    sched: &DiffusionSchedule,
    rng: &mut Rng,
    norm: NoiseNorm,
) -> Result<f64> {
    let (t, eps) = draw(pair, sched, rng);
    let x_t = q_sample(&pair.residual(), t, &eps, sched)?;
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &denoiser.params, true);
    let pred = denoiser.forward(&ctx, ctx.input(x_t), ctx.input(pair.estimate.clone()), t, sched)?;
    let loss = loss_dm_var(ctx.input(eps), pred, norm)?;
    let value = loss.value().item()?;
    let grads = ctx.grads(&tape.backward(loss)?)?;
    opt.step(&mut denoiser.params, &grads)?;
    Ok(value)
}

/// Samples both residual chains (concurrently, on forked RNG streams) and
/// returns `idwt2(I′ + Î)`.
pub fn frdam_adjust(
    initial: &SubbandSet,
    ldfb: &dyn Denoiser,
    hdfb: &dyn Denoiser,
    sched: &DiffusionSchedule,
    rng: &Rng,
) -> Result<Tensor> {
    let hf = initial.hf_stack();
    let (mut rl, mut rh) = (rng.fork(LDFB_STREAM), rng.fork(HDFB_STREAM));
    let (ll_res, hf_res) = std::thread::scope(|s| {
        let low = s.spawn(|| sample(&initial.ll, ldfb, sched, &mut rl));
        let high = sample(&hf, hdfb, sched, &mut rh);
        (low.join().expect("low-frequency chain panicked"), high)
    });
    let ll = initial.ll.add(&ll_res?)?;
    let hf = hf.add(&hf_res?)?;
    idwt2(&SubbandSet::from_stack(ll, &hf)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_out_of_range_is_rejected() {
        let s = make_schedule(10, 1e-4, 0.02).unwrap();
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(q_sample(&x, 0, &x, &s).is_err());
        assert!(q_sample(&x, 11, &x, &s).is_err());
        let mut rng = Rng::new(0);
        assert!(p_step(&x, &x, 0, &ZeroResidual, &s, &mut rng).is_err());
    }

    #[test]
    fn last_step_is_deterministic() {
        let s = make_schedule(10, 1e-4, 0.02).unwrap();
        let mut rng = Rng::new(0);
        let x = Tensor::randn(&[2, 4, 4], &mut rng);
        let den = StoredNoise(Tensor::randn(&[2, 4, 4], &mut rng));
        let a = p_step(&x, &x, 1, &den, &s, &mut Rng::new(1)).unwrap();
        let b = p_step(&x, &x, 1, &den, &s, &mut Rng::new(2)).unwrap();
        assert_eq!(a, b);
    }
}

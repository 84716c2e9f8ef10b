//! Training objectives: high-frequency, low-frequency amplitude and
//! noise-prediction losses. All reductions are means over elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::wavelet::SubbandSet;

/// Norm used by the noise-prediction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseNorm {
    /// Mean absolute error.
    #[default]
    L1,
    /// Mean squared error.
    L2,
}

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::mismatch(op, &sa, &sb));
    }
    Ok(())
}

/// Sum over the three detail bands of the root-mean-square difference.
/// Inputs are the stacked `[3c, h, w]` layout.
pub fn loss_h_var<'t>(pred_hf: Var<'t>, gt_hf: Var<'t>) -> Result<Var<'t>> {
    same_shape("loss_h", &pred_hf, &gt_hf)?;
    let s = pred_hf.shape();
    if s.len() != 3 || s[0] % 3 != 0 {
        return Err(Error::dim("loss_h", format!("expected stacked [3c, h, w], got {s:?}")));
    }
    let c = s[0] / 3;
    let diff = pred_hf.sub(gt_hf)?;
    let mut total: Option<Var<'t>> = None;
    for band in 0..3 {
        let rmse = diff.narrow(0, band * c, c)?.square().mean().sqrt();
        total = Some(match total {
            Some(t) => t.add(rmse)?,
            None => rmse,
        });
    }
    Ok(total.expect("three bands"))
}

/// Amplitude of the unitary 2D DFT of a `[C, H, W]` input.
pub fn amplitude_var(x: Var<'_>) -> Result<Var<'_>> {
    let spec = x.dft2()?;
    let s = spec.shape();
    let inner = &s[1..];
    let re = spec.narrow(0, 0, 1)?.reshape(inner)?;
    let im = spec.narrow(0, 1, 1)?.reshape(inner)?;
    re.hypot(im)
}

/// Mean absolute difference of the Fourier amplitudes of two ll bands.
pub fn loss_a_var<'t>(pred_ll: Var<'t>, gt_ll: Var<'t>) -> Result<Var<'t>> {
    same_shape("loss_a", &pred_ll, &gt_ll)?;
    Ok(amplitude_var(pred_ll)?.sub(amplitude_var(gt_ll)?)?.abs().mean())
}

pub fn loss_dm_var<'t>(eps_true: Var<'t>, eps_pred: Var<'t>, norm: NoiseNorm) -> Result<Var<'t>> {
    same_shape("loss_dm", &eps_true, &eps_pred)?;
    let d = eps_true.sub(eps_pred)?;
    Ok(match norm {
        NoiseNorm::L1 => d.abs().mean(),
        NoiseNorm::L2 => d.square().mean(),
    })
}

fn eval2(a: &Tensor, b: &Tensor, f: impl for<'t> Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>) -> Result<f64> {
    let tape = Tape::new();
    let loss = f(tape.constant(a.clone()), tape.constant(b.clone()))?;
    loss.value().item()
}

pub fn loss_h(pred: &SubbandSet, gt: &SubbandSet) -> Result<f64> {
    eval2(&pred.hf_stack(), &gt.hf_stack(), loss_h_var)
}

pub fn loss_a(pred_ll: &Tensor, gt_ll: &Tensor) -> Result<f64> {
    eval2(pred_ll, gt_ll, loss_a_var)
}

pub fn loss_dm(eps_true: &Tensor, eps_pred: &Tensor) -> Result<f64> {
    loss_dm_with(eps_true, eps_pred, NoiseNorm::L1)
}

pub fn loss_dm_with(eps_true: &Tensor, eps_pred: &Tensor, norm: NoiseNorm) -> Result<f64> {
    eval2(eps_true, eps_pred, |a, b| loss_dm_var(a, b, norm))
}

/// Weights of the stage-1 objective `w_h·L_h + w_a·L_a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Weights {
    pub high: f64,
    pub amplitude: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Self {
            high: 1.0,
            amplitude: 1.0,
        }
    }
}

pub fn stage1_loss_var<'t>(
    pred_ll: Var<'t>,
    pred_hf: Var<'t>,
    gt_ll: Var<'t>,
    gt_hf: Var<'t>,
    weights: Stage1Weights,
) -> Result<Var<'t>> {
    let h = loss_h_var(pred_hf, gt_hf)?.scale(weights.high);
    let a = loss_a_var(pred_ll, gt_ll)?.scale(weights.amplitude);
    h.add(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use crate::wavelet::dwt2;

    #[test]
    fn zero_for_identical_inputs() {
        let mut rng = Rng::new(1);
        let s = dwt2(&Tensor::randn(&[3, 8, 8], &mut rng)).unwrap();
        assert_eq!(loss_h(&s, &s).unwrap(), 0.0);
        assert_eq!(loss_a(&s.ll, &s.ll).unwrap(), 0.0);
        assert_eq!(loss_dm(&s.ll, &s.ll).unwrap(), 0.0);
    }

    #[test]
    fn loss_h_ignores_ll() {
        let mut rng = Rng::new(2);
        let s = dwt2(&Tensor::randn(&[1, 6, 6], &mut rng)).unwrap();
        let mut t = s.clone();
        t.ll = t.ll.map(|v| v + 3.0);
        assert_eq!(loss_h(&s, &t).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::zeros(&[1, 4, 4]);
        let b = Tensor::zeros(&[1, 4, 2]);
        assert!(loss_a(&a, &b).is_err());
        assert!(loss_dm(&a, &b).is_err());
    }

    #[test]
    fn l2_switch_is_mean_square() {
        let a = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        assert_eq!(loss_dm_with(&a, &b, NoiseNorm::L2).unwrap(), 2.5);
        assert_eq!(loss_dm(&a, &b).unwrap(), 1.5);
    }
}

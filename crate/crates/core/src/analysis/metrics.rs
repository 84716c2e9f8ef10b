use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR / SSIM for one image pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    /// Decibels; `f64::INFINITY` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(x: &Tensor, reference: &Tensor) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(x, reference)?,
            ssim: ssim(x, reference)?,
        })
    }
}

pub fn mse(x: &Tensor, reference: &Tensor) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::mismatch("mse", x.shape(), reference.shape()));
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.numel() as f64)
}

/// `10 · log10(1 / MSE)` for signals with peak value 1.
pub fn psnr(x: &Tensor, reference: &Tensor) -> Result<f64> {
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * m.log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5) without padding,
/// `C1 = 0.01²`, `C2 = 0.03²` for unit dynamic range; the SSIM map is
/// averaged per channel and the channel means are averaged.
pub fn ssim(x: &Tensor, reference: &Tensor) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::mismatch("ssim", x.shape(), reference.shape()));
    }
    let (c, h, w) = x.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let a = &x.data()[ch * h * w..(ch + 1) * h * w];
        let b = &reference.data()[ch * h * w..(ch + 1) * h * w];
        let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| p * q).collect();
        let aa: Vec<f64> = a.iter().map(|p| p * p).collect();
        let bb: Vec<f64> = b.iter().map(|p| p * p).collect();
        let mu_a = filter_valid(a, h, w, &k);
        let mu_b = filter_valid(b, h, w, &k);
        let e_aa = filter_valid(&aa, h, w, &k);
        let e_bb = filter_valid(&bb, h, w, &k);
        let e_ab = filter_valid(&ab, h, w, &k);
        let n = mu_a.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += acc / n as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn psnr_direct_cases() {
        let a = Tensor::zeros(&[1, 2, 2]);
        let b = Tensor::full(&[1, 2, 2], 0.1); // MSE 0.01
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &Tensor::zeros(&[1, 2, 3])).is_err());
    }

    #[test]
    fn ssim_identity_and_size_guard() {
        let x = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut Rng::new(1));
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Tensor::zeros(&[1, 10, 20]), &Tensor::zeros(&[1, 10, 20])).is_err());
    }

    #[test]
    fn window_is_normalized() {
        let k = gaussian_window();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}

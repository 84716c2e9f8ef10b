//! Unitary 2D DFT with amplitude/phase factorization.
//!
//! `X(u,v) = 1/√(HW) Σ_h Σ_w x(h,w) e^{-j2π(hu/H + wv/W)}`, applied to every
//! channel of a `[C, H, W]` tensor. The inverse uses the same `1/√(HW)`
//! factor, so the pair is unitary and `Σx² = ΣA²`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::Tensor;

/// Largest imaginary residue tolerated when returning to image space.
pub const IMAG_RESIDUE_TOL: f64 = 1e-4;

/// Polar form of a per-channel 2D spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// Nonnegative magnitudes, `[C, H, W]`.
    pub amplitude: Tensor,
    /// Angles in `(-π, π]`, `[C, H, W]`; zero where the amplitude is zero.
    pub phase: Tensor,
}

impl Spectrum {
    pub fn shape(&self) -> &[usize] {
        self.amplitude.shape()
    }

    fn to_complex(&self) -> Vec<Complex64> {
        self.amplitude
            .data()
            .iter()
            .zip(self.phase.data())
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect()
    }
}

/// Phase of a complex value in `(-π, π]`, 0 for 0.
pub fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let p = z.im.atan2(z.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

/// Complex spectrum of a real `[C, H, W]` tensor.
pub fn fft2_complex(x: &Tensor) -> Result<Vec<Complex64>> {
    let (c, h, w) = x.chw()?;
    Ok(kernels::real_fft2(x.data(), c, h, w))
}

pub fn fft2(x: &Tensor) -> Result<Spectrum> {
    let spec = fft2_complex(x)?;
    let shape = x.shape().to_vec();
    Ok(Spectrum {
        amplitude: Tensor::from_raw(shape.clone(), spec.iter().map(|z| z.norm()).collect()),
        phase: Tensor::from_raw(shape, spec.iter().map(|&z| phase_of(z)).collect()),
    })
}

/// Inverse transform. Fails with [`Error::SymmetryViolation`] when the
/// result has an imaginary part above [`IMAG_RESIDUE_TOL`], i.e. when the
/// spectrum is not (numerically) conjugate-symmetric.
pub fn ifft2(s: &Spectrum) -> Result<Tensor> {
    if s.amplitude.shape() != s.phase.shape() {
        return Err(Error::mismatch("ifft2", s.amplitude.shape(), s.phase.shape()));
    }
    let (c, h, w) = s.amplitude.chw()?;
    if let Some(&a) = s.amplitude.data().iter().find(|&&a| a < 0.0) {
        return Err(Error::InvalidArgument(format!("negative amplitude {a}")));
    }
    let mut buf = s.to_complex();
    kernels::fft2_planes(&mut buf, c, h, w, true);
    let max_imag = buf.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    if max_imag >= IMAG_RESIDUE_TOL {
        return Err(Error::SymmetryViolation { max_imag });
    }
    Ok(Tensor::from_raw(vec![c, h, w], buf.iter().map(|z| z.re).collect()))
}

/// Image with the amplitude of `amp_from` and the phase of `phase_from`.
pub fn recombine(amp_from: &Spectrum, phase_from: &Spectrum) -> Result<Tensor> {
    if amp_from.shape() != phase_from.shape() {
        return Err(Error::mismatch("recombine", amp_from.shape(), phase_from.shape()));
    }
    ifft2(&Spectrum {
        amplitude: amp_from.amplitude.clone(),
        phase: phase_from.phase.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn constant_2x2() {
        let s = fft2(&Tensor::ones(&[1, 2, 2])).unwrap();
        assert_eq!(s.amplitude.data(), &[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.phase.data(), &[0.0; 4]);
    }

    #[test]
    fn delta_2x2() {
        let s = fft2(&Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        for (&a, &p) in s.amplitude.data().iter().zip(s.phase.data()) {
            assert!((a - 0.5).abs() < 1e-15);
            assert_eq!(p, 0.0);
        }
    }

    #[test]
    fn zero_spectrum_gives_zero_image() {
        let z = Tensor::zeros(&[2, 4, 4]);
        let s = Spectrum { amplitude: z.clone(), phase: z.clone() };
        assert_eq!(ifft2(&s).unwrap(), z);
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut amp = Tensor::zeros(&[1, 4, 4]);
        amp.data_mut()[1] = 1.0; // bin (0,1) without its partner (0,3)
        let s = Spectrum { amplitude: amp, phase: Tensor::zeros(&[1, 4, 4]) };
        assert!(matches!(ifft2(&s), Err(Error::SymmetryViolation { .. })));
    }

    #[test]
    fn conjugate_symmetry_of_real_input() {
        let x = Tensor::randn(&[2, 6, 4], &mut Rng::new(9));
        let s = fft2(&x).unwrap();
        let (c, h, w) = (2, 6, 4);
        for ch in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let i = (ch * h + u) * w + v;
                    let j = (ch * h + (h - u) % h) * w + (w - v) % w;
                    assert!((s.amplitude.data()[i] - s.amplitude.data()[j]).abs() < 1e-12);
                    let (p, q) = (s.phase.data()[i], s.phase.data()[j]);
                    // P(u,v) = -P(-u,-v) modulo the (-π, π] wrap at π itself.
                    let ok = (p + q).abs() < 1e-9 || ((p - PI).abs() < 1e-9 && (q - PI).abs() < 1e-9);
                    assert!(ok, "{p} {q}");
                }
            }
        }
    }

    #[test]
    fn phase_range() {
        assert_eq!(phase_of(Complex64::new(-1.0, -0.0)), PI);
        assert_eq!(phase_of(Complex64::new(-1.0, 0.0)), PI);
        assert_eq!(phase_of(Complex64::new(0.0, 0.0)), 0.0);
    }
}

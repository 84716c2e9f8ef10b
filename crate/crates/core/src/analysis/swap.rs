use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fourier::{fft2, recombine};
use crate::tensor::Tensor;
use crate::wavelet::{crop, dwt2, idwt2, pad_even, SubbandSet};

/// Where the amplitude exchange happens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SwapStrategy {
    /// Whole image, pixel space.
    S1,
    /// Only the LL wavelet subband.
    S2,
    /// All four wavelet subbands.
    S3,
}

impl SwapStrategy {
    pub const ALL: [SwapStrategy; 3] = [SwapStrategy::S1, SwapStrategy::S2, SwapStrategy::S3];
}

impl fmt::Display for SwapStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SwapStrategy::S1 => "s1",
            SwapStrategy::S2 => "s2",
            SwapStrategy::S3 => "s3",
        })
    }
}

impl FromStr for SwapStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(SwapStrategy::S1),
            "s2" => Ok(SwapStrategy::S2),
            "s3" => Ok(SwapStrategy::S3),
            other => Err(Error::InvalidArgument(format!("unknown swap strategy `{other}`"))),
        }
    }
}

/// `(amplitude of b + phase of a, amplitude of a + phase of b)`.
fn swap_plane(a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let (sa, sb) = (fft2(a)?, fft2(b)?);
    Ok((recombine(&sb, &sa)?, recombine(&sa, &sb)?))
}

/// Exchanges Fourier amplitudes between `a` and `b`. The first output keeps
/// the phase of `a` and takes the amplitude of `b`; the second is the
/// mirror image. Odd extents are reflect-padded for the wavelet strategies
/// and cropped back. No clamping is applied.
pub fn swap(a: &Tensor, b: &Tensor, strategy: SwapStrategy) -> Result<(Tensor, Tensor)> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch("swap", a.shape(), b.shape()));
    }
    a.chw()?;
    if strategy == SwapStrategy::S1 {
        return swap_plane(a, b);
    }
    let (pa, (h, w)) = pad_even(a)?;
    let (pb, _) = pad_even(b)?;
    let (da, db) = (dwt2(&pa)?, dwt2(&pb)?);
    let (ll_a, ll_b) = swap_plane(&da.ll, &db.ll)?;
    let (out_a, out_b) = match strategy {
        SwapStrategy::S2 => (
            SubbandSet::new(ll_a, da.lh, da.hl, da.hh)?,
            SubbandSet::new(ll_b, db.lh, db.hl, db.hh)?,
        ),
        _ => {
            let (lh_a, lh_b) = swap_plane(&da.lh, &db.lh)?;
            let (hl_a, hl_b) = swap_plane(&da.hl, &db.hl)?;
            let (hh_a, hh_b) = swap_plane(&da.hh, &db.hh)?;
            (
                SubbandSet::new(ll_a, lh_a, hl_a, hh_a)?,
                SubbandSet::new(ll_b, lh_b, hl_b, hh_b)?,
            )
        }
    };
    Ok((crop(&idwt2(&out_a)?, h, w)?, crop(&idwt2(&out_b)?, h, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn parse_strategy() {
        assert_eq!("S3".parse::<SwapStrategy>().unwrap(), SwapStrategy::S3);
        assert!("s4".parse::<SwapStrategy>().is_err());
        assert_eq!(SwapStrategy::S2.to_string(), "s2");
    }

    #[test]
    fn self_swap_identity_odd_size() {
        let x = Tensor::rand_uniform(&[3, 7, 5], 0.0, 1.0, &mut Rng::new(4));
        for s in SwapStrategy::ALL {
            let (p, q) = swap(&x, &x, s).unwrap();
            assert!(p.max_abs_diff(&x).unwrap() < 1e-10, "{s}");
            assert!(q.max_abs_diff(&x).unwrap() < 1e-10, "{s}");
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(swap(&Tensor::zeros(&[1, 4, 4]), &Tensor::zeros(&[1, 4, 6]), SwapStrategy::S1).is_err());
    }
}

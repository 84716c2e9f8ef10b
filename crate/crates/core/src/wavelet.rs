//! Single-level orthonormal 2D Haar transform.
//!
//! For every 2×2 block `[[a, b], [c, d]]` of a channel:
//!
//! ```text
//! ll = (a + b + c + d) / 2      hl = (a - b + c - d) / 2
//! lh = (a + b - c - d) / 2      hh = (a - b - c + d) / 2
//! ```
//!
//! i.e. separable filtering with `[1, 1]/√2` and `[1, -1]/√2` followed by
//! stride-2 decimation. `lh` carries row-direction differences (vertical
//! detail), `hl` column-direction differences (horizontal detail).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four half-resolution subbands of a `[C, H, W]` image.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

pub const BAND_NAMES: [&str; 4] = ["ll", "lh", "hl", "hh"];

impl SubbandSet {
    pub fn new(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> Result<Self> {
        for t in [&lh, &hl, &hh] {
            if t.shape() != ll.shape() {
                return Err(Error::mismatch("subbands", ll.shape(), t.shape()));
            }
        }
        ll.chw()?;
        Ok(Self { ll, lh, hl, hh })
    }

    pub fn bands(&self) -> [&Tensor; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    /// The detail bands stacked along channels: `[lh; hl; hh]`, `[3C, h, w]`.
    pub fn hf_stack(&self) -> Tensor {
        Tensor::cat0(&[&self.lh, &self.hl, &self.hh]).expect("subband shapes agree")
    }

    /// Inverse of [`SubbandSet::hf_stack`].
    pub fn from_stack(ll: Tensor, hf: &Tensor) -> Result<Self> {
        let (c, _, _) = ll.chw()?;
        if hf.shape()[0] != 3 * c {
            return Err(Error::mismatch("from_stack", ll.shape(), hf.shape()));
        }
        Self::new(ll, hf.narrow0(0, c)?, hf.narrow0(c, c)?, hf.narrow0(2 * c, c)?)
    }

    pub fn map(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Self::new(f(&self.ll)?, f(&self.lh)?, f(&self.hl)?, f(&self.hh)?)
    }

    pub fn zip(&self, other: &SubbandSet, mut f: impl FnMut(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Self> {
        Self::new(
            f(&self.ll, &other.ll)?,
            f(&self.lh, &other.lh)?,
            f(&self.hl, &other.hl)?,
            f(&self.hh, &other.hh)?,
        )
    }

    pub fn energy(&self) -> f64 {
        self.bands().iter().map(|b| b.sum_sq()).sum()
    }
}

/// Forward transform of an even-sized `[C, H, W]` image.
pub fn dwt2(img: &Tensor) -> Result<SubbandSet> {
    let (c, h, w) = img.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("dwt2", format!("extents {h}x{w} must be even; pad first")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let n = c * h2 * w2;
    let (mut ll, mut lh, mut hl, mut hh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let x = img.data();
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let top = (ch * h + 2 * i) * w + 2 * j;
                let bot = top + w;
                let (a, b, cc, d) = (x[top], x[top + 1], x[bot], x[bot + 1]);
                let o = (ch * h2 + i) * w2 + j;
                ll[o] = (a + b + cc + d) * 0.5;
                hl[o] = (a - b + cc - d) * 0.5;
                lh[o] = (a + b - cc - d) * 0.5;
                hh[o] = (a - b - cc + d) * 0.5;
            }
        }
    }
    let shape = [c, h2, w2];
    Ok(SubbandSet {
        ll: Tensor::from_raw(shape.to_vec(), ll),
        lh: Tensor::from_raw(shape.to_vec(), lh),
        hl: Tensor::from_raw(shape.to_vec(), hl),
        hh: Tensor::from_raw(shape.to_vec(), hh),
    })
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(s: &SubbandSet) -> Result<Tensor> {
    let (c, h2, w2) = s.ll.chw()?;
    for t in [&s.lh, &s.hl, &s.hh] {
        if t.shape() != s.ll.shape() {
            return Err(Error::mismatch("idwt2", s.ll.shape(), t.shape()));
        }
    }
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = vec![0.0; c * h * w];
    let (ll, lh, hl, hh) = (s.ll.data(), s.lh.data(), s.hl.data(), s.hh.data());
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let o = (ch * h2 + i) * w2 + j;
                let (l, v, hz, d) = (ll[o], lh[o], hl[o], hh[o]);
                let top = (ch * h + 2 * i) * w + 2 * j;
                let bot = top + w;
                out[top] = (l + hz + v + d) * 0.5;
                out[top + 1] = (l - hz + v - d) * 0.5;
                out[bot] = (l + hz - v - d) * 0.5;
                out[bot + 1] = (l - hz - v + d) * 0.5;
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, h, w], out))
}

/// Reflect-pads odd extents by one row/column (mirroring about the last
/// sample; a single-sample extent is replicated). Returns the padded image
/// and the original `(H, W)` for [`crop`].
pub fn pad_even(img: &Tensor) -> Result<(Tensor, (usize, usize))> {
    let (c, h, w) = img.chw()?;
    let (ph, pw) = (h + h % 2, w + w % 2);
    if (ph, pw) == (h, w) {
        return Ok((img.clone(), (h, w)));
    }
    let mirror = |i: usize, n: usize| if i < n { i } else if n >= 2 { n - 2 } else { 0 };
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let sy = mirror(y, h);
            for x in 0..pw {
                out.push(img.at3(ch, sy, mirror(x, w)));
            }
        }
    }
    Ok((Tensor::from_raw(vec![c, ph, pw], out), (h, w)))
}

/// Top-left `h`×`w` window of a `[C, H, W]` image.
pub fn crop(img: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = img.chw()?;
    if h > ih || w > iw || h == 0 || w == 0 {
        return Err(Error::dim("crop", format!("{h}x{w} from {ih}x{iw}")));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let base = (ch * ih + y) * iw;
            out.extend_from_slice(&img.data()[base..base + w]);
        }
    }
    Ok(Tensor::from_raw(vec![c, h, w], out))
}

/// Grows `img` to `hp × wp` by replicating its last row and column.
pub fn pad_edge(img: &Tensor, hp: usize, wp: usize) -> Result<Tensor> {
    let (c, h, w) = img.chw()?;
    if hp < h || wp < w {
        return Err(Error::dim("pad_edge", format!("{h}x{w} to {hp}x{wp}")));
    }
    if (h, w) == (hp, wp) {
        return Ok(img.clone());
    }
    Ok(Tensor::from_fn(&[c, hp, wp], |i| {
        let (ch, r) = (i / (hp * wp), i % (hp * wp));
        img.at3(ch, (r / wp).min(h - 1), (r % wp).min(w - 1))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    fn img(vals: &[f64]) -> Tensor {
        Tensor::new(&[1, 2, 2], vals.to_vec()).unwrap()
    }

    #[test]
    fn constant_block_has_no_detail() {
        let s = dwt2(&img(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert_eq!(s.ll.data(), &[2.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn delta_matches_filter_matrix_oracle() {
        // Oracle: apply L = [1,1]/√2, H = [1,-1]/√2 along rows then columns
        // as explicit 2×2 matrix products.
        let x = [[1.0, 0.0], [0.0, 0.0]];
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let f = [[r, r], [r, -r]]; // rows: low-pass, high-pass
        let mut y = [[0.0; 2]; 2];
        for p in 0..2 {
            for q in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        y[p][q] += f[p][i] * x[i][j] * f[q][j];
                    }
                }
            }
        }
        // y[row filter][column filter]: ll = y[0][0], lh = y[1][0] (row high-pass),
        // hl = y[0][1], hh = y[1][1].
        let s = dwt2(&img(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        for (band, expect) in [(&s.ll, y[0][0]), (&s.lh, y[1][0]), (&s.hl, y[0][1]), (&s.hh, y[1][1])] {
            assert!((band.data()[0] - expect).abs() < 1e-15);
            assert!((band.data()[0] - 0.5).abs() < 1e-15);
        }
        // orientation on a non-symmetric block
        let s = dwt2(&img(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.lh.data(), &[-2.0]);
        assert_eq!(s.hl.data(), &[-1.0]);
    }

    #[test]
    fn odd_extent_is_rejected() {
        assert!(matches!(dwt2(&Tensor::zeros(&[1, 3, 4])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_subbands_give_zero_image() {
        let z = Tensor::zeros(&[2, 3, 5]);
        let s = SubbandSet::new(z.clone(), z.clone(), z.clone(), z).unwrap();
        assert_eq!(idwt2(&s).unwrap(), Tensor::zeros(&[2, 6, 10]));
    }

    #[test]
    fn pad_then_crop() {
        let x = Tensor::from_fn(&[1, 3, 3], |i| i as f64);
        let (p, (h, w)) = pad_even(&x).unwrap();
        assert_eq!(p.shape(), &[1, 4, 4]);
        // reflected row 3 equals row 1
        assert_eq!(p.at3(0, 3, 0), x.at3(0, 1, 0));
        assert_eq!(p.at3(0, 0, 3), x.at3(0, 0, 1));
        assert_eq!(crop(&p, h, w).unwrap(), x);
        let even = Tensor::ones(&[1, 2, 4]);
        assert_eq!(pad_even(&even).unwrap().0, even);
    }

    #[test]
    fn hf_stack_round_trip() {
        let x = Tensor::randn(&[3, 4, 6], &mut Rng::new(5));
        let s = dwt2(&x).unwrap();
        let back = SubbandSet::from_stack(s.ll.clone(), &s.hf_stack()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn perfect_reconstruction_and_energy(c in 1usize..4, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
            let x = Tensor::randn(&[c, 2 * h, 2 * w], &mut Rng::new(seed));
            let s = dwt2(&x).unwrap();
            prop_assert!(idwt2(&s).unwrap().max_abs_diff(&x).unwrap() < 1e-12);
            prop_assert!((s.energy() - x.sum_sq()).abs() <= 1e-12 * x.sum_sq().max(1.0));
            prop_assert!(dwt2(&idwt2(&s).unwrap()).unwrap().ll.max_abs_diff(&s.ll).unwrap() < 1e-12);
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = Rng::new(seed);
            let x = Tensor::randn(&[2, 4, 6], &mut rng);
            let y = Tensor::randn(&[2, 4, 6], &mut rng);
            let lhs = dwt2(&x.scale(a).add(&y.scale(b)).unwrap()).unwrap();
            let (sx, sy) = (dwt2(&x).unwrap(), dwt2(&y).unwrap());
            let rhs = sx.zip(&sy, |p, q| p.scale(a).add(&q.scale(b))).unwrap();
            for (l, r) in lhs.bands().iter().zip(rhs.bands()) {
                prop_assert!(l.max_abs_diff(r).unwrap() < 1e-12);
            }
        }
    }
}

//! Raw numeric kernels over flat buffers. Shapes are validated by callers.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Strided matrix view for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha * a·b + beta * c`, with `c` row-major `[a.rows, b.cols]`.
pub(crate) fn gemm(alpha: f64, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner extent");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "gemm output length");
    assert!(span(a) <= a.data.len() && span(b) <= b.data.len(), "gemm operand bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: operand extents were checked against the backing slices above
    // and `c` is an exclusively borrowed row-major m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn span(m: Mat<'_>) -> usize {
    if m.rows == 0 || m.cols == 0 {
        return 0;
    }
    ((m.rows - 1) as isize * m.rs + (m.cols - 1) as isize * m.cs) as usize + 1
}

/// Geometry of a dense 2D convolution over a `[C, H, W]` input.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.col_cols();
    let mut cols = vec![0.0; g.col_rows() * n];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.col_cols();
    let mut x = vec![0.0; g.cin * g.h * g.w];
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Depthwise "same" convolution, stride 1, odd square kernel `k`.
pub(crate) fn depthwise_forward(x: &[f64], w: &[f64], c: usize, h: usize, wd: usize, k: usize) -> Vec<f64> {
    let p = (k / 2) as isize;
    let mut out = vec![0.0; c * h * wd];
    for ch in 0..c {
        let xp = &x[ch * h * wd..(ch + 1) * h * wd];
        let kern = &w[ch * k * k..(ch + 1) * k * k];
        let op = &mut out[ch * h * wd..(ch + 1) * h * wd];
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dx = kx as isize - p;
                let kv = kern[ky * k + kx];
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (wd as isize - dx).min(wd as isize).max(0) as usize;
                for y in y0..y1 {
                    let iy = (y as isize + dy) as usize;
                    let orow = &mut op[y * wd..(y + 1) * wd];
                    let irow = &xp[iy * wd..(iy + 1) * wd];
                    for xx in x0..x1 {
                        orow[xx] += kv * irow[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`depthwise_forward`] with respect to input and kernel.
pub(crate) fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    c: usize,
    h: usize,
    wd: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let p = (k / 2) as isize;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for ch in 0..c {
        let xp = &x[ch * h * wd..(ch + 1) * h * wd];
        let gp = &g[ch * h * wd..(ch + 1) * h * wd];
        let dxp = &mut dx[ch * h * wd..(ch + 1) * h * wd];
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dxo = kx as isize - p;
                let kv = w[ch * k * k + ky * k + kx];
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                let x0 = (-dxo).max(0) as usize;
                let x1 = (wd as isize - dxo).min(wd as isize).max(0) as usize;
                let mut acc = 0.0;
                for y in y0..y1 {
                    let iy = (y as isize + dy) as usize;
                    for xx in x0..x1 {
                        let ix = (xx as isize + dxo) as usize;
                        let gv = gp[y * wd + xx];
                        acc += gv * xp[iy * wd + ix];
                        dxp[iy * wd + ix] += gv * kv;
                    }
                }
                dw[ch * k * k + ky * k + kx] += acc;
            }
        }
    }
    (dx, dw)
}

/// Splits a shape around `axis` into `(outer, extent, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                y[base + j * inner] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for j in 0..len {
                y[base + j * inner] *= inv;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &[f64], g: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len).map(|j| y[base + j * inner] * g[base + j * inner]).sum();
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    dx
}

/// In-place row softmax over a row-major `[rows, cols]` buffer.
pub(crate) fn softmax_rows(s: &mut [f64], cols: usize) {
    for row in s.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Unitary 2D DFT applied independently to each of `c` planes of `h`×`w`
/// complex values. Forward uses `e^{-j2π(..)}`, both directions scale by
/// `1/√(hw)`.
pub(crate) fn fft2_planes(data: &mut [Complex64], c: usize, h: usize, w: usize, inverse: bool) {
    let row_fft = plan(w, inverse);
    let col_fft = plan(h, inverse);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut column = vec![Complex64::default(); h];
    for plane in data.chunks_exact_mut(h * w).take(c) {
        row_fft.process(plane);
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col_fft.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y] * scale;
            }
        }
    }
}

/// True when bin `(u, v)` is its own conjugate partner, i.e. the DFT of a
/// real plane is purely real there.
#[inline]
pub(crate) fn self_conjugate(u: usize, v: usize, h: usize, w: usize) -> bool {
    (2 * u) % h == 0 && (2 * v) % w == 0
}

/// Unitary DFT of real planes, with the imaginary part forced to `+0.0` on
/// self-conjugate bins where it is analytically zero.
pub(crate) fn real_fft2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_planes(&mut buf, c, h, w, false);
    for plane in buf.chunks_exact_mut(h * w) {
        for u in 0..h {
            for v in 0..w {
                if self_conjugate(u, v, h, w) {
                    plane[u * w + v].im = 0.0;
                }
            }
        }
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposed_views() {
        // a = [[1,2,3],[4,5,6]], b = a^T
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = vec![0.0; 4];
        gemm(1.0, Mat::row_major(&a, 2, 3), Mat::row_major(&a, 2, 3).t(), 0.0, &mut c);
        assert_eq!(c, vec![14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom {
            cin: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
            ho: 3,
            wo: 3,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

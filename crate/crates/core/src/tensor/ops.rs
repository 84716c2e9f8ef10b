//! Differentiable operations on [`Var`].

use std::rc::Rc;

use rustfft::num_complex::Complex64;

use super::kernels::{self, ConvGeom, Mat};
use super::{Tensor, Var};
use crate::error::{Error, Result};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let n = out.len();
    let offset = n - inp.len();
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..inp.len()).rev() {
        strides[i + offset] = if inp[i] == 1 { 0 } else { s };
        s *= inp[i];
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; n];
    let mut cur = 0usize;
    for _ in 0..numel {
        map.push(cur);
        for d in (0..n).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

fn scatter_sum(values: impl Iterator<Item = f64>, map: Option<&[usize]>, shape: &[usize]) -> Tensor {
    match map {
        None => Tensor::from_raw(shape.to_vec(), values.collect()),
        Some(map) => {
            let mut out = Tensor::zeros(shape);
            let d = out.data_mut();
            for (v, &i) in values.zip(map) {
                d[i] += v;
            }
            out
        }
    }
}

impl<'t> Var<'t> {
    fn unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let yc = y.clone();
        self.tape.op(y, &[self], move |g, _| {
            let data = x
                .data()
                .iter()
                .zip(yc.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::from_raw(x.shape().to_vec(), data))]
        })
    }

    /// Elementwise binary op with numpy-style trailing-axis broadcasting.
    /// `df(a, b)` returns the partial derivatives `(∂/∂a, ∂/∂b)`.
    fn binary(
        self,
        other: Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        df: impl Fn(f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out_shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::mismatch(op, a.shape(), b.shape()))?;
        let map_a = (a.shape() != out_shape.as_slice()).then(|| broadcast_map(&out_shape, a.shape()));
        let map_b = (b.shape() != out_shape.as_slice()).then(|| broadcast_map(&out_shape, b.shape()));
        let numel: usize = out_shape.iter().product();
        let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
        let data = (0..numel)
            .map(|i| f(a.data()[ia(i)], b.data()[ib(i)]))
            .collect();
        let value = Tensor::from_raw(out_shape, data);
        Ok(self.tape.op(value, &[self, other], move |g, need| {
            let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
            let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
            let partials: Vec<(f64, f64)> = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, &gv)| {
                    let (da, db) = df(a.data()[ia(i)], b.data()[ib(i)]);
                    (gv * da, gv * db)
                })
                .collect();
            let ga = need[0].then(|| {
                scatter_sum(partials.iter().map(|p| p.0), map_a.as_deref(), a.shape())
            });
            let gb = need[1].then(|| {
                scatter_sum(partials.iter().map(|p| p.1), map_b.as_deref(), b.shape())
            });
            vec![ga, gb]
        }))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    /// `sqrt(self² + other²)`; the gradient at the origin is taken as zero.
    pub fn hypot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "hypot", f64::hypot, |a, b| {
            let r = a.hypot(b);
            if r == 0.0 {
                (0.0, 0.0)
            } else {
                (a / r, b / r)
            }
        })
    }

    /// Full-quadrant arctangent of `self / x` (self is the imaginary /
    /// ordinate part). Zero gradient at the origin.
    pub fn atan2(self, x: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            x,
            "atan2",
            |y, x| if y == 0.0 && x == 0.0 { 0.0 } else { y.atan2(x) },
            |y, x| {
                let r2 = x * x + y * y;
                if r2 == 0.0 {
                    (0.0, 0.0)
                } else {
                    (x / r2, -y / r2)
                }
            },
        )
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(move |v| v + s, |_, _| 1.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    /// Square root; the gradient at zero is taken as zero.
    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| if y == 0.0 { 0.0 } else { 0.5 / y })
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|v| v * v, |x, _| 2.0 * x)
    }

    /// Absolute value with subgradient 0 at 0.
    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(f64::sin, |x, _| x.cos())
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(|v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn silu(self) -> Var<'t> {
        self.unary(
            |v| v / (1.0 + (-v).exp()),
            |x, _| {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        self.unary(
            |x| 0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh()),
            |x, _| {
                let u = K * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = K * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            move |v| if v >= 0.0 { v } else { slope * v },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape.op(Tensor::scalar(x.sum()), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over one axis.
    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::dim("sum_axis", format!("axis {axis} of rank {}", x.ndim())));
        }
        let in_shape = x.shape().to_vec();
        let (outer, len, inner) = kernels::axis_split(&in_shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = in_shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        Ok(self.tape.op(Tensor::from_raw(out_shape, out), &[self], move |g, _| {
            let mut dx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for j in 0..len {
                    dx[(o * len + j) * inner..(o * len + j + 1) * inner]
                        .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_raw(in_shape.clone(), dx))]
        }))
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::dim("mean_axis", format!("axis {axis} of rank {}", shape.len())));
        }
        let n = shape[axis] as f64;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.tape.op(y, &[self], move |g, _| {
            vec![Some(Tensor::from_raw(in_shape.clone(), g.data().to_vec()))]
        }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
            return Err(Error::dim(
                "narrow",
                format!("axis {axis} range {start}..{} of {:?}", start + len, x.shape()),
            ));
        }
        let in_shape = x.shape().to_vec();
        let (outer, ext, inner) = kernels::axis_split(&in_shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = in_shape.clone();
        out_shape[axis] = len;
        Ok(self.tape.op(Tensor::from_raw(out_shape, data), &[self], move |g, _| {
            let mut dx = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                let base = (o * ext + start) * inner;
                dx[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_raw(in_shape.clone(), dx))]
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn cat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::dim("cat", "no inputs"))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let s0 = values[0].shape().to_vec();
        if axis >= s0.len() {
            return Err(Error::dim("cat", format!("axis {axis} of rank {}", s0.len())));
        }
        for v in &values {
            let s = v.shape();
            if s.len() != s0.len() || (0..s.len()).any(|d| d != axis && s[d] != s0[d]) {
                return Err(Error::mismatch("cat", &s0, s));
            }
        }
        let exts: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = exts.iter().sum();
        let (outer, _, inner) = kernels::axis_split(&s0, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&exts) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_shape = s0.clone();
        out_shape[axis] = total;
        Ok(tape.op(Tensor::from_raw(out_shape, data), parts, move |g, need| {
            let mut offsets = Vec::with_capacity(exts.len());
            let mut acc = 0;
            for &e in &exts {
                offsets.push(acc);
                acc += e;
            }
            exts.iter()
                .zip(&offsets)
                .zip(&values)
                .zip(need)
                .map(|(((&e, &off), v), &n)| {
                    n.then(|| {
                        let mut d = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            let base = (o * total + off) * inner;
                            d.extend_from_slice(&g.data()[base..base + e * inner]);
                        }
                        Tensor::from_raw(v.shape().to_vec(), d)
                    })
                })
                .collect()
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(self) -> Result<Var<'t>> {
        let x = self.value();
        let nd = x.ndim();
        if nd < 2 {
            return Err(Error::dim("transpose", "rank < 2"));
        }
        let (r, c) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let batch = x.numel() / (r * c);
        let transpose = move |src: &[f64]| {
            let mut out = vec![0.0; src.len()];
            for b in 0..batch {
                for i in 0..r {
                    for j in 0..c {
                        out[b * r * c + j * r + i] = src[b * r * c + i * c + j];
                    }
                }
            }
            out
        };
        let mut shape = x.shape().to_vec();
        shape.swap(nd - 2, nd - 1);
        let in_shape = x.shape().to_vec();
        let y = Tensor::from_raw(shape, transpose(x.data()));
        Ok(self.tape.op(y, &[self], move |g, _| {
            // g is [.., c, r]; transposing it back swaps the roles of r and c.
            let mut out = vec![0.0; g.numel()];
            for b in 0..batch {
                for j in 0..c {
                    for i in 0..r {
                        out[b * r * c + i * c + j] = g.data()[b * r * c + j * r + i];
                    }
                }
            }
            vec![Some(Tensor::from_raw(in_shape.clone(), out))]
        }))
    }

    /// Batched matrix product over the last two axes. Leading axes must
    /// match, or `other` may be a plain matrix shared across the batch.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim("matmul", "operands must have rank >= 2"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {sa:?} x {sb:?}"),
            ));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared_b = sb.len() == 2;
        if !shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::mismatch("matmul", &sa, &sb));
        }
        let b_off = move |i: usize| if shared_b { 0 } else { i * k * n };
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            kernels::gemm(
                1.0,
                Mat::row_major(&a.data()[i * m * k..(i + 1) * m * k], m, k),
                Mat::row_major(&b.data()[b_off(i)..b_off(i) + k * n], k, n),
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        Ok(self.tape.op(Tensor::from_raw(out_shape, out), &[self, other], move |g, need| {
            let mut ga = need[0].then(|| vec![0.0; batch * m * k]);
            let mut gb = need[1].then(|| vec![0.0; b.numel()]);
            for i in 0..batch {
                let gi = Mat::row_major(&g.data()[i * m * n..(i + 1) * m * n], m, n);
                if let Some(ga) = ga.as_mut() {
                    let bi = Mat::row_major(&b.data()[b_off(i)..b_off(i) + k * n], k, n);
                    kernels::gemm(1.0, gi, bi.t(), 0.0, &mut ga[i * m * k..(i + 1) * m * k]);
                }
                if let Some(gb) = gb.as_mut() {
                    let ai = Mat::row_major(&a.data()[i * m * k..(i + 1) * m * k], m, k);
                    let o = b_off(i);
                    kernels::gemm(1.0, ai.t(), gi, 1.0, &mut gb[o..o + k * n]);
                }
            }
            vec![
                ga.map(|d| Tensor::from_raw(a.shape().to_vec(), d)),
                gb.map(|d| Tensor::from_raw(b.shape().to_vec(), d)),
            ]
        }))
    }

    /// 2D cross-correlation of a `[C_in, H, W]` input with weights
    /// `[C_out, C_in, kh, kw]`, zero padding on all sides.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let x = self.value();
        let w = weight.value();
        let (cin, h, wd) = x.chw()?;
        let ws = w.shape().to_vec();
        if ws.len() != 4 || ws[1] != cin {
            return Err(Error::dim(
                "conv2d",
                format!("weight {ws:?} incompatible with input {:?}", x.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ph, pw) = (h + 2 * padding, wd + 2 * padding);
        if kh > ph || kw > pw {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}"),
            ));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::dim(
                "conv2d",
                format!("non-integral output extent for {ph}x{pw}, kernel {kh}x{kw}, stride {stride}"),
            ));
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (ph - kh) / stride + 1,
            wo: (pw - kw) / stride + 1,
        };
        let b = match bias {
            Some(bv) => {
                let bt = bv.value();
                if bt.numel() != cout {
                    return Err(Error::dim("conv2d", format!("bias of {} for {cout} outputs", bt.numel())));
                }
                Some(bt)
            }
            None => None,
        };
        let n = geom.col_cols();
        let kdim = geom.col_rows();
        let cols: Rc<Vec<f64>> = if geom.is_pointwise() {
            Rc::new(x.data().to_vec())
        } else {
            Rc::new(kernels::im2col(x.data(), &geom))
        };
        let mut out = vec![0.0; cout * n];
        if let Some(bt) = &b {
            for (o, &bv) in out.chunks_exact_mut(n).zip(bt.data()) {
                o.fill(bv);
            }
        }
        kernels::gemm(
            1.0,
            Mat::row_major(w.data(), cout, kdim),
            Mat::row_major(&cols, kdim, n),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
        );
        let value = Tensor::from_raw(vec![cout, geom.ho, geom.wo], out);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let x_shape = x.shape().to_vec();
        Ok(self.tape.op(value, &parents, move |g, need| {
            let gm = Mat::row_major(g.data(), cout, n);
            let gx = need[0].then(|| {
                let mut dcols = vec![0.0; kdim * n];
                kernels::gemm(1.0, Mat::row_major(w.data(), cout, kdim).t(), gm, 0.0, &mut dcols);
                let dx = if geom.is_pointwise() {
                    dcols
                } else {
                    kernels::col2im(&dcols, &geom)
                };
                Tensor::from_raw(x_shape.clone(), dx)
            });
            let gw = need[1].then(|| {
                let mut dw = vec![0.0; cout * kdim];
                kernels::gemm(1.0, gm, Mat::row_major(&cols, kdim, n).t(), 0.0, &mut dw);
                Tensor::from_raw(w.shape().to_vec(), dw)
            });
            let mut grads = vec![gx, gw];
            if let Some(bt) = &b {
                grads.push(need[2].then(|| {
                    let db = g.data().chunks_exact(n).map(|r| r.iter().sum()).collect();
                    Tensor::from_raw(bt.shape().to_vec(), db)
                }));
            }
            grads
        }))
    }

    /// Depthwise "same" convolution: weights `[C, 1, k, k]` with odd `k`,
    /// stride 1, one filter per channel.
    pub fn depthwise_conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let x = self.value();
        let w = weight.value();
        let (c, h, wd) = x.chw()?;
        let ws = w.shape().to_vec();
        if ws.len() != 4 || ws[0] != c || ws[1] != 1 || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(Error::dim(
                "depthwise_conv2d",
                format!("weight {ws:?} incompatible with input {:?}", x.shape()),
            ));
        }
        let k = ws[2];
        let b = match bias {
            Some(bv) => {
                let bt = bv.value();
                if bt.numel() != c {
                    return Err(Error::dim("depthwise_conv2d", "bias length"));
                }
                Some(bt)
            }
            None => None,
        };
        let mut out = kernels::depthwise_forward(x.data(), w.data(), c, h, wd, k);
        if let Some(bt) = &b {
            for (plane, &bv) in out.chunks_exact_mut(h * wd).zip(bt.data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(self.tape.op(Tensor::from_raw(vec![c, h, wd], out), &parents, move |g, need| {
            let (dx, dw) = kernels::depthwise_backward(x.data(), w.data(), g.data(), c, h, wd, k);
            let mut grads = vec![
                need[0].then(|| Tensor::from_raw(x.shape().to_vec(), dx)),
                need[1].then(|| Tensor::from_raw(w.shape().to_vec(), dw)),
            ];
            if b.is_some() {
                grads.push(need[2].then(|| {
                    Tensor::from_raw(vec![c], g.data().chunks_exact(h * wd).map(|p| p.iter().sum()).collect())
                }));
            }
            grads
        }))
    }

    /// Nearest-neighbour 2× upsampling of `[C, H, W]`.
    pub fn upsample_nearest2(self) -> Result<Var<'t>> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = x.data()[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(self.tape.op(Tensor::from_raw(vec![c, h2, w2], out), &[self], move |g, _| {
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                for y in 0..h2 {
                    for xx in 0..w2 {
                        dx[(ch * h + y / 2) * w + xx / 2] += g.data()[(ch * h2 + y) * w2 + xx];
                    }
                }
            }
            vec![Some(Tensor::from_raw(vec![c, h, w], dx))]
        }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::dim("softmax", format!("axis {axis} of rank {}", x.ndim())));
        }
        let (outer, len, inner) = kernels::axis_split(x.shape(), axis);
        let y = Rc::new(Tensor::from_raw(
            x.shape().to_vec(),
            kernels::softmax_forward(x.data(), outer, len, inner),
        ));
        let yc = y.clone();
        Ok(self.tape.op(y, &[self], move |g, _| {
            vec![Some(Tensor::from_raw(
                yc.shape().to_vec(),
                kernels::softmax_backward(yc.data(), g.data(), outer, len, inner),
            ))]
        }))
    }

    /// Standardizes over the given axes: `(x - mean) / sqrt(var + eps)`,
    /// with the biased variance. No affine transform.
    pub fn standardize(self, axes: &[usize], eps: f64) -> Result<Var<'t>> {
        let mut mean = self;
        for &a in axes {
            mean = mean.mean_axis(a, true)?;
        }
        let centered = self.sub(mean)?;
        let mut var = centered.square();
        for &a in axes {
            var = var.mean_axis(a, true)?;
        }
        centered.div(var.add_scalar(eps).sqrt())
    }

    /// Fused scaled dot-product attention in channel-major layout.
    ///
    /// `q: [B, d, n]`, `k: [B, d, m]`, `v: [B, dv, m]` give
    /// `out[b, :, i] = Σ_j softmax_j(scale · q[b,:,i]·k[b,:,j]) v[b, :, j]`
    /// with shape `[B, dv, n]`. Returns the output and the attention
    /// weights `[B, n, m]` (rows sum to one).
    pub fn attention(q: Var<'t>, k: Var<'t>, v: Var<'t>, scale: f64) -> Result<(Var<'t>, Rc<Tensor>)> {
        let (qt, kt, vt) = (q.value(), k.value(), v.value());
        let (qs, ks, vs) = (qt.shape().to_vec(), kt.shape().to_vec(), vt.shape().to_vec());
        if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 {
            return Err(Error::dim("attention", "q, k, v must be [B, d, n]"));
        }
        let (batch, d, n) = (qs[0], qs[1], qs[2]);
        let m = ks[2];
        let dv = vs[1];
        if ks[0] != batch || ks[1] != d || vs[0] != batch || vs[2] != m {
            return Err(Error::dim(
                "attention",
                format!("incompatible q {qs:?}, k {ks:?}, v {vs:?}"),
            ));
        }
        let mut probs = vec![0.0; batch * n * m];
        let mut out = vec![0.0; batch * dv * n];
        for b in 0..batch {
            let qb = Mat::row_major(&qt.data()[b * d * n..(b + 1) * d * n], d, n);
            let kb = Mat::row_major(&kt.data()[b * d * m..(b + 1) * d * m], d, m);
            let vb = Mat::row_major(&vt.data()[b * dv * m..(b + 1) * dv * m], dv, m);
            let p = &mut probs[b * n * m..(b + 1) * n * m];
            kernels::gemm(scale, qb.t(), kb, 0.0, p);
            kernels::softmax_rows(p, m);
            let pm = Mat::row_major(p, n, m);
            kernels::gemm(1.0, vb, pm.t(), 0.0, &mut out[b * dv * n..(b + 1) * dv * n]);
        }
        let probs = Rc::new(Tensor::from_raw(vec![batch, n, m], probs));
        let pc = probs.clone();
        let var = q.tape.op(
            Tensor::from_raw(vec![batch, dv, n], out),
            &[q, k, v],
            move |g, need| {
                let mut dq = vec![0.0; batch * d * n];
                let mut dk = vec![0.0; batch * d * m];
                let mut dvv = vec![0.0; batch * dv * m];
                let mut ds = vec![0.0; n * m];
                for b in 0..batch {
                    let qb = Mat::row_major(&qt.data()[b * d * n..(b + 1) * d * n], d, n);
                    let kb = Mat::row_major(&kt.data()[b * d * m..(b + 1) * d * m], d, m);
                    let vb = Mat::row_major(&vt.data()[b * dv * m..(b + 1) * dv * m], dv, m);
                    let gb = Mat::row_major(&g.data()[b * dv * n..(b + 1) * dv * n], dv, n);
                    let p = &pc.data()[b * n * m..(b + 1) * n * m];
                    let pm = Mat::row_major(p, n, m);
                    if need[2] {
                        kernels::gemm(1.0, gb, pm, 0.0, &mut dvv[b * dv * m..(b + 1) * dv * m]);
                    }
                    if need[0] || need[1] {
                        // dP = g^T v, then the softmax Jacobian row by row.
                        kernels::gemm(1.0, gb.t(), vb, 0.0, &mut ds);
                        for (drow, prow) in ds.chunks_exact_mut(m).zip(p.chunks_exact(m)) {
                            let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                            for (dv_, &pv) in drow.iter_mut().zip(prow) {
                                *dv_ = pv * (*dv_ - dot);
                            }
                        }
                        let dsm = Mat::row_major(&ds, n, m);
                        if need[0] {
                            kernels::gemm(scale, kb, dsm.t(), 0.0, &mut dq[b * d * n..(b + 1) * d * n]);
                        }
                        if need[1] {
                            kernels::gemm(scale, qb, dsm, 0.0, &mut dk[b * d * m..(b + 1) * d * m]);
                        }
                    }
                }
                vec![
                    need[0].then(|| Tensor::from_raw(qs.clone(), dq)),
                    need[1].then(|| Tensor::from_raw(ks.clone(), dk)),
                    need[2].then(|| Tensor::from_raw(vs.clone(), dvv)),
                ]
            },
        );
        Ok((var, probs))
    }

    /// Unitary 2D DFT of a real `[C, H, W]` input, per channel. The result
    /// is `[2, C, H, W]`: real parts, then imaginary parts.
    pub fn dft2(self) -> Result<Var<'t>> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let spec = kernels::real_fft2(x.data(), c, h, w);
        let mut data: Vec<f64> = spec.iter().map(|z| z.re).collect();
        data.extend(spec.iter().map(|z| z.im));
        Ok(self.tape.op(Tensor::from_raw(vec![2, c, h, w], data), &[self], move |g, _| {
            let plane = c * h * w;
            let (gre, gim) = g.data().split_at(plane);
            let mut buf: Vec<Complex64> = gre
                .iter()
                .zip(gim)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect();
            kernels::fft2_planes(&mut buf, c, h, w, true);
            vec![Some(Tensor::from_raw(vec![c, h, w], buf.iter().map(|z| z.re).collect()))]
        }))
    }

    /// Real part of the unitary inverse 2D DFT of a `[2, C, H, W]`
    /// real/imaginary stack.
    pub fn idft2_real(self) -> Result<Var<'t>> {
        let z = self.value();
        let s = z.shape().to_vec();
        if s.len() != 4 || s[0] != 2 {
            return Err(Error::dim("idft2_real", format!("expected [2, C, H, W], got {s:?}")));
        }
        let (c, h, w) = (s[1], s[2], s[3]);
        let plane = c * h * w;
        let (re, im) = z.data().split_at(plane);
        let mut buf: Vec<Complex64> = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        kernels::fft2_planes(&mut buf, c, h, w, true);
        let out = buf.iter().map(|v| v.re).collect();
        Ok(self.tape.op(Tensor::from_raw(vec![c, h, w], out), &[self], move |g, _| {
            let mut buf: Vec<Complex64> = g.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
            kernels::fft2_planes(&mut buf, c, h, w, false);
            let mut d: Vec<f64> = buf.iter().map(|v| v.re).collect();
            d.extend(buf.iter().map(|v| v.im));
            vec![Some(Tensor::from_raw(vec![2, c, h, w], d))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Rng, Tape};

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 1, 4], &[2, 1]), Some(vec![3, 2, 4]));
        assert_eq!(broadcast_shape(&[3], &[4]), None);
        assert_eq!(broadcast_map(&[2, 3], &[3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_map(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn broadcast_add_grad_reduces() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::ones(&[2, 3]));
        let b = tape.leaf(Tensor::ones(&[3]));
        let loss = a.add(b).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let tape = Tape::new();
        let mut rng = Rng::new(1);
        let m = Tensor::randn(&[3, 4], &mut rng);
        let i = tape.constant(Tensor::eye(3));
        let mv = tape.constant(m.clone());
        assert_eq!(i.matmul(mv).unwrap().to_tensor(), m);
        let z = tape.constant(Tensor::zeros(&[2, 3]));
        assert_eq!(z.matmul(mv).unwrap().to_tensor(), Tensor::zeros(&[2, 4]));
        assert!(mv.matmul(mv).is_err());
    }

    #[test]
    fn conv_rejects_non_integral_output() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 6, 6]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(x.conv2d(w, None, 2, 1), Err(Error::Dimension { .. })));
        assert!(x.conv2d(w, None, 1, 1).is_ok());
        let big = tape.constant(Tensor::zeros(&[1, 1, 9, 9]));
        assert!(x.conv2d(big, None, 1, 1).is_err());
    }

    #[test]
    fn dft_of_constant_is_dc_only() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 2]));
        let z = x.dft2().unwrap().to_tensor();
        assert_eq!(z.data(), &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}

use std::f64::consts::PI;

use proptest::prelude::*;
use wfdiff::fourier::{fft2_complex, ifft2, fft2};
use wfdiff::{Rng, Tape, Tensor};

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut Rng::new(seed))
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "element {i}: {x} vs {y}");
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let (m, k, n) = (5, 7, 3);
    let a = randn(&[2, m, k], 1);
    let b = randn(&[2, k, n], 2);
    let tape = Tape::new();
    let got = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().to_tensor();
    let mut want = vec![0.0; 2 * m * n];
    for bt in 0..2 {
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    want[bt * m * n + i * n + j] += a.data()[bt * m * k + i * k + p] * b.data()[bt * k * n + p * n + j];
                }
            }
        }
    }
    assert_eq!(got.shape(), &[2, m, n]);
    close(got.data(), &want, 1e-12);
}

#[test]
fn conv2d_matches_direct_sum() {
    let (cin, cout, h, w, k) = (3, 4, 7, 9, 3);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 2)] {
        let x = randn(&[cin, h, w], 3);
        let wt = randn(&[cout, cin, k, k], 4);
        let bias = randn(&[cout], 5);
        let tape = Tape::new();
        let got = tape
            .constant(x.clone())
            .conv2d(tape.constant(wt.clone()), Some(tape.constant(bias.clone())), stride, pad)
            .unwrap()
            .to_tensor();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        assert_eq!(got.shape(), &[cout, ho, wo]);
        for o in 0..cout {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut s = bias.data()[o];
                    for c in 0..cin {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xx * stride + dx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += wt.data()[((o * cin + c) * k + dy) * k + dx] * x.at3(c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    assert!((got.at3(o, y, xx) - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn depthwise_matches_direct_sum() {
    let (c, h, w) = (3, 6, 5);
    for k in [1, 3, 5] {
        let x = randn(&[c, h, w], 6);
        let wt = randn(&[c, 1, k, k], 7);
        let tape = Tape::new();
        let got = tape.constant(x.clone()).depthwise_conv2d(tape.constant(wt.clone()), None).unwrap().to_tensor();
        let p = (k / 2) as isize;
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let iy = y as isize + dy as isize - p;
                            let ix = xx as isize + dx as isize - p;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += wt.data()[(ch * k + dy) * k + dx] * x.at3(ch, iy as usize, ix as usize);
                            }
                        }
                    }
                    assert!((got.at3(ch, y, xx) - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_identity_and_zero_kernels() {
    let x = randn(&[2, 5, 5], 8);
    let mut id = Tensor::zeros(&[2, 2, 3, 3]);
    id.data_mut()[4] = 1.0; // out 0 <- in 0 centre tap
    id.data_mut()[31] = 1.0; // out 1 <- in 1
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = xv.conv2d(tape.constant(id), None, 1, 1).unwrap().to_tensor();
    assert_eq!(y.data(), x.data());
    let z = xv.conv2d(tape.constant(Tensor::zeros(&[2, 2, 3, 3])), None, 1, 1).unwrap();
    assert_eq!(z.to_tensor().max_abs(), 0.0);

    let mut dw = Tensor::zeros(&[2, 1, 3, 3]);
    dw.data_mut()[4] = 1.0;
    dw.data_mut()[13] = 1.0;
    let y = xv.depthwise_conv2d(tape.constant(dw), None).unwrap().to_tensor();
    assert_eq!(y.data(), x.data());
}

#[test]
fn softmax_known_values() {
    let tape = Tape::new();
    let sm = |v: Vec<f64>| {
        let n = v.len();
        tape.constant(Tensor::new(&[n], v).unwrap()).softmax(0).unwrap().to_tensor()
    };
    close(sm(vec![0.0, 0.0]).data(), &[0.5, 0.5], 1e-15);
    close(sm(vec![4.0; 5]).data(), &[0.2; 5], 1e-15);
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    close(
        sm(vec![1.0, 2.0, 3.0]).data(),
        &[1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z],
        1e-15,
    );
    // large logits stay finite
    let big = sm(vec![1000.0, 0.0]);
    assert!((big.data()[0] - 1.0).abs() < 1e-15 && big.data()[1] >= 0.0);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let x = randn(&[3, 6], seed);
        let tape = Tape::new();
        let a = tape.constant(x.clone()).softmax(1).unwrap().to_tensor();
        let b = tape.constant(x.map(|v| v + shift)).softmax(1).unwrap().to_tensor();
        for row in a.data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}

#[test]
fn standardize_matches_mean_var_oracle() {
    let x = randn(&[4, 3, 2], 9);
    let tape = Tape::new();
    let eps = 1e-5;
    let got = tape.constant(x.clone()).standardize(&[0], eps).unwrap().to_tensor();
    let plane = 6;
    for p in 0..plane {
        let col: Vec<f64> = (0..4).map(|c| x.data()[c * plane + p]).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        for c in 0..4 {
            let want = (col[c] - mean) / (var + eps).sqrt();
            assert!((got.data()[c * plane + p] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn dft_matches_quadruple_loop_8x8() {
    let x = randn(&[2, 8, 8], 10);
    let spec = fft2_complex(&x).unwrap();
    let n = 8usize;
    let norm = 1.0 / n as f64;
    for c in 0..2 {
        for u in 0..n {
            for v in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..n {
                    for xx in 0..n {
                        let ang = -2.0 * PI * ((u * y + v * xx) as f64) / n as f64;
                        re += x.at3(c, y, xx) * ang.cos();
                        im += x.at3(c, y, xx) * ang.sin();
                    }
                }
                let z = spec[(c * n + u) * n + v];
                assert!((z.re - norm * re).abs() < 1e-12 && (z.im - norm * im).abs() < 1e-12);
            }
        }
    }
    // the autodiff op agrees with the library transform
    let tape = Tape::new();
    let d = tape.constant(x.clone()).dft2().unwrap().to_tensor();
    let plane = 2 * n * n;
    for (i, z) in spec.iter().enumerate() {
        assert!((d.data()[i] - z.re).abs() < 1e-12 && (d.data()[plane + i] - z.im).abs() < 1e-12);
    }
    let back = ifft2(&fft2(&x).unwrap()).unwrap();
    assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
}

#[test]
fn backward_of_sum_and_square() {
    let x = randn(&[3, 4], 11);
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let g = tape.backward(v.sum()).unwrap().wrt(v).unwrap();
    assert!(g.data().iter().all(|&d| d == 1.0));

    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let g = tape.backward(v.square().sum()).unwrap().wrt(v).unwrap();
    close(g.data(), x.scale(2.0).data(), 1e-15);
}

#[test]
fn reused_variable_accumulates_gradient() {
    let x = randn(&[5], 12);
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    // f = sum(x * x + 3x) -> 2x + 3
    let f = v.mul(v).unwrap().add(v.scale(3.0)).unwrap().sum();
    let g = tape.backward(f).unwrap().wrt(v).unwrap();
    close(g.data(), x.map(|a| 2.0 * a + 3.0).data(), 1e-14);
}

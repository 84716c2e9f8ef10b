//! Procedural underwater-style image pairs: a textured clean scene and a
//! blurred, color-cast copy of it. Everything is 8-bit quantized so the
//! pairs behave exactly like files on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{quantize, write_ppm};
use crate::tensor::{Rng, Tensor};

fn quantized(t: Tensor) -> Tensor {
    t.map(|v| quantize(v) as f64 / 255.0)
}

/// A `[3, size, size]` scene: smooth color gradient, an oriented sinusoidal
/// texture and a few hard-edged disks and rectangles.
pub fn clean_scene(size: usize, rng: &mut Rng) -> Tensor {
    let n = size as f64;
    let mut img = vec![0.0; 3 * size * size];
    let grad: Vec<[f64; 3]> = (0..3)
        .map(|_| [rng.uniform(0.25, 0.6), rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25)])
        .collect();
    let freq = rng.uniform(3.0, 8.0) * std::f64::consts::TAU / n;
    let angle = rng.uniform(0.0, std::f64::consts::PI);
    let (fx, fy) = (freq * angle.cos(), freq * angle.sin());
    let tex_amp = rng.uniform(0.08, 0.18);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f64 / n - 0.5, y as f64 / n - 0.5);
                let g = grad[c];
                let texture = tex_amp * (fx * x as f64 + fy * y as f64).sin();
                img[(c * size + y) * size + x] = g[0] + g[1] * u + g[2] * v + texture;
            }
        }
    }
    for _ in 0..rng.int_inclusive(2, 4) {
        let color = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
        let (cx, cy) = (rng.uniform(0.15, 0.85) * n, rng.uniform(0.15, 0.85) * n);
        let r = rng.uniform(0.08, 0.25) * n;
        let disk = rng.next_f64() < 0.5;
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disk {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= 0.6 * r
                };
                if inside {
                    for (c, &col) in color.iter().enumerate() {
                        img[(c * size + y) * size + x] = col;
                    }
                }
            }
        }
    }
    quantized(Tensor::from_raw(vec![3, size, size], img).map(|v| v.clamp(0.0, 1.0)))
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = img.chw()?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let ks: f64 = k.iter().sum();
    let k: Vec<f64> = k.into_iter().map(|v| v / ks).collect();
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                tmp[(ch * h + y) * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * src[(ch * h + y) * w + clampi(x as isize + i as isize - radius, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + y) * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * tmp[(ch * h + clampi(y as isize + i as isize - radius, h)) * w + x])
                    .sum();
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, h, w], out))
}

/// Degradation parameters: blur then per-channel `gain · x + offset`.
#[derive(Clone, Copy, Debug)]
pub struct Degradation {
    pub blur_sigma: f64,
    pub gain: [f64; 3],
    pub offset: [f64; 3],
}

impl Degradation {
    /// Random underwater-like cast: red attenuated, blue-green veil.
    pub fn sample(rng: &mut Rng) -> Self {
        Self {
            blur_sigma: rng.uniform(0.8, 1.5),
            gain: [rng.uniform(0.45, 0.7), rng.uniform(0.8, 0.95), rng.uniform(0.85, 1.0)],
            offset: [rng.uniform(0.0, 0.03), rng.uniform(0.04, 0.1), rng.uniform(0.08, 0.18)],
        }
    }

    pub fn apply(&self, clean: &Tensor) -> Result<Tensor> {
        let (c, h, w) = clean.chw()?;
        if c != 3 {
            return Err(Error::InvalidArgument("color cast needs 3 channels".into()));
        }
        let mut out = gaussian_blur(clean, self.blur_sigma)?;
        for (ch, plane) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
            for v in plane {
                *v = (self.gain[ch] * *v + self.offset[ch]).clamp(0.0, 1.0);
            }
        }
        Ok(quantized(out))
    }
}

/// `n` deterministic `(degraded, clean)` pairs of `size`×`size` images.
pub fn color_cast_blur_corpus(n: usize, size: usize, seed: u64) -> Result<Vec<(Tensor, Tensor)>> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let clean = clean_scene(size, &mut rng);
            let degraded = Degradation::sample(&mut rng).apply(&clean)?;
            Ok((degraded, clean))
        })
        .collect()
}

/// Writes pairs as `pair_XXX_{degraded,reference}.ppm` plus a
/// `manifest.csv` in `dir`; returns the manifest path.
pub fn write_corpus(dir: impl AsRef<Path>, pairs: &[(Tensor, Tensor)]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut manifest = String::from("degraded_path,reference_path\n");
    for (i, (d, r)) in pairs.iter().enumerate() {
        let dn = format!("pair_{i:03}_degraded.ppm");
        let rn = format!("pair_{i:03}_reference.ppm");
        write_ppm(d, dir.join(&dn))?;
        write_ppm(r, dir.join(&rn))?;
        writeln!(manifest, "{dn},{rn}").unwrap();
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::file(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let a = color_cast_blur_corpus(3, 16, 5).unwrap();
        let b = color_cast_blur_corpus(3, 16, 5).unwrap();
        assert_eq!(a, b);
        for (d, c) in &a {
            assert!(d.data().iter().chain(c.data()).all(|v| (0.0..=1.0).contains(v)));
            assert_ne!(d, c);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let t = Tensor::full(&[1, 8, 8], 0.3);
        assert!(gaussian_blur(&t, 1.2).unwrap().max_abs_diff(&t).unwrap() < 1e-12);
    }
}

#[cfg(test)]
mod ordering {
    use super::*;
    use crate::analysis::{analyze_pairs, SwapStrategy};

    #[test]
    fn all_subband_swap_scores_at_least_ll_swap() {
        let pairs = color_cast_blur_corpus(20, 32, 11).unwrap();
        let s2 = analyze_pairs(&pairs, SwapStrategy::S2).unwrap().mean;
        let s3 = analyze_pairs(&pairs, SwapStrategy::S3).unwrap().mean;
        assert!(s3.psnr_db >= s2.psnr_db);
    }
}

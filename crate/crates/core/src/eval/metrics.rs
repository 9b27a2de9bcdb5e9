//! Image quality metrics over interleaved float images with values in [0, 1].

use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Layout of an interleaved row-major image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn rgb(width: usize, height: usize) -> Self {
        ImageShape { width, height, channels: 3 }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_pair(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(vec![a.len()], vec![b.len()]));
    }
    Ok(())
}

/// Per-value weights from a per-pixel mask, or `None` for the full image.
fn expand_mask(mask: Option<&[f32]>, len: usize) -> Result<Option<Vec<f64>>> {
    let Some(m) = mask else { return Ok(None) };
    if m.is_empty() || len % m.len() != 0 {
        return Err(Error::ShapeMismatch(vec![len], vec![m.len()]));
    }
    let c = len / m.len();
    Ok(Some(m.iter().flat_map(|&v| std::iter::repeat_n(if v > 0.5 { 1.0 } else { 0.0 }, c)).collect()))
}

fn weighted_mean(values: impl Iterator<Item = f64>, weights: Option<&[f64]>) -> f64 {
    match weights {
        None => {
            let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        }
        Some(w) => {
            let (s, n) = values.zip(w).fold((0.0, 0.0), |(s, n), (v, &w)| (s + w * v, n + w));
            if n == 0.0 {
                0.0
            } else {
                s / n
            }
        }
    }
}

/// Mean absolute difference over all pixels and channels (optionally only
/// where `mask` marks foreground).
pub fn mae_masked(a: &[f32], b: &[f32], mask: Option<&[f32]>) -> Result<f64> {
    check_pair(a, b)?;
    let w = expand_mask(mask, a.len())?;
    Ok(weighted_mean(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()), w.as_deref()))
}

pub fn mae(a: &[f32], b: &[f32]) -> Result<f64> {
    mae_masked(a, b, None)
}

pub fn mse_masked(a: &[f32], b: &[f32], mask: Option<&[f32]>) -> Result<f64> {
    check_pair(a, b)?;
    let w = expand_mask(mask, a.len())?;
    Ok(weighted_mean(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)), w.as_deref()))
}

/// 10·log10(1 / MSE) for unit dynamic range; identical images give [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr_masked(a: &[f32], b: &[f32], mask: Option<&[f32]>) -> Result<f64> {
    Ok(psnr_from_mse(mse_masked(a, b, mask)?))
}

pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    psnr_masked(a, b, None)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(img: &[f64], width: usize, height: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let ow = width - k + 1;
    let oh = height - k + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * img[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03,
/// unit dynamic range) per channel over valid window positions, averaged over
/// channels. With a mask, only windows centered on foreground pixels count.
pub fn ssim_masked(a: &[f32], b: &[f32], shape: ImageShape, mask: Option<&[f32]>) -> Result<f64> {
    check_pair(a, b)?;
    if a.len() != shape.len() {
        return Err(Error::ShapeMismatch(vec![shape.height, shape.width, shape.channels], vec![a.len()]));
    }
    if shape.width < SSIM_WINDOW || shape.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { got: (shape.width, shape.height), window: SSIM_WINDOW });
    }
    if let Some(m) = mask {
        if m.len() != shape.width * shape.height {
            return Err(Error::ShapeMismatch(vec![shape.height, shape.width], vec![m.len()]));
        }
    }
    let (w, h, c) = (shape.width, shape.height, shape.channels);
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let half = SSIM_WINDOW / 2;
    let ow = w - SSIM_WINDOW + 1;
    let center_weights: Option<Vec<f64>> = mask.map(|m| {
        (0..(h - SSIM_WINDOW + 1) * ow)
            .map(|i| {
                let (x, y) = (i % ow + half, i / ow + half);
                if m[y * w + x] > 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    });
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = (0..w * h).map(|i| a[i * c + ch] as f64).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b[i * c + ch] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &g);
        let my = filter_valid(&y, w, h, &g);
        let sxx = filter_valid(&xx, w, h, &g);
        let syy = filter_valid(&yy, w, h, &g);
        let sxy = filter_valid(&xy, w, h, &g);
        let map = (0..mx.len()).map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        });
        total += weighted_mean(map, center_weights.as_deref());
    }
    Ok(total / c as f64)
}

pub fn ssim(a: &[f32], b: &[f32], shape: ImageShape) -> Result<f64> {
    ssim_masked(a, b, shape, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, shape: ImageShape) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.len()).map(|_| rng.random()).collect()
    }

    /// Smooth structured test image.
    fn pattern(shape: ImageShape) -> Vec<f32> {
        let mut out = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    let v = 0.5 + 0.3 * ((x as f32 * 0.3 + c as f32).sin() * (y as f32 * 0.2).cos());
                    out.push(v);
                }
            }
        }
        out
    }

    #[test]
    fn mae_examples() {
        let a = random_image(1, ImageShape::rgb(8, 8));
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let base: Vec<f32> = a.iter().map(|v| v * 0.5).collect();
        let shifted: Vec<f32> = base.iter().map(|v| v + 0.1).collect();
        assert!((mae(&base, &shifted).unwrap() - 0.1).abs() < 1e-6);
        assert!(mae(&a, &a[1..]).is_err());
    }

    #[test]
    fn mae_matches_two_loop_reference() {
        let shape = ImageShape::rgb(13, 7);
        let a = random_image(2, shape);
        let b = random_image(3, shape);
        let mut s = 0.0f64;
        for y in 0..7 {
            for x in 0..13 {
                for c in 0..3 {
                    let i = (y * 13 + x) * 3 + c;
                    s += (a[i] as f64 - b[i] as f64).abs();
                }
            }
        }
        assert!((mae(&a, &b).unwrap() - s / (13.0 * 7.0 * 3.0)).abs() < 1e-9);
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let a = random_image(4, ImageShape::rgb(5, 5));
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let half = vec![0.5f32; 75];
        let zero = vec![0.0f32; 75];
        assert!((psnr(&half, &zero).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn ssim_examples() {
        let shape = ImageShape::rgb(24, 20);
        let a = pattern(shape);
        assert!((ssim(&a, &a, shape).unwrap() - 1.0).abs() < 1e-9);
        let neg: Vec<f32> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&a, &neg, shape).unwrap() < 0.5);
        let k = vec![0.3f32; shape.len()];
        assert!((ssim(&k, &k, shape).unwrap() - 1.0).abs() < 1e-9);
        let small = ImageShape::rgb(10, 30);
        assert!(matches!(ssim(&vec![0.0; small.len()], &vec![0.0; small.len()], small), Err(Error::ImageTooSmall { .. })));
    }

    /// Direct per-window evaluation without separable filtering.
    fn ssim_reference(a: &[f32], b: &[f32], shape: ImageShape) -> f64 {
        let g = gaussian_window();
        let (w, h, c) = (shape.width, shape.height, shape.channels);
        let mut total = 0.0;
        for ch in 0..c {
            let mut acc = 0.0;
            let mut count = 0.0;
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..11 {
                        for dx in 0..11 {
                            let wt = g[dy] * g[dx];
                            let i = ((y0 + dy) * w + x0 + dx) * c + ch;
                            let (p, q) = (a[i] as f64, b[i] as f64);
                            mx += wt * p;
                            my += wt * q;
                            sxx += wt * p * p;
                            syy += wt * q * q;
                            sxy += wt * p * q;
                        }
                    }
                    let (c1, c2) = (1e-4, 9e-4);
                    let num = (2.0 * mx * my + c1) * (2.0 * (sxy - mx * my) + c2);
                    let den = (mx * mx + my * my + c1) * (sxx - mx * mx + syy - my * my + c2);
                    acc += num / den;
                    count += 1.0;
                }
            }
            total += acc / count;
        }
        total / c as f64
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let shape = ImageShape::rgb(16, 14);
        let a = random_image(5, shape);
        let b: Vec<f32> = pattern(shape);
        assert!((ssim(&a, &b, shape).unwrap() - ssim_reference(&a, &b, shape)).abs() < 1e-9);
    }

    #[test]
    fn masked_metrics_ignore_background() {
        let shape = ImageShape::rgb(12, 12);
        let a = pattern(shape);
        let mut b = a.clone();
        let mask: Vec<f32> = (0..144).map(|i| if i < 72 { 1.0 } else { 0.0 }).collect();
        for v in b[72 * 3..].iter_mut() {
            *v = 0.0;
        }
        assert_eq!(mae_masked(&a, &b, Some(&mask)).unwrap(), 0.0);
        assert_eq!(psnr_masked(&a, &b, Some(&mask)).unwrap(), PSNR_CAP);
        assert!(mae(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn noise_lowers_psnr_and_ssim() {
        let shape = ImageShape::rgb(32, 32);
        let base = pattern(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<f32> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for amp in [0.02f32, 0.05, 0.1] {
            let noisy: Vec<f32> = base.iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
            let p = psnr(&base, &noisy).unwrap();
            let s = ssim(&base, &noisy, shape).unwrap();
            assert!(p < prev.0 && s < prev.1);
            prev = (p, s);
        }
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            let shape = ImageShape::rgb(12, 13);
            let a = random_image(seed, shape);
            let b = random_image(seed + 1, shape);
            prop_assert!((mae(&a, &b).unwrap() - mae(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!((ssim(&a, &b, shape).unwrap() - ssim(&b, &a, shape).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ssim_is_bounded(seed in 0u64..1000) {
            let shape = ImageShape::rgb(11, 11);
            let a = random_image(seed, shape);
            let b = random_image(seed + 7, shape);
            let s = ssim(&a, &b, shape).unwrap();
            prop_assert!(s <= 1.0 + 1e-12 && s >= -1.0 - 1e-12);
            prop_assert!(psnr(&a, &b).unwrap() >= 0.0);
        }
    }
}

//! Image-space augmentation of rendered samples.
//!
//! Operations run in a fixed order: noise, contrast, erosion, rotation,
//! elastic distortion, watermark. An operation whose magnitude is zero is
//! skipped entirely, so an all-off spec returns the input unchanged.

use std::path::{Path, PathBuf};

use image::{imageops, GrayImage, Luma};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

pub const MAX_ROTATION_DEG: f64 = 5.0;

// Per-operation seed offsets.
const NOISE: u64 = 0x01 << 48;
const CONTRAST: u64 = 0x02 << 48;
const ROTATION: u64 = 0x04 << 48;
const ELASTIC: u64 = 0x05 << 48;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("watermark image {path} could not be loaded: {reason}")]
    WatermarkMissing { path: PathBuf, reason: String },
    #[error("invalid augment spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkSpec {
    pub path: PathBuf,
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Gaussian noise standard deviation in gray levels.
    pub noise_sigma: f64,
    /// Contrast factor drawn uniformly from `[lo, hi]`; `[1, 1]` is off.
    pub contrast_factor: [f64; 2],
    /// Odd square kernel for grayscale erosion; 1 is off.
    pub erosion_kernel: u32,
    /// Rotation angle drawn uniformly from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub watermark: Option<WatermarkSpec>,
    /// Used by [`augment`]. Pipelines pass a per-sample seed to
    /// [`Augmenter::apply`] instead, so it is not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            noise_sigma: 0.0,
            contrast_factor: [1.0, 1.0],
            erosion_kernel: 1,
            rotation_deg: 0.0,
            elastic_alpha: 0.0,
            elastic_sigma: 0.0,
            watermark: None,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::InvalidSpec(m.into()));
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.noise_sigma) {
            return bad("noise_sigma must be ≥ 0");
        }
        let [lo, hi] = self.contrast_factor;
        if !(finite_nonneg(lo) && finite_nonneg(hi) && lo <= hi) {
            return bad("contrast_factor must be a range 0 ≤ lo ≤ hi");
        }
        if self.erosion_kernel == 0 || self.erosion_kernel.is_multiple_of(2) {
            return bad("erosion_kernel must be an odd integer ≥ 1");
        }
        if !finite_nonneg(self.rotation_deg) || self.rotation_deg > MAX_ROTATION_DEG {
            return bad("rotation_deg must lie in [0, 5]");
        }
        if !finite_nonneg(self.elastic_alpha) || !finite_nonneg(self.elastic_sigma) {
            return bad("elastic_alpha and elastic_sigma must be ≥ 0");
        }
        if let Some(w) = &self.watermark {
            if !(0.0..=1.0).contains(&w.opacity) {
                return bad("watermark opacity must lie in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.noise_sigma == 0.0
            && self.contrast_factor == [1.0, 1.0]
            && self.erosion_kernel == 1
            && self.rotation_deg == 0.0
            && (self.elastic_alpha == 0.0 || self.elastic_sigma == 0.0)
            && self.watermark.as_ref().is_none_or(|w| w.opacity == 0.0)
    }
}

/// A validated spec with its watermark loaded.
#[derive(Debug, Clone)]
pub struct Augmenter {
    spec: AugmentSpec,
    watermark: Option<GrayImage>,
}

impl Augmenter {
    pub fn new(spec: AugmentSpec) -> Result<Self, AugmentError> {
        spec.validate()?;
        let watermark = match &spec.watermark {
            Some(w) => Some(load_watermark(&w.path)?),
            None => None,
        };
        Ok(Augmenter { spec, watermark })
    }

    pub fn spec(&self) -> &AugmentSpec {
        &self.spec
    }

    /// Augments `img` with randomness drawn from `seed`.
    pub fn apply(&self, img: &GrayImage, seed: u64) -> GrayImage {
        let s = &self.spec;
        let mut out = img.clone();
        if s.noise_sigma > 0.0 {
            add_noise(&mut out, s.noise_sigma, seed ^ NOISE);
        }
        let [lo, hi] = s.contrast_factor;
        if [lo, hi] != [1.0, 1.0] {
            let f = if lo == hi {
                lo
            } else {
                rng_for(seed ^ CONTRAST).random_range(lo..=hi)
            };
            adjust_contrast(&mut out, f);
        }
        if s.erosion_kernel > 1 {
            out = erode(&out, s.erosion_kernel);
        }
        if s.rotation_deg > 0.0 {
            let r = s.rotation_deg;
            let deg = rng_for(seed ^ ROTATION).random_range(-r..=r);
            out = rotate(&out, deg);
        }
        if s.elastic_alpha > 0.0 && s.elastic_sigma > 0.0 {
            out = elastic(&out, s.elastic_alpha, s.elastic_sigma, seed ^ ELASTIC);
        }
        if let (Some(w), Some(ws)) = (&self.watermark, &s.watermark) {
            if ws.opacity > 0.0 {
                overlay_watermark(&mut out, w, ws.opacity);
            }
        }
        out
    }
}

/// One-shot convenience: validates `spec`, loads its watermark and applies it
/// with `spec.seed`.
pub fn augment(img: &GrayImage, spec: &AugmentSpec) -> Result<GrayImage, AugmentError> {
    Ok(Augmenter::new(spec.clone())?.apply(img, spec.seed))
}

fn load_watermark(path: &Path) -> Result<GrayImage, AugmentError> {
    image::open(path)
        .map(|i| i.into_luma8())
        .map_err(|e| AugmentError::WatermarkMissing {
            path: path.to_owned(),
            reason: e.to_string(),
        })
}

fn clamp_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

pub fn add_noise(img: &mut GrayImage, sigma: f64, seed: u64) {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = rng_for(seed);
    for p in img.pixels_mut() {
        p.0[0] = clamp_u8(f64::from(p.0[0]) + normal.sample(&mut rng));
    }
}

/// Scales deviations from the mean gray level by `factor`.
pub fn adjust_contrast(img: &mut GrayImage, factor: f64) {
    let n = u64::from(img.width()) * u64::from(img.height());
    if n == 0 {
        return;
    }
    let mean = img.pixels().map(|p| f64::from(p.0[0])).sum::<f64>() / n as f64;
    for p in img.pixels_mut() {
        p.0[0] = clamp_u8(mean + (f64::from(p.0[0]) - mean) * factor);
    }
}

/// Grayscale erosion: each pixel becomes the minimum over a `k x k` window.
/// Dark strokes on a light page thicken.
pub fn erode(img: &GrayImage, k: u32) -> GrayImage {
    let (w, h) = img.dimensions();
    let r = (k / 2) as i64;
    let min_pass = |src: &GrayImage, dx: i64, dy: i64| {
        GrayImage::from_fn(w, h, |x, y| {
            let mut m = u8::MAX;
            for t in -r..=r {
                let sx = (x as i64 + t * dx).clamp(0, w as i64 - 1) as u32;
                let sy = (y as i64 + t * dy).clamp(0, h as i64 - 1) as u32;
                m = m.min(src.get_pixel(sx, sy).0[0]);
            }
            Luma([m])
        })
    };
    min_pass(&min_pass(img, 1, 0), 0, 1)
}

fn bilinear(img: &GrayImage, x: f64, y: f64, fill: Option<u8>) -> u8 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: i64, yi: i64| -> f64 {
        if (0..w).contains(&xi) && (0..h).contains(&yi) {
            f64::from(img.get_pixel(xi as u32, yi as u32).0[0])
        } else if let Some(f) = fill {
            f64::from(f)
        } else {
            f64::from(img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32).0[0])
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let top = at(xi, yi) * (1.0 - fx) + at(xi + 1, yi) * fx;
    let bottom = at(xi, yi + 1) * (1.0 - fx) + at(xi + 1, yi + 1) * fx;
    clamp_u8(top * (1.0 - fy) + bottom * fy)
}

/// Rotates about the image centre by `deg` degrees counter-clockwise;
/// uncovered area is white.
pub fn rotate(img: &GrayImage, deg: f64) -> GrayImage {
    if deg == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (cx, cy) = ((f64::from(w) - 1.0) / 2.0, (f64::from(h) - 1.0) / 2.0);
    let (s, c) = deg.to_radians().sin_cos();
    GrayImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (f64::from(x) - cx, f64::from(y) - cy);
        // Inverse mapping; y grows downward.
        let sx = cx + c * dx - s * dy;
        let sy = cy + s * dx + c * dy;
        Luma([bilinear(img, sx, sy, Some(255))])
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur of a row-major field with border replication.
fn blur(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let pass = |src: &[f64], horizontal: bool| {
        let mut dst = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let o = t as i64 - r;
                    let (sx, sy) = if horizontal {
                        ((x as i64 + o).clamp(0, w as i64 - 1) as usize, y)
                    } else {
                        (x, (y as i64 + o).clamp(0, h as i64 - 1) as usize)
                    };
                    acc += kv * src[sy * w + sx];
                }
                dst[y * w + x] = acc;
            }
        }
        dst
    };
    pass(&pass(field, true), false)
}

/// Random displacement fields in [-1, 1], Gaussian-smoothed with `sigma` and
/// scaled by `alpha`; sampled bilinearly with border replication.
pub fn elastic(img: &GrayImage, alpha: f64, sigma: f64, seed: u64) -> GrayImage {
    if alpha == 0.0 || sigma == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut rng = rng_for(seed);
    let mut field = || -> Vec<f64> {
        let raw: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..=1.0)).collect();
        blur(&raw, w, h, sigma)
    };
    let dx = field();
    let dy = field();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let sx = f64::from(x) + alpha * dx[i];
        let sy = f64::from(y) + alpha * dy[i];
        Luma([bilinear(img, sx, sy, None)])
    })
}

/// Blends a watermark, resized to the image, at `opacity`.
pub fn overlay_watermark(img: &mut GrayImage, watermark: &GrayImage, opacity: f64) {
    let (w, h) = img.dimensions();
    let scaled;
    let mark = if watermark.dimensions() == (w, h) {
        watermark
    } else {
        scaled = imageops::resize(watermark, w, h, imageops::FilterType::Triangle);
        &scaled
    };
    for (p, m) in img.pixels_mut().zip(mark.pixels()) {
        let v = (1.0 - opacity) * f64::from(p.0[0]) + opacity * f64::from(m.0[0]);
        p.0[0] = clamp_u8(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| Luma([((x * 7 + y * 13) % 256) as u8]))
    }

    #[test]
    fn identity_spec_is_byte_identical() {
        let img = gradient(50, 40);
        let spec = AugmentSpec::default();
        assert!(spec.is_identity());
        assert_eq!(augment(&img, &spec).unwrap().as_raw(), img.as_raw());
    }

    #[test]
    fn noise_sigma_statistics() {
        let img = GrayImage::from_pixel(500, 400, Luma([128]));
        let spec = AugmentSpec {
            noise_sigma: 10.0,
            seed: 7,
            ..AugmentSpec::default()
        };
        let out = augment(&img, &spec).unwrap();
        let n = f64::from(500 * 400);
        let vals: Vec<f64> = out.pixels().map(|p| f64::from(p.0[0])).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((9.0..=11.0).contains(&var.sqrt()), "sigma {}", var.sqrt());
        assert!((mean - 128.0).abs() < 0.5);
    }

    #[test]
    fn deterministic_per_seed() {
        let img = gradient(60, 48);
        let spec = AugmentSpec {
            noise_sigma: 5.0,
            contrast_factor: [0.7, 1.3],
            erosion_kernel: 3,
            rotation_deg: 2.0,
            elastic_alpha: 3.0,
            elastic_sigma: 4.0,
            seed: 42,
            ..AugmentSpec::default()
        };
        let a = augment(&img, &spec).unwrap();
        assert_eq!(a, augment(&img, &spec).unwrap());
        assert_eq!(a.dimensions(), img.dimensions());
        let other = augment(&img, &AugmentSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn erosion_is_a_min_filter() {
        let mut img = GrayImage::from_pixel(7, 7, Luma([255]));
        img.put_pixel(3, 3, Luma([0]));
        let out = erode(&img, 3);
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(out.get_pixel(x, y).0[0], if inside { 0 } else { 255 });
            }
        }
    }

    #[test]
    fn rotation_by_right_angle_permutes_pixels() {
        // Counter-clockwise on screen: the right edge moves to the top. A 90°
        // rotation of a square about its centre is an exact index
        // permutation, so bilinear sampling must hit pixel centres.
        let img = gradient(9, 9);
        let out = rotate(&img, 90.0);
        for y in 0..9 {
            for x in 0..9 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(8 - y, x));
            }
        }
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn contrast_scales_about_mean() {
        let mut img = GrayImage::from_raw(2, 1, vec![100, 200]).unwrap();
        adjust_contrast(&mut img, 0.5);
        assert_eq!(img.as_raw(), &vec![125, 175]);
        let mut img = GrayImage::from_raw(2, 1, vec![10, 250]).unwrap();
        adjust_contrast(&mut img, 3.0);
        assert_eq!(img.as_raw(), &vec![0, 255]);
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Constant fields survive blurring.
        let f = vec![0.25; 30];
        assert!(blur(&f, 6, 5, 1.5).iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn watermark_blending_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mark.png");
        GrayImage::from_pixel(10, 8, Luma([0])).save(&path).unwrap();
        let img = GrayImage::from_pixel(20, 16, Luma([200]));
        let spec = AugmentSpec {
            watermark: Some(WatermarkSpec {
                path: path.clone(),
                opacity: 0.25,
            }),
            ..AugmentSpec::default()
        };
        let out = augment(&img, &spec).unwrap();
        assert!(out.pixels().all(|p| p.0[0] == 150));
        let missing = AugmentSpec {
            watermark: Some(WatermarkSpec {
                path: dir.path().join("none.png"),
                opacity: 0.25,
            }),
            ..AugmentSpec::default()
        };
        assert!(matches!(
            Augmenter::new(missing),
            Err(AugmentError::WatermarkMissing { .. })
        ));
    }

    #[test]
    fn validation() {
        let ok = AugmentSpec::default();
        assert!(ok.validate().is_ok());
        for bad in [
            AugmentSpec { rotation_deg: 5.5, ..ok.clone() },
            AugmentSpec { erosion_kernel: 2, ..ok.clone() },
            AugmentSpec { noise_sigma: -1.0, ..ok.clone() },
            AugmentSpec { contrast_factor: [1.2, 0.8], ..ok.clone() },
            AugmentSpec {
                watermark: Some(WatermarkSpec { path: "x".into(), opacity: 1.5 }),
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(AugmentError::InvalidSpec(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn dimensions_preserved(
            w in 4u32..24, h in 4u32..24, seed: u64,
            sigma in 0.0f64..30.0, rot in 0.0f64..5.0, alpha in 0.0f64..4.0,
        ) {
            let img = gradient(w, h);
            let spec = AugmentSpec {
                noise_sigma: sigma,
                contrast_factor: [0.5, 2.0],
                erosion_kernel: 3,
                rotation_deg: rot,
                elastic_alpha: alpha,
                elastic_sigma: 2.0,
                seed,
                ..AugmentSpec::default()
            };
            prop_assert_eq!(augment(&img, &spec).unwrap().dimensions(), (w, h));
        }

        #[test]
        fn zero_alpha_elastic_is_identity(seed: u64) {
            let img = gradient(12, 10);
            prop_assert_eq!(elastic(&img, 0.0, 3.0, seed), img);
        }
    }
}

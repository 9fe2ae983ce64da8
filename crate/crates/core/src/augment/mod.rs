//! Two-view augmentation: regular crop/flip/rotate/jitter/blur transforms
//! plus style-transfer augmentation drawn from a style bank.

mod adain;

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub use adain::{adain, channel_stats, nst_augment, nst_features, ChannelStats, FeatureCodec, FeatureMap, IdentityCodec};

use crate::image::{load_image, resize, ImageError, ImageTensor};
use crate::rng::Rng as StreamRng;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("channel mismatch: content has {content}, style has {style}")]
    ChannelMismatch { content: usize, style: usize },
    #[error("style blend alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("codec failure: {0}")]
    Codec(String),
    #[error("style bank is empty but NST probability is {0}")]
    EmptyStyleBank(f64),
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("cannot list style directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    /// Side of the square output view.
    pub output_size: usize,
    /// Area fraction of the random crop.
    pub crop_scale: [f64; 2],
    pub p_hflip: f64,
    pub rotation_deg: [f64; 2],
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub p_blur: f64,
    pub blur_sigma: [f64; 2],
    pub p_nst: f64,
    pub nst_alpha: f64,
    pub nst_epsilon: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            output_size: 224,
            crop_scale: [0.6, 1.0],
            p_hflip: 0.5,
            rotation_deg: [-25.0, 25.0],
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            p_blur: 0.5,
            blur_sigma: [0.1, 2.0],
            p_nst: 0.7,
            nst_alpha: 1.0,
            nst_epsilon: 1e-5,
        }
    }
}

impl AugmentationPolicy {
    /// Every random transform switched off; only the resize remains.
    pub fn disabled(output_size: usize) -> Self {
        Self {
            output_size,
            crop_scale: [1.0, 1.0],
            p_hflip: 0.0,
            rotation_deg: [0.0, 0.0],
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            p_blur: 0.0,
            blur_sigma: [0.1, 2.0],
            p_nst: 0.0,
            nst_alpha: 1.0,
            nst_epsilon: 1e-5,
        }
    }

    pub fn without_nst(mut self) -> Self {
        self.p_nst = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Policy(m.to_string()));
        for (name, p) in [("p_hflip", self.p_hflip), ("p_blur", self.p_blur), ("p_nst", self.p_nst), ("nst_alpha", self.nst_alpha)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} = {p} outside [0, 1]"));
            }
        }
        for (name, [lo, hi]) in [("crop_scale", self.crop_scale), ("rotation_deg", self.rotation_deg), ("blur_sigma", self.blur_sigma)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(&format!("{name} range [{lo}, {hi}] is not ordered"));
            }
        }
        if !(self.crop_scale[0] > 0.0 && self.crop_scale[1] <= 1.0) {
            return bad("crop_scale must lie in (0, 1]");
        }
        if self.blur_sigma[0] <= 0.0 {
            return bad("blur_sigma must be positive");
        }
        for (name, d) in [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(0.0..1.0).contains(&d) {
                return bad(&format!("{name} delta {d} outside [0, 1)"));
            }
        }
        if self.output_size == 0 {
            return bad("output_size must be positive");
        }
        if !(self.nst_epsilon >= 0.0) {
            return bad("nst_epsilon must be non-negative");
        }
        Ok(())
    }
}

/// Medically irrelevant style sources.
#[derive(Debug, Clone, Default)]
pub struct StyleBank {
    pub styles: Vec<ImageTensor>,
}

impl StyleBank {
    pub fn new(styles: Vec<ImageTensor>) -> Self {
        Self { styles }
    }

    /// Loads every PNG/JPEG in `dir` in file-name order, shrinking images
    /// whose longer side exceeds `max_side`.
    pub fn load_dir(dir: &Path, max_side: usize) -> Result<Self, AugmentError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("png" | "jpg" | "jpeg")
                )
            })
            .collect();
        paths.sort();
        let mut styles = Vec::with_capacity(paths.len());
        for p in paths {
            let img = load_image(&p)?;
            let side = img.height().max(img.width());
            let img = if side > max_side {
                let h = (img.height() * max_side / side).max(1);
                let w = (img.width() * max_side / side).max(1);
                resize(&img, h, w)?
            } else {
                img
            };
            styles.push(img);
        }
        Ok(Self { styles })
    }

    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }
}

pub fn hflip(img: &ImageTensor) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    ImageTensor::from_fn(h, w, |y, x| img.pixel(y, w - 1 - x))
}

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn crop(img: &ImageTensor, top: usize, left: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, |y, x| img.pixel(top + y, left + x))
}

/// Rotation about the image centre, bilinear sampling, reflect padding.
pub fn rotate(img: &ImageTensor, degrees: f64) -> ImageTensor {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    ImageTensor::from_fn(h, w, |y, x| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let sy = cy + cos * dy - sin * dx;
        let sx = cx + sin * dy + cos * dx;
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let (ya, yb) = (reflect(y0, h), reflect(y0 + 1, h));
        let (xa, xb) = (reflect(x0, w), reflect(x0 + 1, w));
        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = img.get(ya, xa, c) * (1.0 - fx) + img.get(ya, xb, c) * fx;
            let bottom = img.get(yb, xa, c) * (1.0 - fx) + img.get(yb, xb, c) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    })
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Brightness, contrast and saturation factors applied in that order, each
/// followed by clamping.
pub fn color_jitter(img: &ImageTensor, brightness: f32, contrast: f32, saturation: f32) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut data = img.data().to_vec();
    if brightness != 1.0 {
        for v in &mut data {
            *v = (*v * brightness).clamp(0.0, 1.0);
        }
    }
    if contrast != 1.0 {
        let mean = data.chunks_exact(3).map(luma).sum::<f32>() / (h * w) as f32;
        for v in &mut data {
            *v = (mean + contrast * (*v - mean)).clamp(0.0, 1.0);
        }
    }
    if saturation != 1.0 {
        for px in data.chunks_exact_mut(3) {
            let g = luma(px);
            for v in px {
                *v = (g + saturation * (*v - g)).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_clamped(h, w, data)
}

/// Separable Gaussian blur, kernel radius `ceil(3 sigma)`, reflect padding.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> ImageTensor {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - radius, w);
                    acc += wt * src[(y * w + xx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    let yy = reflect(y as isize + k as isize - radius, h);
                    acc += wt * tmp[(yy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    ImageTensor::from_clamped(h, w, out)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Crop-resize, flip, rotate, colour jitter, blur, in that order.
pub fn apply_regular<R: Rng + ?Sized>(img: &ImageTensor, policy: &AugmentationPolicy, rng: &mut R) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let scale = uniform(rng, policy.crop_scale).sqrt();
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let cropped = if (ch, cw) == (h, w) { img.clone() } else { crop(img, top, left, ch, cw) };
    let size = policy.output_size;
    let mut out = resize(&cropped, size, size).expect("output_size validated positive");

    if rng.random::<f64>() < policy.p_hflip {
        out = hflip(&out);
    }
    let angle = uniform(rng, policy.rotation_deg);
    out = rotate(&out, angle);

    let factor = |rng: &mut R, delta: f64| if delta > 0.0 { rng.random_range(1.0 - delta..1.0 + delta) as f32 } else { 1.0 };
    let b = factor(rng, policy.brightness);
    let c = factor(rng, policy.contrast);
    let s = factor(rng, policy.saturation);
    out = color_jitter(&out, b, c, s);

    if rng.random::<f64>() < policy.p_blur {
        let sigma = uniform(rng, policy.blur_sigma);
        out = gaussian_blur(&out, sigma);
    }
    out
}

#[derive(Debug, Clone)]
pub struct ViewPair {
    pub views: [ImageTensor; 2],
    /// Style bank index used for each view, if NST was applied.
    pub styles: [Option<usize>; 2],
}

/// Two independently augmented views. Each view draws its own generator
/// from `rng`, applies NST with probability `p_nst` and then the regular
/// transforms.
pub fn make_view_pair<R: Rng + ?Sized>(
    img: &ImageTensor,
    policy: &AugmentationPolicy,
    bank: &StyleBank,
    codec: &dyn FeatureCodec,
    rng: &mut R,
) -> Result<ViewPair, AugmentError> {
    if policy.p_nst > 0.0 && bank.is_empty() {
        return Err(AugmentError::EmptyStyleBank(policy.p_nst));
    }
    let seeds = [rng.next_u64(), rng.next_u64()];
    let mut views = Vec::with_capacity(2);
    let mut styles = [None, None];
    for (v, seed) in seeds.into_iter().enumerate() {
        let mut vr = StreamRng::seed_from_u64(seed);
        let nst = vr.random::<f64>() < policy.p_nst;
        let base = if nst {
            let idx = vr.random_range(0..bank.len());
            styles[v] = Some(idx);
            nst_augment(img, &bank.styles[idx], policy.nst_alpha, policy.nst_epsilon, codec)?
        } else {
            img.clone()
        };
        views.push(apply_regular(&base, policy, &mut vr));
    }
    let j = views.pop().expect("two views");
    let i = views.pop().expect("two views");
    Ok(ViewPair { views: [i, j], styles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn textured(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |y, x| {
            let v = ((x * 7 + y * 3) % 11) as f32 / 10.0;
            [v, 0.5 * v + 0.2, 1.0 - v]
        })
    }

    #[test]
    fn hflip_mirrors() {
        let img = ImageTensor::new(2, 2, vec![0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.3, 0.3, 0.3, 0.4, 0.4, 0.4]).unwrap();
        let f = hflip(&img);
        assert_eq!(f.pixel(0, 0), img.pixel(0, 1));
        assert_eq!(f.pixel(0, 1), img.pixel(0, 0));
        assert_eq!(f.pixel(1, 0), img.pixel(1, 1));
        assert_eq!(f.pixel(1, 1), img.pixel(1, 0));
    }

    #[test]
    fn disabled_policy_is_resize_only() {
        let img = textured(20, 20);
        let p = AugmentationPolicy::disabled(16);
        let out = apply_regular(&img, &p, &mut rng_from_seed(1));
        assert_eq!(out, resize(&img, 16, 16).unwrap());
        let same = apply_regular(&img, &AugmentationPolicy::disabled(20), &mut rng_from_seed(2));
        assert_eq!(same, img);
    }

    #[test]
    fn regular_is_deterministic_and_in_range() {
        let img = textured(40, 30);
        let p = AugmentationPolicy { output_size: 24, ..Default::default() };
        let a = apply_regular(&img, &p, &mut rng_from_seed(9));
        let b = apply_regular(&img, &p, &mut rng_from_seed(9));
        assert_eq!(a, b);
        assert_eq!((a.height(), a.width()), (24, 24));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let c = apply_regular(&img, &p, &mut rng_from_seed(10));
        assert_ne!(a, c);
    }

    #[test]
    fn default_output_is_224() {
        let img = textured(64, 48);
        let out = apply_regular(&img, &AugmentationPolicy::default(), &mut rng_from_seed(3));
        assert_eq!((out.height(), out.width()), (224, 224));
    }

    #[test]
    fn rotation_by_zero_and_full_turn() {
        let img = textured(9, 9);
        assert_eq!(rotate(&img, 0.0), img);
        assert!(rotate(&img, 360.0).max_abs_diff(&img) < 1e-4);
        let r90 = rotate(&img, 90.0);
        // 90 degrees about the centre permutes pixels exactly.
        let mut a: Vec<u32> = r90.data().iter().map(|v| (v * 1e4).round() as u32).collect();
        let mut b: Vec<u32> = img.data().iter().map(|v| (v * 1e4).round() as u32).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn blur_keeps_constants_and_smooths() {
        let c = ImageTensor::filled(10, 10, [0.3, 0.6, 0.9]);
        assert!(gaussian_blur(&c, 1.5).max_abs_diff(&c) < 1e-6);
        let img = textured(16, 16);
        let blurred = gaussian_blur(&img, 2.0);
        let var = |t: &ImageTensor| {
            let m = t.data().iter().sum::<f32>() / t.data().len() as f32;
            t.data().iter().map(|v| (v - m).powi(2)).sum::<f32>()
        };
        assert!(var(&blurred) < var(&img));
    }

    #[test]
    fn jitter_identity_factors() {
        let img = textured(8, 8);
        assert_eq!(color_jitter(&img, 1.0, 1.0, 1.0), img);
        let gray = color_jitter(&img, 1.0, 1.0, 0.0);
        assert!(gray.data().chunks(3).all(|p| (p[0] - p[1]).abs() < 1e-6 && (p[1] - p[2]).abs() < 1e-6));
    }

    #[test]
    fn policy_validation() {
        AugmentationPolicy::default().validate().unwrap();
        let bad = AugmentationPolicy { p_nst: 1.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentationPolicy { crop_scale: [0.9, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn view_pair_without_nst() {
        let img = textured(20, 20);
        let p = AugmentationPolicy { output_size: 16, p_nst: 0.0, ..Default::default() };
        let pair = make_view_pair(&img, &p, &StyleBank::default(), &IdentityCodec, &mut rng_from_seed(4)).unwrap();
        assert_eq!(pair.styles, [None, None]);
        let again = make_view_pair(&img, &p, &StyleBank::default(), &IdentityCodec, &mut rng_from_seed(4)).unwrap();
        assert_eq!(pair.views, again.views);
        assert_ne!(pair.views[0], pair.views[1]);
    }

    #[test]
    fn view_pair_requires_styles() {
        let img = textured(20, 20);
        let p = AugmentationPolicy { output_size: 16, ..Default::default() };
        assert!(matches!(
            make_view_pair(&img, &p, &StyleBank::default(), &IdentityCodec, &mut rng_from_seed(4)),
            Err(AugmentError::EmptyStyleBank(_))
        ));
    }

    #[test]
    fn view_pair_carries_style_statistics() {
        let img = textured(16, 16);
        let styles: Vec<ImageTensor> = (0..4)
            .map(|k| {
                ImageTensor::from_fn(12, 12, |y, x| {
                    let t = ((x + 2 * y + k) % 5) as f32 / 4.0;
                    let base = 0.2 + 0.1 * k as f32;
                    [base + 0.2 * t, base + 0.1 * (1.0 - t), 0.5 - 0.05 * k as f32 + 0.1 * t]
                })
            })
            .collect();
        let bank = StyleBank::new(styles);
        let p = AugmentationPolicy { p_nst: 1.0, nst_alpha: 1.0, nst_epsilon: 0.0, ..AugmentationPolicy::disabled(16) };
        let mut seen = std::collections::HashSet::new();
        for seed in 0..8 {
            let pair = make_view_pair(&img, &p, &bank, &IdentityCodec, &mut rng_from_seed(seed)).unwrap();
            for (view, style) in pair.views.iter().zip(pair.styles) {
                let idx = style.expect("p_nst = 1 always stylises");
                seen.insert(idx);
                let got = channel_stats(&IdentityCodec.encode(view).unwrap());
                let want = channel_stats(&IdentityCodec.encode(&bank.styles[idx]).unwrap());
                for (g, w) in got.iter().zip(&want) {
                    assert!((g.mean - w.mean).abs() < 1e-5 && (g.std - w.std).abs() < 1e-5);
                }
            }
        }
        assert!(seen.len() > 1);
    }

    #[test]
    fn style_bank_loads_directory() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["b.png", "a.png"].iter().enumerate() {
            ImageTensor::filled(40, 20, [0.1 * i as f32, 0.5, 0.5]).save_png(&dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let bank = StyleBank::load_dir(dir.path(), 16).unwrap();
        assert_eq!(bank.len(), 2);
        assert_eq!((bank.styles[0].height(), bank.styles[0].width()), (16, 8));
        // a.png sorts first and was written with red 0.1.
        assert!((bank.styles[0].get(0, 0, 0) - 0.1).abs() < 0.01);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn views_keep_shape_and_range(seed in any::<u64>(), h in 8usize..40, w in 8usize..40) {
                let img = textured(h, w);
                let bank = StyleBank::new(vec![textured(10, 10)]);
                let p = AugmentationPolicy { output_size: 20, ..Default::default() };
                let pair = make_view_pair(&img, &p, &bank, &IdentityCodec, &mut rng_from_seed(seed)).unwrap();
                for v in &pair.views {
                    prop_assert_eq!((v.height(), v.width()), (20, 20));
                    prop_assert!(v.data().iter().all(|x| (0.0..=1.0).contains(x)));
                }
            }
        }
    }
}

//! Adaptive instance normalization and style-transfer augmentation.

use crate::image::ImageTensor;

use super::AugmentError;

/// C x H x W feature map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "feature map size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

fn stats_of(values: &[f64]) -> ChannelStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    ChannelStats { mean, std: var.sqrt() }
}

pub fn channel_stats(features: &FeatureMap) -> Vec<ChannelStats> {
    (0..features.channels).map(|c| stats_of(features.channel(c))).collect()
}

/// Per channel: `std_s * (x - mean_c) / (std_c + epsilon) + mean_s`. A
/// channel whose denominator is zero maps to the style mean.
pub fn adain(content: &FeatureMap, style: &FeatureMap, epsilon: f64) -> Result<FeatureMap, AugmentError> {
    if content.channels != style.channels {
        return Err(AugmentError::ChannelMismatch {
            content: content.channels,
            style: style.channels,
        });
    }
    let cs = channel_stats(content);
    let ss = channel_stats(style);
    let mut out = content.clone();
    for (ch, (c, s)) in cs.iter().zip(&ss).enumerate() {
        let denom = c.std + epsilon;
        let values = out.channel_mut(ch);
        if denom == 0.0 {
            values.fill(s.mean);
        } else {
            let scale = s.std / denom;
            for v in values {
                *v = scale * (*v - c.mean) + s.mean;
            }
        }
    }
    Ok(out)
}

/// Maps images into a feature space where AdaIN is applied and back.
pub trait FeatureCodec: Send + Sync {
    fn encode(&self, img: &ImageTensor) -> Result<FeatureMap, AugmentError>;
    /// Decodes and clamps into a valid image.
    fn decode(&self, features: &FeatureMap) -> Result<ImageTensor, AugmentError>;
    /// Worst-case `|decode(encode(x)) - x|`.
    fn tolerance(&self) -> f64;
}

/// Pixel space: AdaIN becomes per-channel colour-statistics transfer.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl FeatureCodec for IdentityCodec {
    fn encode(&self, img: &ImageTensor) -> Result<FeatureMap, AugmentError> {
        let (h, w) = (img.height(), img.width());
        let mut data = vec![0.0; 3 * h * w];
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = f64::from(px[c]);
            }
        }
        Ok(FeatureMap::new(3, h, w, data))
    }

    fn decode(&self, f: &FeatureMap) -> Result<ImageTensor, AugmentError> {
        if f.channels != 3 {
            return Err(AugmentError::Codec(format!("identity codec expects 3 channels, got {}", f.channels)));
        }
        let n = f.height * f.width;
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                data.push(f.data[c * n + i] as f32);
            }
        }
        Ok(ImageTensor::from_clamped(f.height, f.width, data))
    }

    fn tolerance(&self) -> f64 {
        0.0
    }
}

/// Blended stylised features `alpha * adain(f(img), f(style)) + (1 - alpha) * f(img)`
/// before decoding.
pub fn nst_features(
    img: &ImageTensor,
    style: &ImageTensor,
    alpha: f64,
    epsilon: f64,
    codec: &dyn FeatureCodec,
) -> Result<FeatureMap, AugmentError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AugmentError::Alpha(alpha));
    }
    let content = codec.encode(img)?;
    let style_f = codec.encode(style)?;
    let mut stylised = adain(&content, &style_f, epsilon)?;
    if alpha < 1.0 {
        for (s, c) in stylised.data.iter_mut().zip(&content.data) {
            *s = alpha * *s + (1.0 - alpha) * c;
        }
    }
    Ok(stylised)
}

pub fn nst_augment(
    img: &ImageTensor,
    style: &ImageTensor,
    alpha: f64,
    epsilon: f64,
    codec: &dyn FeatureCodec,
) -> Result<ImageTensor, AugmentError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AugmentError::Alpha(alpha));
    }
    if alpha == 0.0 {
        return Ok(img.clone());
    }
    codec.decode(&nst_features(img, style, alpha, epsilon, codec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(channels: Vec<Vec<f64>>) -> FeatureMap {
        let n = channels[0].len();
        let c = channels.len();
        FeatureMap::new(c, 1, n, channels.into_iter().flatten().collect())
    }

    #[test]
    fn stats_worked_examples() {
        let s = channel_stats(&fm(vec![vec![1.0, 2.0, 3.0, 4.0]]))[0];
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
        let s = channel_stats(&fm(vec![vec![7.0; 5]]))[0];
        assert_eq!((s.mean, s.std), (7.0, 0.0));
        let s = channel_stats(&fm(vec![vec![-3.5]]))[0];
        assert_eq!((s.mean, s.std), (-3.5, 0.0));
    }

    #[test]
    fn adain_affine_worked_example() {
        let out = adain(&fm(vec![vec![1.0, 2.0, 3.0, 4.0]]), &fm(vec![vec![0.0, 2.0, 4.0, 6.0]]), 0.0).unwrap();
        for (o, e) in out.data.iter().zip([0.0, 2.0, 4.0, 6.0]) {
            assert!((o - e).abs() < 1e-12, "{o} vs {e}");
        }
    }

    #[test]
    fn adain_constant_content() {
        let out = adain(&fm(vec![vec![0.3; 6]]), &fm(vec![vec![1.0, 5.0, 2.0, 0.0, 3.0, 1.0]]), 1e-5).unwrap();
        assert!(out.data.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let out = adain(&fm(vec![vec![0.3; 6]]), &fm(vec![vec![1.0, 3.0, 2.0, 0.0, 3.0, 3.0]]), 0.0).unwrap();
        assert!(out.data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn adain_self_is_identity() {
        let x = fm(vec![vec![0.1, 0.9, 0.4, 0.3], vec![2.0, -1.0, 0.5, 0.0]]);
        let out = adain(&x, &x, 0.0).unwrap();
        for (a, b) in out.data.iter().zip(&x.data) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn adain_channel_mismatch() {
        let a = fm(vec![vec![1.0, 2.0]]);
        let b = fm(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matches!(adain(&a, &b, 0.0), Err(AugmentError::ChannelMismatch { .. })));
    }

    fn ramp(h: usize, w: usize, offset: f32, scale: f32) -> ImageTensor {
        ImageTensor::from_fn(h, w, |y, x| {
            let t = ((y * w + x) as f32) / ((h * w) as f32);
            [offset + scale * t, offset + scale * (1.0 - t), offset + scale * (t * t)]
        })
    }

    #[test]
    fn nst_alpha_zero_is_identity() {
        let img = ramp(8, 8, 0.1, 0.5);
        let style = ramp(9, 5, 0.4, 0.2);
        assert_eq!(nst_augment(&img, &style, 0.0, 1e-5, &IdentityCodec).unwrap(), img);
    }

    #[test]
    fn nst_alpha_one_matches_style_stats() {
        let img = ramp(8, 8, 0.1, 0.5);
        let style = ramp(9, 5, 0.4, 0.2);
        let f = nst_features(&img, &style, 1.0, 0.0, &IdentityCodec).unwrap();
        let got = channel_stats(&f);
        let want = channel_stats(&IdentityCodec.encode(&style).unwrap());
        for (g, w) in got.iter().zip(&want) {
            assert!((g.mean - w.mean).abs() < 1e-6);
            assert!((g.std - w.std).abs() < 1e-6);
        }
        // Second application changes nothing.
        let once = nst_augment(&img, &style, 1.0, 0.0, &IdentityCodec).unwrap();
        let twice = nst_augment(&once, &style, 1.0, 0.0, &IdentityCodec).unwrap();
        assert!(once.max_abs_diff(&twice) <= 1e-6);
    }

    #[test]
    fn identity_codec_round_trip() {
        let img = ramp(10, 7, 0.0, 1.0);
        let back = IdentityCodec.decode(&IdentityCodec.encode(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        assert!(nst_augment(&img, &img, 1.5, 0.0, &IdentityCodec).is_err());
    }

    fn arb_map() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..4, 2usize..20).prop_flat_map(|(c, n)| {
            (Just(c), Just(n), proptest::collection::vec(-10.0f64..10.0, c * n))
        })
    }

    fn nonconstant(f: &FeatureMap) -> bool {
        channel_stats(f).iter().all(|s| s.std > 1e-3)
    }

    proptest! {
        #[test]
        fn adain_matches_style_stats((c, n, content) in arb_map(), style_seed in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let content = FeatureMap::new(c, 1, n, content);
            prop_assume!(nonconstant(&content));
            let m = style_seed.len();
            let style = FeatureMap::new(c, 1, m, (0..c * m).map(|i| style_seed[i % m] * (1.0 + i as f64 / 7.0)).collect());
            let out = adain(&content, &style, 0.0).unwrap();
            for (o, s) in channel_stats(&out).iter().zip(channel_stats(&style)) {
                prop_assert!((o.mean - s.mean).abs() < 1e-6);
                prop_assert!((o.std - s.std).abs() < 1e-6);
            }
            let again = adain(&out, &style, 0.0).unwrap();
            for (a, b) in again.data.iter().zip(&out.data) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn adain_ignores_content_affine((c, n, content) in arb_map(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let x = FeatureMap::new(c, 1, n, content);
            prop_assume!(nonconstant(&x));
            let style = FeatureMap::new(c, 1, n, x.data.iter().map(|v| (v * 1.7).sin()).collect());
            let mut shifted = x.clone();
            for v in &mut shifted.data {
                *v = a * *v + b;
            }
            let p = adain(&x, &style, 0.0).unwrap();
            let q = adain(&shifted, &style, 0.0).unwrap();
            for (u, v) in p.data.iter().zip(&q.data) {
                prop_assert!((u - v).abs() < 1e-6);
            }
        }
    }
}

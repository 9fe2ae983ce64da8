//! RGB image tensors, PNG/JPEG loading and bilinear resizing.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

/// Smallest side accepted when loading images from disk.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: expected 3 RGB channels, found {channels}")]
    NotRgb { path: String, channels: u8 },
    #[error("{path}: zero-area image")]
    ZeroArea { path: String },
    #[error("{path}: {height}x{width} is below the {MIN_SIDE}-pixel minimum")]
    TooSmall { path: String, height: usize, width: usize },
    #[error("image buffer of {len} values does not match {height}x{width}x3")]
    BadBuffer { height: usize, width: usize, len: usize },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f32),
    #[error("degenerate resize target {0}x{1}")]
    DegenerateSize(usize, usize),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// H x W x 3 image, row-major with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(ImageError::BadBuffer {
                height,
                width,
                len: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange(v));
        }
        Ok(Self { height, width, data })
    }

    /// Builds from values that are clamped into [0, 1]; NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * 3, "buffer size");
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::from_clamped(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Per-pixel luminance `0.299 R + 0.587 G + 0.114 B`.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let raw = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized by construction")
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| ImageError::Write {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Decodes an 8- or 16-bit RGB PNG/JPEG into [0, 1].
pub fn load_image(path: &Path) -> Result<ImageTensor, ImageError> {
    let name = || path.display().to_string();
    let img = image::ImageReader::open(path)
        .map_err(|e| ImageError::Unreadable {
            path: name(),
            source: image::ImageError::IoError(e),
        })?
        .with_guessed_format()
        .map_err(|e| ImageError::Unreadable {
            path: name(),
            source: image::ImageError::IoError(e),
        })?
        .decode()
        .map_err(|source| ImageError::Unreadable { path: name(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(ImageError::ZeroArea { path: name() });
    }
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(ImageError::TooSmall {
            path: name(),
            height: h,
            width: w,
        });
    }
    let data: Vec<f32> = match img {
        DynamicImage::ImageRgb8(buf) => buf.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| (f64::from(v) / 65535.0) as f32)
            .collect(),
        other => {
            return Err(ImageError::NotRgb {
                path: name(),
                channels: other.color().channel_count(),
            })
        }
    };
    ImageTensor::new(h, w, data)
}

/// Bilinear resize with corner pixel centres aligned: output pixel `i`
/// samples source coordinate `i * (in - 1) / (out - 1)`.
pub fn resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor, ImageError> {
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::DegenerateSize(out_h, out_w));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|i| {
                let src = if n_out == 1 || n_in == 1 {
                    0.0
                } else {
                    i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let lo = (src.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(img.height, out_h);
    let xs = axis(img.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bottom = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(ImageTensor::from_clamped(out_h, out_w, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    #[test]
    fn load_scales_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("a.png");
        let mut buf8 = ImageBuffer::<Rgb<u8>, _>::new(8, 8);
        buf8.put_pixel(0, 0, Rgb([255, 0, 128]));
        buf8.save(&p8).unwrap();
        let img = load_image(&p8).unwrap();
        assert_eq!((img.height(), img.width()), (8, 8));
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(0, 0, 1), 0.0);

        let p16 = dir.path().join("b.png");
        let mut buf16 = ImageBuffer::<Rgb<u16>, _>::new(9, 10);
        buf16.put_pixel(0, 0, Rgb([32768, 0, 65535]));
        buf16.save(&p16).unwrap();
        let img = load_image(&p16).unwrap();
        assert_eq!((img.height(), img.width()), (10, 9));
        assert!((f64::from(img.get(0, 0, 0)) - 32768.0 / 65535.0).abs() < 1e-7);
        assert_eq!(img.get(0, 0, 2), 1.0);
    }

    #[test]
    fn load_rejects_gray_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        ImageBuffer::<Luma<u8>, _>::new(8, 8).save(&p).unwrap();
        assert!(matches!(load_image(&p), Err(ImageError::NotRgb { channels: 1, .. })));
        assert!(matches!(
            load_image(&dir.path().join("missing.png")),
            Err(ImageError::Unreadable { .. })
        ));
        let tiny = dir.path().join("t.png");
        ImageBuffer::<Rgb<u8>, _>::new(4, 4).save(&tiny).unwrap();
        assert!(matches!(load_image(&tiny), Err(ImageError::TooSmall { .. })));
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageTensor::from_fn(12, 12, |y, x| [(y as f32) / 11.0, (x as f32) / 11.0, 0.3]);
        assert_eq!(resize(&img, 12, 12).unwrap().max_abs_diff(&img), 0.0);
        let c = ImageTensor::filled(13, 7, [0.25, 0.5, 0.75]);
        let r = resize(&c, 20, 31).unwrap();
        assert!(r.data().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
        assert!(resize(&c, 0, 4).is_err());
    }

    #[test]
    fn resize_two_by_two_ramp() {
        let img = ImageTensor::from_fn(2, 2, |_, x| {
            let v = x as f32;
            [v, v, v]
        });
        let r = resize(&img, 4, 4).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for y in 0..4 {
            for (x, e) in expected.iter().enumerate() {
                for c in 0..3 {
                    assert!((r.get(y, x, c) - e).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(9, 11, |y, x| [((y * 11 + x) % 256) as f32 / 255.0, 0.0, 1.0]);
        let p = dir.path().join("r.png");
        img.save_png(&p).unwrap();
        assert!(load_image(&p).unwrap().max_abs_diff(&img) < 1e-6);
    }
}

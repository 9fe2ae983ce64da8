//! Synthetic shape-versus-texture fixture.
//!
//! Every image is a random texture (stripes, checkerboard, noise, gradient
//! or dot lattice in random colours). Referable images also carry a few
//! small solid discs standing in for lesions. Patients come in pairs of
//! eyes sharing a class.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_patient_splits, DataError, DatasetManifest, DrGrade, Eye, FundusRecord, SplitFractions};
use crate::image::{ImageError, ImageTensor};
use crate::rng::SeedTree;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("need at least 4 labeled images, got {0}")]
    TooFew(usize),
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("cannot create {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Labeled images.
    pub n: usize,
    /// Extra images written to `unlabeled.csv` for pretraining.
    pub n_unlabeled: usize,
    pub image_size: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub n_styles: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 100,
            n_unlabeled: 0,
            image_size: 48,
            val_fraction: 0.0,
            test_fraction: 0.5,
            n_styles: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Labeled manifest with split tags.
    pub manifest: DatasetManifest,
    pub unlabeled: Option<DatasetManifest>,
    pub manifest_path: PathBuf,
    pub splits_path: PathBuf,
    pub unlabeled_path: Option<PathBuf>,
    pub styles_dir: PathBuf,
}

const SENSOR_NOISE: f32 = 0.03;

#[derive(Debug, Clone, Copy)]
enum Texture {
    Stripes { freq: f32, angle: f32, phase: f32 },
    Checker { cell: f32, angle: f32 },
    Noise { seed: u32 },
    Gradient { angle: f32 },
    Dots { spacing: f32, radius: f32 },
}

#[derive(Debug, Clone, Copy)]
struct Paint {
    texture: Texture,
    a: [f32; 3],
    b: [f32; 3],
}

fn hash_noise(seed: u32, x: usize, y: usize) -> f32 {
    let mut h = seed ^ (x as u32).wrapping_mul(0x9E37_79B1) ^ (y as u32).wrapping_mul(0x85EB_CA77);
    h ^= h >> 15;
    h = h.wrapping_mul(0x2C1B_3C6D);
    h ^= h >> 12;
    h = h.wrapping_mul(0x297A_2D39);
    h ^= h >> 15;
    (h & 0xFFFF) as f32 / 65535.0
}

impl Paint {
    fn random<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Self {
        let s = size as f32;
        let texture = match rng.random_range(0..5) {
            0 => Texture::Stripes {
                freq: rng.random_range(2.0..6.0) / s,
                angle: rng.random_range(0.0..std::f32::consts::PI),
                phase: rng.random_range(0.0..1.0),
            },
            1 => Texture::Checker {
                cell: rng.random_range(0.06..0.18) * s,
                angle: rng.random_range(0.0..std::f32::consts::FRAC_PI_2),
            },
            2 => Texture::Noise { seed: rng.random() },
            3 => Texture::Gradient {
                angle: rng.random_range(0.0..std::f32::consts::TAU),
            },
            _ => Texture::Dots {
                spacing: rng.random_range(0.12..0.25) * s,
                radius: rng.random_range(0.25..0.45),
            },
        };
        let mut colour = || [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        Self { texture, a: colour(), b: colour() }
    }

    fn at(&self, y: usize, x: usize, size: usize) -> [f32; 3] {
        let (fx, fy) = (x as f32, y as f32);
        let t = match self.texture {
            Texture::Stripes { freq, angle, phase } => {
                let u = fx * angle.cos() + fy * angle.sin();
                0.5 + 0.5 * (std::f32::consts::TAU * (u * freq + phase)).sin()
            }
            Texture::Checker { cell, angle } => {
                let u = fx * angle.cos() + fy * angle.sin();
                let v = -fx * angle.sin() + fy * angle.cos();
                (((u / cell).floor() + (v / cell).floor()).rem_euclid(2.0) == 0.0) as u8 as f32
            }
            Texture::Noise { seed } => hash_noise(seed, x / 2, y / 2),
            Texture::Gradient { angle } => {
                let c = (size as f32 - 1.0) / 2.0;
                let u = ((fx - c) * angle.cos() + (fy - c) * angle.sin()) / size as f32;
                (u + 0.5).clamp(0.0, 1.0)
            }
            Texture::Dots { spacing, radius } => {
                let dx = (fx / spacing).fract() - 0.5;
                let dy = (fy / spacing).fract() - 0.5;
                ((dx * dx + dy * dy).sqrt() < radius) as u8 as f32
            }
        };
        [0, 1, 2].map(|c| self.a[c] + t * (self.b[c] - self.a[c]))
    }
}

/// Renders one image: a random texture, plus 3 to 7 small solid discs in
/// a contrasting colour when `referable`.
pub fn render_sample<R: Rng + ?Sized>(size: usize, referable: bool, rng: &mut R) -> ImageTensor {
    let background = Paint::random(rng, size);
    let mut lesion = Paint::random(rng, size).a;
    for c in 0..3 {
        if (lesion[c] - background.a[c]).abs() < 0.15 {
            lesion[c] = (background.a[c] + 0.4) % 0.8 + 0.1;
        }
    }
    let s = size as f32;
    let count = rng.random_range(3..=7);
    let discs: Vec<(f32, f32, f32)> = (0..count)
        .map(|_| (rng.random_range(0.15..0.85) * s, rng.random_range(0.15..0.85) * s, rng.random_range(0.04..0.07) * s))
        .collect();
    ImageTensor::from_fn(size, size, |y, x| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let hit = referable && discs.iter().any(|&(cx, cy, r)| (px - cx).powi(2) + (py - cy).powi(2) <= r * r);
        let rgb = if hit { lesion } else { background.at(y, x, size) };
        // Faint sensor noise keeps smooth backgrounds above the sharpness floor.
        rgb.map(|v| (v + rng.random_range(-SENSOR_NOISE..SENSOR_NOISE)).clamp(0.0, 1.0))
    })
}

/// Colourful style images made of overlapping saturated patterns.
pub fn render_style<R: Rng + ?Sized>(size: usize, rng: &mut R) -> ImageTensor {
    let layers: Vec<Paint> = (0..3)
        .map(|_| {
            let mut p = Paint::random(rng, size);
            for c in 0..3 {
                p.a[c] = if rng.random::<bool>() { rng.random_range(0.0..0.3) } else { rng.random_range(0.7..1.0) };
                p.b[c] = if rng.random::<bool>() { rng.random_range(0.0..0.3) } else { rng.random_range(0.7..1.0) };
            }
            p
        })
        .collect();
    ImageTensor::from_fn(size, size, |y, x| {
        let mut acc = [0.0f32; 3];
        for l in &layers {
            let v = l.at(y, x, size);
            for c in 0..3 {
                acc[c] += v[c] / layers.len() as f32;
            }
        }
        acc.map(|v| ((v - 0.5) * 1.8 + 0.5).clamp(0.0, 1.0))
    })
}

fn mkdir(path: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
}

fn write_group(out: &Path, prefix: &str, count: usize, size: usize, tree: &SeedTree) -> Result<Vec<FundusRecord>, SynthError> {
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let patient = i / 2;
        let referable = patient % 2 == 0;
        let id = format!("{prefix}{i:05}");
        let mut rng = tree.rng(&format!("img/{id}"));
        let grade = if referable { rng.random_range(2..=4) } else { rng.random_range(0..=1) };
        let img = render_sample(size, referable, &mut rng);
        let uri = format!("images/{id}.png");
        img.save_png(&out.join(&uri))?;
        records.push(FundusRecord {
            image_id: id,
            image_uri: uri,
            grade: DrGrade::new(grade)?,
            patient_id: format!("{prefix}P{patient:05}"),
            eye: if i % 2 == 0 { Eye::Right } else { Eye::Left },
        });
    }
    Ok(records)
}

/// Writes images, `manifest.csv`, `splits.csv`, optional `unlabeled.csv`
/// and a `styles/` bank under `out`.
pub fn generate(out: &Path, cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    if cfg.n < 4 {
        return Err(SynthError::TooFew(cfg.n));
    }
    if cfg.image_size < crate::image::MIN_SIDE {
        return Err(SynthError::Config(format!("image_size {} below {}", cfg.image_size, crate::image::MIN_SIDE)));
    }
    let fractions = SplitFractions {
        train: 1.0 - cfg.val_fraction - cfg.test_fraction,
        val: cfg.val_fraction,
        test: cfg.test_fraction,
    };
    let tree = SeedTree::new(cfg.seed).child("synth");
    mkdir(&out.join("images"))?;
    mkdir(&out.join("styles"))?;

    let labeled = write_group(out, "syn", cfg.n, cfg.image_size, &tree.child("labeled"))?;
    let manifest = DatasetManifest::new(labeled)?.with_root(out);
    let manifest = make_patient_splits(&manifest, fractions, tree.seed("splits"))?;
    let manifest_path = out.join("manifest.csv");
    let splits_path = out.join("splits.csv");
    manifest.write_csv(&manifest_path)?;
    manifest.write_splits_csv(&splits_path)?;

    let (unlabeled, unlabeled_path) = if cfg.n_unlabeled > 0 {
        let records = write_group(out, "unl", cfg.n_unlabeled, cfg.image_size, &tree.child("unlabeled"))?;
        let m = DatasetManifest::new(records)?.with_root(out);
        let path = out.join("unlabeled.csv");
        m.write_csv(&path)?;
        (Some(m), Some(path))
    } else {
        (None, None)
    };

    let styles_dir = out.join("styles");
    for k in 0..cfg.n_styles {
        render_style(cfg.image_size, &mut tree.rng(&format!("style/{k}"))).save_png(&styles_dir.join(format!("style{k:02}.png")))?;
    }
    Ok(SynthOutput {
        manifest,
        unlabeled,
        manifest_path,
        splits_path,
        unlabeled_path,
        styles_dir,
    })
}

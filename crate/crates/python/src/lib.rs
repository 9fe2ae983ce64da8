//! Python bindings for the fundus-cl core: contrastive loss, AdaIN, the
//! statistics module, run configs, checkpoints and the synthetic generator.

use std::path::PathBuf;

use fundus_cl_core::augment::{self, FeatureMap};
use fundus_cl_core::checkpoint::{self, Checkpoint as CoreCheckpoint, CheckpointKind};
use fundus_cl_core::config::RunConfig as CoreRunConfig;
use fundus_cl_core::contrastive;
use fundus_cl_core::data::DatasetManifest;
use fundus_cl_core::finetune::{predict_proba, ClassifierModel};
use fundus_cl_core::image::load_image;
use fundus_cl_core::quality::quality_metrics;
use fundus_cl_core::stats::{self, ScoredSet};
use fundus_cl_core::synth::{self, SynthConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scored(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<ScoredSet> {
    ScoredSet::new(scores, labels).map_err(value_err)
}

/// NT-Xent loss and gradient for a flat row-major `2N x dim` batch.
/// Rows 2k and 2k+1 are a positive pair.
#[pyfunction]
#[pyo3(signature = (z, dim, tau = 0.5))]
fn nt_xent(z: Vec<f64>, dim: usize, tau: f64) -> PyResult<(f64, Vec<f64>)> {
    let out = contrastive::nt_xent_loss(&z, dim, tau).map_err(value_err)?;
    Ok((out.loss, out.grad))
}

/// AdaIN on flat `channels x height x width` feature maps.
#[pyfunction]
#[pyo3(signature = (content, style, channels, height, width, epsilon = 0.0))]
fn adain(content: Vec<f64>, style: Vec<f64>, channels: usize, height: usize, width: usize, epsilon: f64) -> PyResult<Vec<f64>> {
    let len = channels * height * width;
    if content.len() != len || style.len() != len {
        return Err(PyValueError::new_err(format!("expected {len} values per feature map")));
    }
    let c = FeatureMap::new(channels, height, width, content);
    let s = FeatureMap::new(channels, height, width, style);
    let out = augment::adain(&c, &s, epsilon).map_err(value_err)?;
    Ok((0..channels).flat_map(|ch| out.channel(ch).to_vec()).collect())
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    stats::auc(&scored(scores, labels)?).map_err(value_err)
}

/// ROC points as `(threshold, fpr, tpr)`, starting at `(inf, 0, 0)`.
#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Vec<(f64, f64, f64)>> {
    let pts = stats::roc_points(&scored(scores, labels)?).map_err(value_err)?;
    Ok(pts.iter().map(|p| (p.threshold, p.fpr, p.tpr)).collect())
}

/// Paired DeLong test on two score vectors for the same labels.
/// Returns `(auc_a, auc_b, z, p)`.
#[pyfunction]
fn delong(scores_a: Vec<f64>, scores_b: Vec<f64>, labels: Vec<u8>) -> PyResult<(f64, f64, f64, f64)> {
    let a = scored(scores_a, labels.clone())?;
    let b = scored(scores_b, labels)?;
    let r = stats::delong_test(&a, &b).map_err(value_err)?;
    Ok((r.auc_a, r.auc_b, r.z, r.p))
}

/// AUC, sensitivity and specificity with bootstrap intervals, as a dict.
#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = None, resamples = 2000, seed = 0))]
fn evaluate<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<u8>, threshold: Option<f64>, resamples: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let r = stats::evaluate(&scored(scores, labels)?, threshold, resamples, seed).map_err(value_err)?;
    let d = PyDict::new(py);
    for (name, e) in [("auc", r.auc), ("sensitivity", r.sensitivity), ("specificity", r.specificity)] {
        d.set_item(name, (e.value, e.ci_low, e.ci_high))?;
    }
    d.set_item("threshold", r.threshold)?;
    d.set_item("threshold_source", r.threshold_source)?;
    d.set_item("n_pos", r.n_pos)?;
    d.set_item("n_neg", r.n_neg)?;
    Ok(d)
}

/// Mean luminance, sharpness and clipped fraction of an image file.
#[pyfunction]
fn image_quality(path: PathBuf) -> PyResult<(f64, f64, f64)> {
    let img = load_image(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let m = quality_metrics(&img);
    Ok((m.mean_luminance, m.sharpness, m.clipped_fraction))
}

/// Writes a synthetic labeled dataset and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, n = 100, n_unlabeled = 0, image_size = 48, seed = 0))]
fn synthesize(out: PathBuf, n: usize, n_unlabeled: usize, image_size: usize, seed: u64) -> PyResult<String> {
    let cfg = SynthConfig {
        n,
        n_unlabeled,
        image_size,
        seed,
        ..SynthConfig::default()
    };
    let o = synth::generate(&out, &cfg).map_err(value_err)?;
    Ok(o.manifest_path.display().to_string())
}

#[pyclass(module = "fundus_cl")]
struct RunConfig {
    inner: CoreRunConfig,
}

#[pymethods]
impl RunConfig {
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreRunConfig::from_toml(toml).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreRunConfig::load(&path).map_err(value_err)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn digest(&self) -> PyResult<String> {
        self.inner.digest().map_err(value_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_canonical_toml().map_err(value_err)
    }
}

#[pyclass(module = "fundus_cl")]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load_checkpoint(&path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(&self.inner, &path).map_err(value_err)
    }

    /// `contrastive` or `classifier`.
    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.meta.kind {
            CheckpointKind::Contrastive => "contrastive",
            CheckpointKind::Classifier => "classifier",
        }
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.meta.epoch
    }

    #[getter]
    fn config_digest(&self) -> String {
        self.inner.meta.config_digest.clone()
    }

    fn tensor_names(&self) -> Vec<String> {
        self.inner.tensors.iter().map(|(n, _)| n.clone()).collect()
    }
}

#[pyclass(module = "fundus_cl")]
struct Classifier {
    inner: ClassifierModel,
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = checkpoint::load_checkpoint(&path).map_err(value_err)?;
        Ok(Self {
            inner: ClassifierModel::from_checkpoint(&ckpt).map_err(value_err)?,
        })
    }

    #[getter]
    fn threshold(&self) -> Option<f64> {
        self.inner.threshold
    }

    /// Referable probability per manifest row; `None` where the image
    /// could not be read.
    fn predict_manifest(&self, py: Python<'_>, manifest: PathBuf) -> PyResult<Vec<Option<f64>>> {
        let m = DatasetManifest::read_csv(&manifest).map_err(value_err)?;
        let out = py.detach(|| predict_proba(&self.inner, &m));
        Ok(out.into_iter().map(Result::ok).collect())
    }
}

#[pymodule]
fn fundus_cl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(nt_xent, m)?)?;
    m.add_function(wrap_pyfunction!(adain, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(delong, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(image_quality, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_class::<RunConfig>()?;
    m.add_class::<Checkpoint>()?;
    m.add_class::<Classifier>()?;
    Ok(())
}

//! Minimal CPU network stack with hand-written backward passes.
//!
//! Activations use a channel-major batch layout `[C, N, H, W]`, which lets
//! a whole batch go through each convolution as a single matrix product.

mod conv;
mod encoder;
mod linear;
mod optim;

pub use conv::{col2im, conv_backward, conv_forward, im2col, ConvSpec};
pub use encoder::{Encoder, EncoderCache, EncoderConfig, EncoderFamily, StageConfig};
pub use linear::{Linear, ProjectionHead, ProjectionHeadConfig, ProjectionCache};
pub use optim::{Optimizer, OptimizerKind};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("expected {expected}x{expected}x3 images, got {height}x{width}")]
    InputShape { expected: usize, height: usize, width: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("expected {expected} features per row, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("invalid network config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape");
        Self { shape: shape.to_vec(), data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named parameters in a fixed order; layers refer to them by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Channel-major batch of activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Act {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![0.0; c * n * h * w],
        }
    }

    /// Packs images into `[3, N, H, W]`, subtracting 0.5 to centre inputs.
    pub fn from_images(images: &[&ImageTensor]) -> Self {
        let n = images.len();
        let (h, w) = (images[0].height(), images[0].width());
        let mut act = Act::zeros(3, n, h, w);
        let plane = h * w;
        for (b, img) in images.iter().enumerate() {
            for (i, px) in img.data().chunks_exact(3).enumerate() {
                for (c, v) in px.iter().enumerate() {
                    act.data[(c * n + b) * plane + i] = v - 0.5;
                }
            }
        }
        act
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// `C = A * B + beta * C` on strided operands (row stride, column stride).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows.max(1) - 1) * rs + (cols.max(1) - 1) * cs + 1;
    if k > 0 {
        assert!(a.len() >= span(m, k, rsa, csa), "gemm: A too small");
        assert!(b.len() >= span(k, n, rsb, csb), "gemm: B too small");
    }
    assert!(c.len() >= span(m, n, rsc, csc), "gemm: C too small");
    // SAFETY: the assertions above bound every strided access of the kernel
    // inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub(crate) fn relu_inplace(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the forward output was not positive.
pub(crate) fn relu_backward(grad: &mut [f32], out: &[f32]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32).sin()).collect();
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, &a, (k, 1), &b, (n, 1), 1.0, &mut c, (n, 1));
        for i in 0..m {
            for j in 0..n {
                let want: f32 = 1.0 + (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f32>();
                assert!((c[i * n + j] - want).abs() < 1e-4);
            }
        }
        // Transposed A via strides.
        let mut ct = vec![0.0; k * n];
        gemm(k, m, n, &a, (1, k), &c, (n, 1), 0.0, &mut ct, (n, 1));
        let want: f32 = (0..m).map(|p| a[p * k + 2] * c[p * n + 3]).sum();
        assert!((ct[2 * n + 3] - want).abs() < 1e-3);
    }

    #[test]
    fn images_pack_channel_major() {
        let a = ImageTensor::filled(2, 2, [0.5, 1.0, 0.0]);
        let b = ImageTensor::filled(2, 2, [0.75, 0.5, 0.25]);
        let act = Act::from_images(&[&a, &b]);
        assert_eq!((act.c, act.n, act.h, act.w), (3, 2, 2, 2));
        assert_eq!(&act.data[0..4], &[0.0; 4]);
        assert_eq!(&act.data[4..8], &[0.25; 4]);
        assert_eq!(&act.data[8..12], &[0.5; 4]);
    }
}

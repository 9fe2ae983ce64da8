use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, normal_tensor, relu_backward, relu_inplace, Matrix, NnError, ParamStore, Tensor};

/// Affine map `y = x W^T + b` with `W: [outputs, inputs]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(ps: &mut ParamStore, prefix: &str, inputs: usize, outputs: usize, std: f32, rng: &mut R) -> Self {
        let weight = ps.push(format!("{prefix}.weight"), normal_tensor(&[outputs, inputs], std, rng));
        let bias = ps.push(format!("{prefix}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols, self.inputs);
        let mut out = Matrix::zeros(x.rows, self.outputs);
        let bias = &ps.get(self.bias).data;
        for row in out.data.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(bias);
        }
        gemm(x.rows, self.inputs, self.outputs, &x.data, (self.inputs, 1), &ps.get(self.weight).data, (1, self.inputs), 1.0, &mut out.data, (self.outputs, 1));
        out
    }

    pub fn backward(&self, ps: &ParamStore, x: &Matrix, dout: &Matrix, grads: &mut [Tensor], need_dx: bool) -> Option<Matrix> {
        let b = x.rows;
        gemm(self.outputs, b, self.inputs, &dout.data, (1, self.outputs), &x.data, (self.inputs, 1), 1.0, &mut grads[self.weight].data, (self.inputs, 1));
        let db = &mut grads[self.bias].data;
        for row in dout.data.chunks_exact(self.outputs) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = Matrix::zeros(b, self.inputs);
        gemm(b, self.outputs, self.inputs, &dout.data, (self.outputs, 1), &ps.get(self.weight).data, (self.inputs, 1), 0.0, &mut dx.data, (self.inputs, 1));
        Some(dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionHeadConfig {
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for ProjectionHeadConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            output_dim: 64,
        }
    }
}

impl ProjectionHeadConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden_dim < 2 || self.output_dim < 2 {
            return Err(NnError::Config("projection dims must be at least 2".into()));
        }
        Ok(())
    }
}

/// Two affine layers with a rectifier between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub config: ProjectionHeadConfig,
    pub params: ParamStore,
    fc1: Linear,
    fc2: Linear,
}

pub struct ProjectionCache {
    hidden: Matrix,
}

impl ProjectionHead {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, config: ProjectionHeadConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::default();
        let fc1 = Linear::register(&mut params, "projection.fc1", input_dim, config.hidden_dim, (2.0 / input_dim as f32).sqrt(), rng);
        let fc2 = Linear::register(&mut params, "projection.fc2", config.hidden_dim, config.output_dim, (1.0 / config.hidden_dim as f32).sqrt(), rng);
        Self { config, params, fc1, fc2 }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.inputs
    }

    pub fn forward(&self, h: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward_train(h)?.0)
    }

    pub fn forward_train(&self, h: &Matrix) -> Result<(Matrix, ProjectionCache), NnError> {
        if h.cols != self.fc1.inputs {
            return Err(NnError::FeatureDim {
                expected: self.fc1.inputs,
                got: h.cols,
            });
        }
        let mut hidden = self.fc1.forward(&self.params, h);
        relu_inplace(&mut hidden.data);
        let z = self.fc2.forward(&self.params, &hidden);
        Ok((z, ProjectionCache { hidden }))
    }

    /// Returns parameter gradients and the gradient with respect to `h`.
    pub fn backward(&self, h: &Matrix, cache: &ProjectionCache, dz: &Matrix) -> (Vec<Tensor>, Matrix) {
        let mut grads = self.params.zeros_like();
        let mut dhidden = self.fc2.backward(&self.params, &cache.hidden, dz, &mut grads, true).expect("dx requested");
        relu_backward(&mut dhidden.data, &cache.hidden.data);
        let dh = self.fc1.backward(&self.params, h, &dhidden, &mut grads, true).expect("dx requested");
        (grads, dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn identity_head(dim: usize) -> ProjectionHead {
        let mut head = ProjectionHead::new(dim, ProjectionHeadConfig { hidden_dim: dim, output_dim: dim }, &mut rng_from_seed(0));
        for name in ["projection.fc1.weight", "projection.fc2.weight"] {
            let w = head.params.by_name_mut(name).unwrap();
            w.data.fill(0.0);
            for i in 0..dim {
                w.data[i * dim + i] = 1.0;
            }
        }
        head
    }

    #[test]
    fn identity_head_passes_nonnegative_input() {
        let head = identity_head(4);
        let h = Matrix::from_vec(2, 4, vec![0.0, 1.0, 2.5, 3.0, 4.0, 0.5, 0.25, 0.0]);
        assert_eq!(head.forward(&h).unwrap(), h);
    }

    #[test]
    fn zero_input_gives_bias_path() {
        let mut head = identity_head(3);
        head.params.by_name_mut("projection.fc1.bias").unwrap().data = vec![1.0, -1.0, 2.0];
        head.params.by_name_mut("projection.fc2.bias").unwrap().data = vec![0.5, 0.5, 0.5];
        let z = head.forward(&Matrix::zeros(1, 3)).unwrap();
        assert_eq!(z.data, vec![1.5, 0.5, 2.5]);
    }

    #[test]
    fn rows_are_permutation_equivariant() {
        let head = ProjectionHead::new(5, ProjectionHeadConfig { hidden_dim: 7, output_dim: 3 }, &mut rng_from_seed(2));
        let h = Matrix::from_vec(3, 5, (0..15).map(|i| (i as f32 * 0.37).cos()).collect());
        let z = head.forward(&h).unwrap();
        let mut swapped = h.clone();
        swapped.data[..5].copy_from_slice(h.row(2));
        swapped.data[10..].copy_from_slice(h.row(0));
        let zs = head.forward(&swapped).unwrap();
        assert_eq!(zs.row(0), z.row(2));
        assert_eq!(zs.row(1), z.row(1));
        assert_eq!(zs.row(2), z.row(0));
        assert!(head.forward(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut head = ProjectionHead::new(4, ProjectionHeadConfig { hidden_dim: 6, output_dim: 3 }, &mut rng_from_seed(5));
        let h = Matrix::from_vec(2, 4, vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.4, 0.2, 0.9]);
        let probe = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.3, 0.7, -1.1]);
        let loss = |head: &ProjectionHead, h: &Matrix| -> f64 {
            head.forward(h).unwrap().data.iter().zip(&probe.data).map(|(a, b)| f64::from(a * b)).sum()
        };
        let (_, cache) = head.forward_train(&h).unwrap();
        let (grads, dh) = head.backward(&h, &cache, &probe);
        let eps = 1e-3;
        for t in 0..head.params.len() {
            for i in 0..head.params.get(t).numel().min(6) {
                let orig = head.params.get(t).data[i];
                head.params.get_mut(t).data[i] = orig + eps;
                let up = loss(&head, &h);
                head.params.get_mut(t).data[i] = orig - eps;
                let down = loss(&head, &h);
                head.params.get_mut(t).data[i] = orig;
                let fd = (up - down) / (2.0 * f64::from(eps));
                assert!((fd - f64::from(grads[t].data[i])).abs() < 1e-2, "param {t}[{i}]");
            }
        }
        for i in 0..h.data.len() {
            let mut hp = h.clone();
            hp.data[i] += eps;
            let mut hm = h.clone();
            hm.data[i] -= eps;
            let fd = (loss(&head, &hp) - loss(&head, &hm)) / (2.0 * f64::from(eps));
            assert!((fd - f64::from(dh.data[i])).abs() < 1e-2);
        }
    }
}

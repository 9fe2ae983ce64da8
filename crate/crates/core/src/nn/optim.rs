use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;
const MOMENTUM: f32 = 0.9;

/// Adam (0.9, 0.999, 1e-8) or SGD with momentum 0.9.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|t| vec![0.0; t.numel()]).collect::<Vec<_>>();
        Self {
            kind,
            lr: lr as f32,
            step: 0,
            m: zeros(),
            v: if kind == OptimizerKind::Adam { zeros() } else { Vec::new() },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update. `skip[i]` leaves tensor `i` untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], frozen: Option<&[bool]>) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    if frozen.is_some_and(|f| f[i]) {
                        continue;
                    }
                    for ((w, &g), m) in p.data.iter_mut().zip(&g.data).zip(&mut self.m[i]) {
                        *m = MOMENTUM * *m + g;
                        *w -= lr * *m;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - BETA1.powi(self.step);
                let bc2 = 1.0 - BETA2.powi(self.step);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    if frozen.is_some_and(|f| f[i]) {
                        continue;
                    }
                    let (ms, vs) = (&mut self.m[i], &mut self.v[i]);
                    for (((w, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(ms.iter_mut()).zip(vs.iter_mut()) {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conv_backward, conv_forward, normal_tensor, relu_backward, relu_inplace, Act, ConvSpec, Linear, Matrix, NnError, ParamStore, Tensor};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    SmallResnet,
    Resnet50Like,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub family: EncoderFamily,
    pub stages: Vec<StageConfig>,
    pub embedding_dim: usize,
    /// Side of the square input images.
    pub input_size: usize,
    pub stem_stride: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::small_resnet()
    }
}

impl EncoderConfig {
    /// Three stages of two basic residual blocks, widths 16/32/64.
    pub fn small_resnet() -> Self {
        Self {
            family: EncoderFamily::SmallResnet,
            stages: [16, 32, 64].iter().map(|&channels| StageConfig { blocks: 2, channels }).collect(),
            embedding_dim: 128,
            input_size: 224,
            stem_stride: 1,
        }
    }

    /// ResNet50-scale widths and depths (3-4-6-3, 2048-d embedding) built from
    /// basic blocks. Documented for completeness; too large for CPU training.
    pub fn resnet50_like() -> Self {
        Self {
            family: EncoderFamily::Resnet50Like,
            stages: [(3, 256), (4, 512), (6, 1024), (3, 2048)]
                .iter()
                .map(|&(blocks, channels)| StageConfig { blocks, channels })
                .collect(),
            embedding_dim: 2048,
            input_size: 224,
            stem_stride: 2,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.stages.is_empty() || self.stages.iter().any(|s| s.blocks == 0 || s.channels == 0) {
            return Err(NnError::Config("encoder needs at least one non-empty stage".into()));
        }
        if self.embedding_dim < 2 {
            return Err(NnError::Config("embedding_dim must be at least 2".into()));
        }
        if self.stem_stride == 0 || self.input_size < 2 {
            return Err(NnError::Config("input_size and stem_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// Parameter names and shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        layout(self).params.into_iter().map(|p| (p.name, p.shape)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    conv1: ConvSpec,
    conv2: ConvSpec,
    shortcut: Option<ConvSpec>,
}

struct ParamDecl {
    name: String,
    shape: Vec<usize>,
    std: f32,
}

struct Layout {
    params: Vec<ParamDecl>,
    stem: ConvSpec,
    blocks: Vec<Block>,
    fc: Linear,
}

fn layout(cfg: &EncoderConfig) -> Layout {
    let mut params: Vec<ParamDecl> = Vec::new();
    let mut conv = |name: String, cin: usize, cout: usize, kernel: usize, stride: usize, std: f32| {
        let weight = params.len();
        params.push(ParamDecl {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, kernel, kernel],
            std,
        });
        params.push(ParamDecl {
            name: format!("{name}.bias"),
            shape: vec![cout],
            std: 0.0,
        });
        ConvSpec {
            weight,
            bias: weight + 1,
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
        }
    };
    let he = |fan_in: usize| (2.0 / fan_in as f32).sqrt();
    let residual_scale = 1.0 / (cfg.total_blocks() as f32).sqrt();
    let width0 = cfg.stages[0].channels;
    let stem = conv("encoder.stem".into(), 3, width0, 3, cfg.stem_stride, he(27));
    let mut blocks = Vec::new();
    let mut cin = width0;
    for (s, stage) in cfg.stages.iter().enumerate() {
        for b in 0..stage.blocks {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let cout = stage.channels;
            let prefix = format!("encoder.stage{s}.block{b}");
            let conv1 = conv(format!("{prefix}.conv1"), cin, cout, 3, stride, he(cin * 9));
            let conv2 = conv(format!("{prefix}.conv2"), cout, cout, 3, 1, he(cout * 9) * residual_scale);
            let shortcut = (stride != 1 || cin != cout).then(|| conv(format!("{prefix}.shortcut"), cin, cout, 1, stride, (1.0 / cin as f32).sqrt()));
            blocks.push(Block { conv1, conv2, shortcut });
            cin = cout;
        }
    }
    let weight = params.len();
    params.push(ParamDecl {
        name: "encoder.fc.weight".into(),
        shape: vec![cfg.embedding_dim, cin],
        std: (1.0 / cin as f32).sqrt(),
    });
    params.push(ParamDecl {
        name: "encoder.fc.bias".into(),
        shape: vec![cfg.embedding_dim],
        std: 0.0,
    });
    let fc = Linear {
        weight,
        bias: weight + 1,
        inputs: cin,
        outputs: cfg.embedding_dim,
    };
    Layout { params, stem, blocks, fc }
}

/// Residual convolutional encoder: stem, basic blocks, global average pool
/// and a final affine layer producing the representation `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
    stem: ConvSpec,
    blocks: Vec<Block>,
    fc: Linear,
}

pub struct EncoderCache {
    input: Act,
    stem_out: Act,
    /// Post-rectifier output of each block's first convolution.
    hidden: Vec<Act>,
    /// Output of each block.
    outputs: Vec<Act>,
    pooled: Matrix,
}

/// Images per chunk in inference-mode forward passes.
const INFERENCE_CHUNK: usize = 64;

impl Encoder {
    /// He-style initialisation; the second convolution of each residual
    /// branch is scaled down by `1 / sqrt(total_blocks)`.
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self, NnError> {
        config.validate()?;
        let Layout { params: decls, stem, blocks, fc } = layout(&config);
        let mut params = ParamStore::default();
        for d in decls {
            let t = if d.std == 0.0 { Tensor::zeros(&d.shape) } else { normal_tensor(&d.shape, d.std, rng) };
            params.push(d.name, t);
        }
        Ok(Self {
            config,
            params,
            stem,
            blocks,
            fc,
        })
    }

    /// Rebuilds from named tensors. Errors list every missing or
    /// mis-shaped parameter.
    pub fn from_named<'a>(config: EncoderConfig, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<Self, Vec<String>> {
        config.validate().map_err(|e| vec![e.to_string()])?;
        let Layout { params: decls, stem, blocks, fc } = layout(&config);
        let mut params = ParamStore::default();
        let mut problems = Vec::new();
        for d in decls {
            match lookup(&d.name) {
                Some(t) if t.shape == d.shape => {
                    params.push(d.name, t.clone());
                }
                Some(t) => problems.push(format!("{}: expected {:?}, found {:?}", d.name, d.shape, t.shape)),
                None => problems.push(format!("{}: missing (expected {:?})", d.name, d.shape)),
            }
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        Ok(Self {
            config,
            params,
            stem,
            blocks,
            fc,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    fn check_inputs(&self, images: &[&ImageTensor]) -> Result<(), NnError> {
        if images.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let s = self.config.input_size;
        for img in images {
            if img.height() != s || img.width() != s {
                return Err(NnError::InputShape {
                    expected: s,
                    height: img.height(),
                    width: img.width(),
                });
            }
        }
        Ok(())
    }

    /// Inference forward pass, processed in fixed-size chunks.
    pub fn forward(&self, images: &[&ImageTensor]) -> Result<Matrix, NnError> {
        self.check_inputs(images)?;
        let mut out = Matrix::zeros(images.len(), self.embedding_dim());
        for (i, chunk) in images.chunks(INFERENCE_CHUNK).enumerate() {
            let (h, _) = self.forward_train(chunk)?;
            let start = i * INFERENCE_CHUNK * self.embedding_dim();
            out.data[start..start + h.data.len()].copy_from_slice(&h.data);
        }
        Ok(out)
    }

    pub fn forward_train(&self, images: &[&ImageTensor]) -> Result<(Matrix, EncoderCache), NnError> {
        self.check_inputs(images)?;
        let input = Act::from_images(images);
        let mut stem_out = conv_forward(&self.params, &self.stem, &input);
        relu_inplace(&mut stem_out.data);
        let mut hidden = Vec::with_capacity(self.blocks.len());
        let mut outputs: Vec<Act> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let x = outputs.last().unwrap_or(&stem_out);
            let mut a = conv_forward(&self.params, &block.conv1, x);
            relu_inplace(&mut a.data);
            let mut y = conv_forward(&self.params, &block.conv2, &a);
            match &block.shortcut {
                Some(sc) => {
                    let s = conv_forward(&self.params, sc, x);
                    y.data.iter_mut().zip(&s.data).for_each(|(v, s)| *v += s);
                }
                None => y.data.iter_mut().zip(&x.data).for_each(|(v, s)| *v += s),
            }
            relu_inplace(&mut y.data);
            hidden.push(a);
            outputs.push(y);
        }
        let last = outputs.last().unwrap_or(&stem_out);
        let plane = last.h * last.w;
        let mut pooled = Matrix::zeros(last.n, last.c);
        for c in 0..last.c {
            for b in 0..last.n {
                let start = (c * last.n + b) * plane;
                let sum: f32 = last.data[start..start + plane].iter().sum();
                pooled.data[b * last.c + c] = sum / plane as f32;
            }
        }
        let h = self.fc.forward(&self.params, &pooled);
        Ok((
            h,
            EncoderCache {
                input,
                stem_out,
                hidden,
                outputs,
                pooled,
            },
        ))
    }

    pub fn backward(&self, cache: &EncoderCache, dh: &Matrix) -> Vec<Tensor> {
        let mut grads = self.params.zeros_like();
        let dpooled = self.fc.backward(&self.params, &cache.pooled, dh, &mut grads, true).expect("dx requested");
        let last = cache.outputs.last().unwrap_or(&cache.stem_out);
        let plane = last.h * last.w;
        let mut dy = Act::zeros(last.c, last.n, last.h, last.w);
        for c in 0..last.c {
            for b in 0..last.n {
                let g = dpooled.data[b * last.c + c] / plane as f32;
                let start = (c * last.n + b) * plane;
                dy.data[start..start + plane].fill(g);
            }
        }
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let x = if i == 0 { &cache.stem_out } else { &cache.outputs[i - 1] };
            relu_backward(&mut dy.data, &cache.outputs[i].data);
            let mut da = conv_backward(&self.params, &block.conv2, &cache.hidden[i], &dy, &mut grads, true).expect("dx requested");
            relu_backward(&mut da.data, &cache.hidden[i].data);
            let mut dx = conv_backward(&self.params, &block.conv1, x, &da, &mut grads, true).expect("dx requested");
            match &block.shortcut {
                Some(sc) => {
                    let ds = conv_backward(&self.params, sc, x, &dy, &mut grads, true).expect("dx requested");
                    dx.data.iter_mut().zip(&ds.data).for_each(|(a, b)| *a += b);
                }
                None => dx.data.iter_mut().zip(&dy.data).for_each(|(a, b)| *a += b),
            }
            dy = dx;
        }
        relu_backward(&mut dy.data, &cache.stem_out.data);
        conv_backward(&self.params, &self.stem, &cache.input, &dy, &mut grads, false);
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            family: EncoderFamily::SmallResnet,
            stages: vec![StageConfig { blocks: 1, channels: 3 }, StageConfig { blocks: 2, channels: 4 }],
            embedding_dim: 5,
            input_size: 8,
            stem_stride: 1,
        }
    }

    fn image(seed: usize) -> ImageTensor {
        ImageTensor::from_fn(8, 8, |y, x| {
            let t = ((x * 3 + y * 5 + seed * 7) % 13) as f32 / 12.0;
            [t, 1.0 - t, (t * 2.0) % 1.0]
        })
    }

    #[test]
    fn shapes_and_duplicates() {
        let enc = Encoder::new(tiny_config(), &mut rng_from_seed(1)).unwrap();
        let imgs: Vec<ImageTensor> = (0..4).map(image).collect();
        let refs: Vec<&ImageTensor> = vec![&imgs[0], &imgs[1], &imgs[0], &imgs[3]];
        let h = enc.forward(&refs).unwrap();
        assert_eq!((h.rows, h.cols), (4, 5));
        assert!(h.data.iter().all(|v| v.is_finite()));
        assert_eq!(h.row(0), h.row(2));
        assert_ne!(h.row(0), h.row(1));
    }

    #[test]
    fn zero_final_layer_gives_zero_embeddings() {
        let mut enc = Encoder::new(tiny_config(), &mut rng_from_seed(1)).unwrap();
        enc.params.by_name_mut("encoder.fc.weight").unwrap().data.fill(0.0);
        let img = image(0);
        let h = enc.forward(&[&img]).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_input_size() {
        let enc = Encoder::new(tiny_config(), &mut rng_from_seed(1)).unwrap();
        let img = ImageTensor::filled(9, 9, [0.5; 3]);
        assert!(matches!(enc.forward(&[&img]), Err(NnError::InputShape { .. })));
        assert!(matches!(enc.forward(&[]), Err(NnError::EmptyBatch)));
    }

    #[test]
    fn default_configs_are_valid() {
        let small = EncoderConfig::small_resnet();
        small.validate().unwrap();
        assert_eq!(small.total_blocks(), 6);
        assert_eq!(small.param_shapes().last().unwrap().1, vec![128]);
        let big = EncoderConfig::resnet50_like();
        big.validate().unwrap();
        assert_eq!(big.total_blocks(), 16);
        assert!(big.param_shapes().iter().any(|(n, s)| n == "encoder.fc.weight" && s == &vec![2048, 2048]));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut enc = Encoder::new(tiny_config(), &mut rng_from_seed(3)).unwrap();
        let imgs: Vec<ImageTensor> = (0..3).map(image).collect();
        let refs: Vec<&ImageTensor> = imgs.iter().collect();
        let probe: Vec<f32> = (0..15).map(|i| ((i * 7) % 5) as f32 - 2.0).collect();
        let loss = |enc: &Encoder| -> f64 {
            let h = enc.forward(&refs).unwrap();
            h.data.iter().zip(&probe).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
        };
        let (_, cache) = enc.forward_train(&refs).unwrap();
        let grads = enc.backward(&cache, &Matrix::from_vec(3, 5, probe.clone()));
        let eps = 1e-3f32;
        let mut checked = 0;
        for t in 0..enc.params.len() {
            let n = enc.params.get(t).numel();
            for i in (0..n).step_by((n / 3).max(1)) {
                let orig = enc.params.get(t).data[i];
                enc.params.get_mut(t).data[i] = orig + eps;
                let up = loss(&enc);
                enc.params.get_mut(t).data[i] = orig - eps;
                let down = loss(&enc);
                enc.params.get_mut(t).data[i] = orig;
                let fd = (up - down) / (2.0 * f64::from(eps));
                let an = f64::from(grads[t].data[i]);
                assert!((fd - an).abs() < 2e-2 * (1.0 + an.abs()), "{}[{i}]: fd {fd} vs {an}", enc.params.iter().nth(t).unwrap().0);
                checked += 1;
            }
        }
        assert!(checked > 40);
    }

    #[test]
    fn from_named_reports_shape_problems() {
        let enc = Encoder::new(tiny_config(), &mut rng_from_seed(3)).unwrap();
        let rebuilt = Encoder::from_named(tiny_config(), |n| enc.params.by_name(n)).unwrap();
        assert_eq!(rebuilt, enc);
        let mut other = tiny_config();
        other.embedding_dim = 6;
        let errs = Encoder::from_named(other, |n| enc.params.by_name(n)).unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(errs[0].contains("encoder.fc.weight"));
    }
}

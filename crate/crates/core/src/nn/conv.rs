use super::{gemm, Act, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }
}

/// Unfolds `x` into `[cin * k * k, N * ho * wo]` patch columns.
pub fn im2col(x: &Act, k: usize, stride: usize, pad: usize) -> (Vec<f32>, usize, usize) {
    let ho = (x.h + 2 * pad - k) / stride + 1;
    let wo = (x.w + 2 * pad - k) / stride + 1;
    let p = x.n * ho * wo;
    let mut cols = vec![0.0f32; x.c * k * k * p];
    let plane = x.h * x.w;
    for ci in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for b in 0..x.n {
                    let src = &x.data[(ci * x.n + b) * plane..(ci * x.n + b + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let drow = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im(cols: &[f32], c: usize, n: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Act {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let p = n * ho * wo;
    let mut out = Act::zeros(c, n, h, w);
    let plane = h * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for b in 0..n {
                    let dst = &mut out.data[(ci * n + b) * plane..(ci * n + b + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, s) in srow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_forward(params: &ParamStore, spec: &ConvSpec, x: &Act) -> Act {
    debug_assert_eq!(x.c, spec.cin);
    let (cols, ho, wo) = im2col(x, spec.kernel, spec.stride, spec.pad);
    let p = x.n * ho * wo;
    let kk = spec.cin * spec.kernel * spec.kernel;
    let bias = &params.get(spec.bias).data;
    let mut out = Act::zeros(spec.cout, x.n, ho, wo);
    for (co, row) in out.data.chunks_exact_mut(p).enumerate() {
        row.fill(bias[co]);
    }
    gemm(spec.cout, kk, p, &params.get(spec.weight).data, (kk, 1), &cols, (p, 1), 1.0, &mut out.data, (p, 1));
    out
}

/// Accumulates weight and bias gradients into `grads`; returns the input
/// gradient when `need_dx`.
pub fn conv_backward(params: &ParamStore, spec: &ConvSpec, x: &Act, dout: &Act, grads: &mut [Tensor], need_dx: bool) -> Option<Act> {
    let (cols, ho, wo) = im2col(x, spec.kernel, spec.stride, spec.pad);
    let p = x.n * ho * wo;
    debug_assert_eq!(dout.data.len(), spec.cout * p);
    let kk = spec.cin * spec.kernel * spec.kernel;
    gemm(spec.cout, p, kk, &dout.data, (p, 1), &cols, (1, p), 1.0, &mut grads[spec.weight].data, (kk, 1));
    let db = &mut grads[spec.bias].data;
    for (co, row) in dout.data.chunks_exact(p).enumerate() {
        db[co] += row.iter().sum::<f32>();
    }
    if !need_dx {
        return None;
    }
    let mut dcols = vec![0.0f32; kk * p];
    gemm(kk, spec.cout, p, &params.get(spec.weight).data, (1, kk), &dout.data, (p, 1), 0.0, &mut dcols, (p, 1));
    Some(col2im(&dcols, x.c, x.n, x.h, x.w, spec.kernel, spec.stride, spec.pad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_act(c: usize, n: usize, h: usize, w: usize, seed: u64) -> Act {
        let mut rng = rng_from_seed(seed);
        let mut a = Act::zeros(c, n, h, w);
        a.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        a
    }

    fn setup(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> (ParamStore, ConvSpec) {
        let mut rng = rng_from_seed(1);
        let mut ps = ParamStore::default();
        let weight = ps.push("w", super::super::normal_tensor(&[cout, cin, k, k], 0.5, &mut rng));
        let bias = ps.push("b", super::super::normal_tensor(&[cout], 0.5, &mut rng));
        (ps, ConvSpec { weight, bias, cin, cout, kernel: k, stride, pad })
    }

    /// Direct nested-loop convolution.
    fn naive(ps: &ParamStore, s: &ConvSpec, x: &Act) -> Act {
        let (ho, wo) = s.out_size(x.h, x.w);
        let mut out = Act::zeros(s.cout, x.n, ho, wo);
        let w = &ps.get(s.weight).data;
        for co in 0..s.cout {
            for b in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = ps.get(s.bias).data[co] as f64;
                        for ci in 0..s.cin {
                            for ky in 0..s.kernel {
                                for kx in 0..s.kernel {
                                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                                    let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        let xv = x.data[((ci * x.n + b) * x.h + iy as usize) * x.w + ix as usize];
                                        let wv = w[((co * s.cin + ci) * s.kernel + ky) * s.kernel + kx];
                                        acc += f64::from(xv) * f64::from(wv);
                                    }
                                }
                            }
                        }
                        out.data[((co * x.n + b) * ho + oy) * wo + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (1, 1, 0)] {
            let (ps, spec) = setup(3, 4, k, stride, pad);
            let x = random_act(3, 2, 7, 6, 2);
            let got = conv_forward(&ps, &spec, &x);
            let want = naive(&ps, &spec, &x);
            assert_eq!((got.h, got.w), (want.h, want.w));
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mut ps, spec) = setup(2, 3, 3, 2, 1);
        let x = random_act(2, 2, 5, 5, 3);
        let probe = random_act(3, 2, 3, 3, 4);
        // Loss = <probe, conv(x)>.
        let loss = |ps: &ParamStore, x: &Act| -> f64 {
            conv_forward(ps, &spec, x).data.iter().zip(&probe.data).map(|(a, b)| f64::from(a * b)).sum()
        };
        let mut grads = ps.zeros_like();
        let dx = conv_backward(&ps, &spec, &x, &probe, &mut grads, true).unwrap();
        let eps = 1e-2f32;
        for i in [0usize, 7, 20, 35, 53] {
            let orig = ps.get(spec.weight).data[i];
            ps.get_mut(spec.weight).data[i] = orig + eps;
            let up = loss(&ps, &x);
            ps.get_mut(spec.weight).data[i] = orig - eps;
            let down = loss(&ps, &x);
            ps.get_mut(spec.weight).data[i] = orig;
            let fd = (up - down) / (2.0 * f64::from(eps));
            assert!((fd - f64::from(grads[spec.weight].data[i])).abs() < 1e-2, "w[{i}]");
        }
        for i in [0usize, 13, 31, 49] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&ps, &xp) - loss(&ps, &xm)) / (2.0 * f64::from(eps));
            assert!((fd - f64::from(dx.data[i])).abs() < 1e-2, "x[{i}]");
        }
        let db: f32 = probe.data[..9].iter().sum::<f32>() + probe.data[9..18].iter().sum::<f32>();
        assert!((grads[spec.bias].data[0] - db).abs() < 1e-4);
    }
}

//! NT-Xent contrastive loss over adjacent positive pairs.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContrastiveError {
    #[error("need at least two positive pairs (got {rows} rows)")]
    TooFewPairs { rows: usize },
    #[error("row count {rows} is not a multiple of dimension {dim} or not even")]
    Shape { rows: usize, dim: usize },
    #[error("row {0} has zero norm")]
    ZeroNorm(usize),
    #[error("non-finite embedding value")]
    NonFinite,
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("vectors have different lengths")]
    Length,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, ContrastiveError> {
    if u.len() != v.len() {
        return Err(ContrastiveError::Length);
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 {
        return Err(ContrastiveError::ZeroNorm(0));
    }
    if nv == 0.0 {
        return Err(ContrastiveError::ZeroNorm(1));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Loss value and gradient with respect to the row-major `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct NtXent {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// NT-Xent for `z` laid out as `2N x dim`, rows `2k` and `2k + 1` forming
/// a positive pair. The loss averages both orderings of every pair.
pub fn nt_xent_loss(z: &[f64], dim: usize, tau: f64) -> Result<NtXent, ContrastiveError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ContrastiveError::Temperature(tau));
    }
    if dim == 0 || !z.len().is_multiple_of(dim) || !(z.len() / dim).is_multiple_of(2) {
        return Err(ContrastiveError::Shape { rows: z.len() / dim.max(1), dim });
    }
    let m = z.len() / dim;
    if m < 4 {
        return Err(ContrastiveError::TooFewPairs { rows: m });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ContrastiveError::NonFinite);
    }
    let mut u = vec![0.0; z.len()];
    let mut norms = vec![0.0; m];
    for i in 0..m {
        let row = &z[i * dim..(i + 1) * dim];
        let n = norm(row);
        if n == 0.0 {
            return Err(ContrastiveError::ZeroNorm(i));
        }
        norms[i] = n;
        for (d, x) in u[i * dim..(i + 1) * dim].iter_mut().zip(row) {
            *d = x / n;
        }
    }
    let row = |i: usize| &u[i * dim..(i + 1) * dim];
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for k in i..m {
            let v: f64 = row(i).iter().zip(row(k)).map(|(a, b)| a * b).sum::<f64>() / tau;
            s[i * m + k] = v;
            s[k * m + i] = v;
        }
    }
    // g[i][k] = dL/ds_ik = (softmax_ik - [k is positive of i]) / m
    let mut g = vec![0.0; m * m];
    let mut loss = 0.0;
    for i in 0..m {
        let p = i ^ 1;
        let srow = &s[i * m..(i + 1) * m];
        let max = srow.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = srow.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &v)| (v - max).exp()).sum();
        let lse = max + denom.ln();
        loss += lse - srow[p];
        for k in 0..m {
            if k != i {
                g[i * m + k] = (srow[k] - lse).exp() / m as f64;
            }
        }
        g[i * m + p] -= 1.0 / m as f64;
    }
    loss /= m as f64;

    let mut grad = vec![0.0; z.len()];
    let mut du = vec![0.0; dim];
    for i in 0..m {
        du.fill(0.0);
        for k in 0..m {
            let w = (g[i * m + k] + g[k * m + i]) / tau;
            if w != 0.0 {
                for (d, x) in du.iter_mut().zip(row(k)) {
                    *d += w * x;
                }
            }
        }
        // Project out the radial component and undo the normalisation.
        let ui = row(i);
        let radial: f64 = du.iter().zip(ui).map(|(a, b)| a * b).sum();
        for ((gd, d), x) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&du).zip(ui) {
            *gd = (d - radial * x) / norms[i];
        }
    }
    Ok(NtXent { loss, grad })
}

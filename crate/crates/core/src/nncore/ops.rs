//! Network building blocks composed from graph primitives.

use ndarray::Array2;
use rand::Rng;

use super::graph::{Graph, Var};
use super::NnError;

/// `y = x W + b` for `x: [N, d_in]`, `W: [d_in, d_out]`, `b: [1, d_out]`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Same-length temporal convolution; `kernel` is the `[k * C_in, C_out]`
/// tap-major flattening of a `[k, C_in, C_out]` kernel.
pub fn conv1d_temporal(g: &mut Graph, x: Var, kernel: Var, bias: Var, k: usize) -> Result<Var, NnError> {
    g.conv1d(x, kernel, bias, k)
}

/// Inverted dropout. Identity when `rng` is `None` (evaluation) or `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    rate: f64,
    rng: Option<&mut R>,
) -> Result<Var, NnError> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let mask = Array2::from_shape_simple_fn(g.shape(x), || {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    g.mul_const(x, mask)
}

/// Numerically stable softmax of a vector.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy of `logits: [N, C]` against class indices.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var, NnError> {
    g.cross_entropy(logits, labels)
}

/// Projection weights of one self-attention layer (all `[d, d]` / `[1, d]`).
///
/// The key bias is optional: it adds the same constant to every score of a
/// query row, which softmax cancels, so its gradient is identically zero.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Option<Var>,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head scaled dot-product self-attention over `x: [T, d]`.
///
/// Padded positions (`mask[t] == false`) are excluded as keys and their output
/// rows are zero. Dropout, when given, applies to the attention weights.
pub fn multi_head_self_attention<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    weights: &AttentionWeights,
    heads: usize,
    mask: &[bool],
    dropout_rate: f64,
    mut rng: Option<&mut R>,
) -> Result<Var, NnError> {
    let (t_len, d) = g.shape(x);
    if heads == 0 || d % heads != 0 {
        return Err(NnError::HeadsNotDivisible { width: d, heads });
    }
    if mask.len() != t_len {
        return Err(NnError::ShapeMismatch {
            op: "multi_head_self_attention",
            detail: format!("{t_len} steps, mask {}", mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(NnError::EmptyMask);
    }
    let head_dim = d / heads;
    let q = linear(g, x, weights.wq, weights.bq)?;
    let k = match weights.bk {
        Some(bk) => linear(g, x, weights.wk, bk)?,
        None => g.matmul(x, weights.wk)?,
    };
    let v = linear(g, x, weights.wv, weights.bv)?;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim)?;
        let kh = g.slice_cols(k, h * head_dim, head_dim)?;
        let vh = g.slice_cols(v, h * head_dim, head_dim)?;
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores, Some(mask))?;
        let attn = dropout(g, attn, dropout_rate, rng.as_deref_mut())?;
        outputs.push(g.matmul(attn, vh)?);
    }
    let merged = if heads == 1 { outputs[0] } else { g.concat_cols(&outputs)? };
    let out = linear(g, merged, weights.wo, weights.bo)?;
    g.mask_rows(out, mask)
}

/// Sinusoidal position table `[T, d]`.
pub fn sinusoidal_positions(t_len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((t_len, d), |(t, i)| {
        let pair = (i / 2) as f64;
        let angle = t as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

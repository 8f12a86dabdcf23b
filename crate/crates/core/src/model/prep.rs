//! Per-sample normalization and patch extraction. Both act on raw inputs and
//! run outside the tape.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Look-back statistics, each `(B, V)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Tensor,
    pub std: Tensor,
}

/// Z-scores every `(sample, channel)` series of `x: (B, L, V)` over `L`,
/// using the population variance and `std = sqrt(var + eps)`.
pub fn instance_norm(x: &Tensor) -> Result<(Tensor, NormStats)> {
    let [b, l, v] = *x.shape() else {
        return Err(Error::ShapeMismatch {
            op: "instance_norm",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    let d = x.data();
    let mut mean = vec![0.0; b * v];
    let mut std = vec![0.0; b * v];
    for bi in 0..b {
        for c in 0..v {
            let at = |t: usize| d[(bi * l + t) * v + c];
            let m = (0..l).map(at).sum::<f64>() / l as f64;
            let var = (0..l).map(|t| (at(t) - m).powi(2)).sum::<f64>() / l as f64;
            mean[bi * v + c] = m;
            std[bi * v + c] = (var + NORM_EPS).sqrt();
        }
    }
    let out = Tensor::from_fn([b, l, v], |i| {
        let k = (i / (l * v)) * v + i % v;
        (d[i] - mean[k]) / std[k]
    });
    Ok((
        out,
        NormStats {
            mean: Tensor::new([b, v], mean)?,
            std: Tensor::new([b, v], std)?,
        },
    ))
}

/// Inverse of [`instance_norm`] for `y: (B, T, V)`.
pub fn denormalize(y: &Tensor, stats: &NormStats) -> Tensor {
    let [_, t, v] = *y.shape() else {
        panic!("denormalize expects (B, T, V)");
    };
    Tensor::from_fn(y.shape().to_vec(), |i| {
        let k = (i / (t * v)) * v + i % v;
        y.data()[i] * stats.std.data()[k] + stats.mean.data()[k]
    })
}

/// `floor((L − P)/S) + 2`.
pub fn num_patches(look_back: usize, patch_len: usize, stride: usize) -> usize {
    (look_back - patch_len) / stride + 2
}

/// Cuts `x: (B, L, V)` into `(B, V, N, P)` patches. Each series is first
/// extended by repeating its last value `stride` times.
pub fn patching(x: &Tensor, patch_len: usize, stride: usize) -> Result<Tensor> {
    let [b, l, v] = *x.shape() else {
        return Err(Error::ShapeMismatch {
            op: "patching",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    if patch_len == 0 || stride == 0 || patch_len > l {
        return Err(Error::Config(format!(
            "patching needs 0 < patch_len ≤ look_back and stride > 0, got P={patch_len}, L={l}, S={stride}"
        )));
    }
    let n = num_patches(l, patch_len, stride);
    let d = x.data();
    Ok(Tensor::from_fn([b, v, n, patch_len], |i| {
        let p = i % patch_len;
        let ni = (i / patch_len) % n;
        let c = (i / (patch_len * n)) % v;
        let bi = i / (patch_len * n * v);
        let t = (ni * stride + p).min(l - 1);
        d[(bi * l + t) * v + c]
    }))
}

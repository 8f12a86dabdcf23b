//! Training-time augmentation: Channel Mixup and the sample-mixup baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixupMode {
    /// Add a randomly scaled, randomly chosen channel to every channel.
    Channel,
    /// Interpolate pairs of samples within a batch.
    VanillaSample,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixupConfig {
    pub mode: MixupMode,
    /// Standard deviation of the per-channel coefficients.
    pub sigma: f64,
}

impl MixupConfig {
    pub fn enabled(&self) -> bool {
        self.mode != MixupMode::Off
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("mixup sigma must be ≥ 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// One random draw: a channel permutation and a coefficient per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MixupDraw {
    pub perm: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl MixupDraw {
    pub fn sample(channels: usize, sigma: f64, rng: &mut Rng) -> Self {
        let perm = rng.permutation(channels);
        let lambda = (0..channels).map(|_| rng.normal(0.0, sigma)).collect();
        MixupDraw { perm, lambda }
    }

    /// `out[:, v] = x[:, v] + λ_v · x[:, perm[v]]` on a row-major `(rows, V)` table.
    pub fn apply_rows(&self, x: &[f64]) -> Vec<f64> {
        let v = self.perm.len();
        let mut out = x.to_vec();
        for (row, dst) in x.chunks_exact(v).zip(out.chunks_exact_mut(v)) {
            for c in 0..v {
                dst[c] += self.lambda[c] * row[self.perm[c]];
            }
        }
        out
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match x.shape() {
            [_, v] if *v == self.perm.len() => Tensor::new(x.shape().to_vec(), self.apply_rows(x.data())),
            s => Err(Error::ShapeMismatch {
                op: "channel_mixup",
                lhs: s.to_vec(),
                rhs: vec![self.perm.len()],
            }),
        }
    }
}

/// Mixes one `(L, V)` input and its `(T, V)` target with a single draw.
pub fn channel_mixup(x: &Tensor, y: &Tensor, cfg: &MixupConfig, phase: Phase, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    if phase == Phase::Eval {
        return Err(Error::Contract("channel mixup called during evaluation".into()));
    }
    if cfg.mode != MixupMode::Channel {
        return Err(Error::Contract(format!("channel mixup called with mode {:?}", cfg.mode)));
    }
    cfg.validate()?;
    let v = x.shape().last().copied().unwrap_or(0);
    if y.shape().last() != Some(&v) {
        return Err(Error::ShapeMismatch {
            op: "channel_mixup",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let draw = MixupDraw::sample(v, cfg.sigma, rng);
    Ok((draw.apply(x)?, draw.apply(y)?))
}

/// `λ·a + (1 − λ)·b` for inputs and targets alike.
pub fn vanilla_mixup(
    (xi, yi): (&Tensor, &Tensor),
    (xj, yj): (&Tensor, &Tensor),
    lambda: f64,
) -> Result<(Tensor, Tensor)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("mixup coefficient must lie in [0, 1], got {lambda}")));
    }
    let mix = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "vanilla_mixup",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect();
        Tensor::new(a.shape().to_vec(), data)
    };
    Ok((mix(xi, xj)?, mix(yi, yj)?))
}

/// Applies the configured augmentation to whole batches and counts how many
/// samples it touched.
#[derive(Clone, Debug)]
pub struct Augmenter {
    cfg: MixupConfig,
    rng: Rng,
    calls: usize,
}

impl Augmenter {
    pub fn new(cfg: MixupConfig, rng: Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Augmenter { cfg, rng, calls: 0 })
    }

    pub fn config(&self) -> &MixupConfig {
        &self.cfg
    }

    /// Number of samples augmented so far.
    pub fn calls(&self) -> usize {
        self.calls
    }

    /// Augments a batch in place. `x: (B, L, V)`, `y: (B, T, V)`.
    pub fn apply_batch(&mut self, x: &mut Tensor, y: &mut Tensor, phase: Phase) -> Result<()> {
        if phase == Phase::Eval {
            return Err(Error::Contract("augmentation called during evaluation".into()));
        }
        let (b, v) = match (x.shape(), y.shape()) {
            ([b, _, v], [b2, _, v2]) if b == b2 && v == v2 => (*b, *v),
            (xs, ys) => {
                return Err(Error::ShapeMismatch {
                    op: "augment",
                    lhs: xs.to_vec(),
                    rhs: ys.to_vec(),
                })
            }
        };
        let xl = x.numel() / b;
        let yl = y.numel() / b;
        match self.cfg.mode {
            MixupMode::Off => {}
            MixupMode::Channel => {
                for i in 0..b {
                    let draw = MixupDraw::sample(v, self.cfg.sigma, &mut self.rng);
                    let xs = &mut x.data_mut()[i * xl..(i + 1) * xl];
                    let mixed = draw.apply_rows(xs);
                    xs.copy_from_slice(&mixed);
                    let ys = &mut y.data_mut()[i * yl..(i + 1) * yl];
                    let mixed = draw.apply_rows(ys);
                    ys.copy_from_slice(&mixed);
                    self.calls += 1;
                }
            }
            MixupMode::VanillaSample => {
                let partner = self.rng.permutation(b);
                let (x0, y0) = (x.clone(), y.clone());
                for (i, &j) in partner.iter().enumerate() {
                    let lam = self.rng.uniform();
                    for (dst, src, len) in [(&mut *x, &x0, xl), (&mut *y, &y0, yl)] {
                        let (a, o) = (&src.data()[i * len..(i + 1) * len], &src.data()[j * len..(j + 1) * len]);
                        for (k, d) in dst.data_mut()[i * len..(i + 1) * len].iter_mut().enumerate() {
                            *d = lam * a[k] + (1.0 - lam) * o[k];
                        }
                    }
                    self.calls += 1;
                }
            }
        }
        Ok(())
    }
}

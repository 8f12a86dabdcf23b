//! The full forecaster: normalization, patch embedding, stacked blocks, head.

pub mod checkpoint;
pub mod flops;
mod prep;

pub use checkpoint::Checkpoint;
pub use flops::{estimate_flops, FlopReport};
pub use prep::{denormalize, instance_norm, num_patches, patching, NormStats, NORM_EPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixer::GddMlp;
use crate::nn::{dropout, uniform, Linear};
use crate::rng::Rng;
use crate::ssm::{MambaBlock, MambaBlockConfig};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

const POS_INIT_BOUND: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub look_back: usize,
    pub horizon: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub num_blocks: usize,
    pub dropout: f64,
    pub gdd_expansion: f64,
    pub use_gdd: bool,
    pub block: MambaBlockConfig,
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.block.d_model
    }

    pub fn num_patches(&self) -> usize {
        num_patches(self.look_back, self.patch_len, self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.look_back == 0 || self.horizon == 0 || self.channels == 0 {
            return fail("look_back, horizon and channels must be positive".into());
        }
        if self.patch_len == 0 || self.patch_len > self.look_back {
            return fail(format!(
                "patch_len must be in 1..={}, got {}",
                self.look_back, self.patch_len
            ));
        }
        if self.stride == 0 || self.stride > self.patch_len {
            return fail(format!("stride must be in 1..={}, got {}", self.patch_len, self.stride));
        }
        if self.num_blocks == 0 {
            return fail("num_blocks must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.gdd_expansion > 0.0 && self.gdd_expansion.is_finite()) {
            return fail(format!("gdd_expansion must be positive, got {}", self.gdd_expansion));
        }
        self.block.validate()
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub mamba: MambaBlock,
    pub gdd: Option<GddMlp>,
}

#[derive(Clone, Debug)]
pub struct CMambaModel {
    pub cfg: ModelConfig,
    pub patch_proj: Linear,
    pub pos: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
}

/// Intermediate values of one forward pass.
pub struct ForwardTrace {
    pub stats: NormStats,
    /// Embedded patches `(B, V, N, E)` before the first block.
    pub z0: Var,
    /// Encoder output `(B, V, N, E)`.
    pub zk: Var,
    /// Forecast `(B, T, V)` in input units.
    pub y: Var,
}

impl CMambaModel {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (e, n) = (cfg.d_model(), cfg.num_patches());
        let patch_proj = Linear::new(store, "embed.patch_proj", cfg.patch_len, e, false, rng);
        let pos = store.add("embed.pos", uniform([n, e], POS_INIT_BOUND, rng));
        let mut layers = Vec::with_capacity(cfg.num_blocks);
        for i in 0..cfg.num_blocks {
            let mamba = MambaBlock::new(store, &format!("blocks.{i}.mamba"), &cfg.block, rng)?;
            let gdd = if cfg.use_gdd {
                Some(GddMlp::new(store, &format!("blocks.{i}.gdd"), cfg.channels, cfg.gdd_expansion, rng)?)
            } else {
                None
            };
            layers.push(EncoderLayer { mamba, gdd });
        }
        let head = Linear::new(store, "head.proj", n * e, cfg.horizon, false, rng);
        Ok(CMambaModel {
            cfg: cfg.clone(),
            patch_proj,
            pos,
            layers,
            head,
        })
    }

    /// `x: (B, L, V)` → `(B, T, V)`. Dropout is active when `dropout_rng` is given.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor, dropout_rng: Option<&mut Rng>) -> Result<Var> {
        Ok(self.forward_trace(tape, store, x, dropout_rng)?.y)
    }

    pub fn forward_trace(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Tensor,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.cfg;
        match *x.shape() {
            [_, l, v] if l == cfg.look_back && v == cfg.channels => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "model_forward",
                    lhs: x.shape().to_vec(),
                    rhs: vec![cfg.look_back, cfg.channels],
                })
            }
        }
        let b = x.shape()[0];
        let (v, n, e, t) = (cfg.channels, cfg.num_patches(), cfg.d_model(), cfg.horizon);
        let mut drop = |tape: &mut Tape, z: Var| -> Result<Var> {
            match dropout_rng.as_deref_mut() {
                Some(rng) => dropout(tape, z, cfg.dropout, rng),
                None => Ok(z),
            }
        };

        let (xn, stats) = instance_norm(x)?;
        let patches = tape.constant(patching(&xn, cfg.patch_len, cfg.stride)?);
        let emb = self.patch_proj.forward(tape, store, patches)?;
        let pos = tape.param(store, self.pos);
        let z0 = tape.add(emb, pos)?;
        let mut z = drop(tape, z0)?;
        for layer in &self.layers {
            let h = layer.mamba.forward(tape, store, z)?;
            let h = match &layer.gdd {
                Some(gdd) => gdd.forward(tape, store, h)?,
                None => h,
            };
            let sum = tape.add(h, z)?;
            z = drop(tape, sum)?;
        }
        let zk = z;

        let act = tape.silu(zk);
        let flat = tape.reshape(act, [b, v, n * e])?;
        let out = self.head.forward(tape, store, flat)?;
        let out = tape.permute(out, &[0, 2, 1])?;
        let std = tape.constant(stats.std.clone().reshape([b, 1, v])?);
        let mean = tape.constant(stats.mean.clone().reshape([b, 1, v])?);
        let scaled = tape.mul(out, std)?;
        let y = tape.add(scaled, mean)?;
        debug_assert_eq!(tape.value(y).shape(), &[b, t, v]);
        Ok(ForwardTrace { stats, z0, zk, y })
    }

    /// Convenience forward without gradients or dropout.
    pub fn predict(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, store, x, None)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::DMode;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            look_back: 16,
            horizon: 4,
            channels: 2,
            patch_len: 4,
            stride: 2,
            num_blocks: 1,
            dropout: 0.0,
            gdd_expansion: 1.0,
            use_gdd: true,
            block: MambaBlockConfig {
                d_model: 8,
                d_state: 4,
                ..MambaBlockConfig::default()
            },
        }
    }

    #[test]
    fn output_shape() {
        let cfg = ModelConfig {
            look_back: 96,
            horizon: 96,
            channels: 7,
            patch_len: 16,
            stride: 8,
            num_blocks: 2,
            block: MambaBlockConfig::default(),
            ..tiny_config()
        };
        let mut store = ParamStore::new();
        let model = CMambaModel::new(&mut store, &cfg, &mut Rng::new(1)).unwrap();
        let x = Tensor::from_fn([2, 96, 7], |i| (i as f64 * 0.01).sin());
        let y = model.predict(&store, &x).unwrap();
        assert_eq!(y.shape(), &[2, 96, 7]);
    }

    #[test]
    fn zero_head_returns_lookback_mean() {
        let mut store = ParamStore::new();
        let model = CMambaModel::new(&mut store, &tiny_config(), &mut Rng::new(2)).unwrap();
        let shape = store.value(model.head.weight).shape().to_vec();
        *store.value_mut(model.head.weight) = Tensor::zeros(shape);
        let x = Tensor::from_fn([2, 16, 2], |i| (i % 5) as f64 + (i % 2) as f64 * 10.0);
        let y = model.predict(&store, &x).unwrap();
        let (_, stats) = instance_norm(&x).unwrap();
        for b in 0..2 {
            for t in 0..4 {
                for c in 0..2 {
                    assert!((y.get(&[b, t, c]) - stats.mean.get(&[b, c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn residual_path_with_silent_blocks() {
        for use_gdd in [false, true] {
            let cfg = ModelConfig {
                num_blocks: 3,
                use_gdd,
                ..tiny_config()
            };
            let mut store = ParamStore::new();
            let model = CMambaModel::new(&mut store, &cfg, &mut Rng::new(3)).unwrap();
            for layer in &model.layers {
                let w = layer.mamba.out_proj.weight;
                let shape = store.value(w).shape().to_vec();
                *store.value_mut(w) = Tensor::zeros(shape);
            }
            let x = Tensor::from_fn([1, 16, 2], |i| (i as f64).cos());
            let mut tape = Tape::new();
            let tr = model.forward_trace(&mut tape, &store, &x, None).unwrap();
            // a silent block feeds zeros to the mixer, which then emits its bias of 0.5
            let shift = if use_gdd { 0.5 } else { 0.0 };
            let want = tape.value(tr.z0).map(|v| v + shift + shift + shift);
            assert_eq!(tape.value(tr.zk).max_abs_diff(&want), 0.0, "use_gdd={use_gdd}");
        }
    }

    #[test]
    fn deterministic_forward() {
        let run = || {
            let mut store = ParamStore::new();
            let cfg = ModelConfig {
                dropout: 0.1,
                ..tiny_config()
            };
            let model = CMambaModel::new(&mut store, &cfg, &mut Rng::new(4)).unwrap();
            let x = Tensor::from_fn([2, 16, 2], |i| (i as f64 * 0.3).sin());
            let mut tape = Tape::new();
            let y = model.forward(&mut tape, &store, &x, Some(&mut Rng::new(5))).unwrap();
            tape.value(y).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = tiny_config();
        cfg.stride = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.patch_len = 17;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.block.d_mode = DMode::Free;
        assert!(cfg.validate().is_ok());
    }
}

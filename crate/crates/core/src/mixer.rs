//! GDD-MLP: data-dependent cross-channel reweighting of patch embeddings.
//!
//! The embedding axis is summarized by mean and max pooling, giving two
//! `(B, V, N)` descriptors. Two small networks act along `V` for every patch
//! and produce a sigmoid weight and a sigmoid bias per `(b, v, n)` cell; the
//! output is `weight ⊙ h + bias`, broadcast over `E`.

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::rng::Rng;
use crate::tensor::{ParamStore, ReduceOp, Tape, Var};

/// `V → hidden → V` with ReLU in between. The output layer carries no bias:
/// the two descriptor passes are summed, so a bias there would only add a
/// constant twice.
#[derive(Clone, Debug)]
pub struct ChannelMlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ChannelMlp {
    fn new(store: &mut ParamStore, prefix: &str, v: usize, hidden: usize, rng: &mut Rng) -> Self {
        ChannelMlp {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), v, hidden, true, rng),
            fc2: Linear::zeros(store, &format!("{prefix}.fc2"), hidden, v, false),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, store, h)
    }

    /// FLOPs for `rows` applications.
    fn flops(&self, rows: u64) -> u64 {
        self.fc1.flops(rows) + rows * self.fc1.out_dim as u64 + self.fc2.flops(rows)
    }
}

#[derive(Clone, Debug)]
pub struct GddMlp {
    pub channels: usize,
    pub hidden: usize,
    pub weight_net: ChannelMlp,
    pub bias_net: ChannelMlp,
}

/// `max(1, round(r·V))`.
pub fn hidden_width(channels: usize, expansion: f64) -> usize {
    ((expansion * channels as f64).round() as usize).max(1)
}

impl GddMlp {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, expansion: f64, rng: &mut Rng) -> Result<Self> {
        if channels == 0 || !(expansion > 0.0 && expansion.is_finite()) {
            return Err(Error::Config(format!(
                "gdd-mlp needs channels ≥ 1 and a positive expansion, got {channels} and {expansion}"
            )));
        }
        let hidden = hidden_width(channels, expansion);
        Ok(GddMlp {
            channels,
            hidden,
            weight_net: ChannelMlp::new(store, &format!("{prefix}.weight_net"), channels, hidden, rng),
            bias_net: ChannelMlp::new(store, &format!("{prefix}.bias_net"), channels, hidden, rng),
        })
    }

    /// Sigmoid weight and bias, each `(B, V, N, 1)`, for `h: (B, V, N, E)`.
    pub fn weight_and_bias(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<(Var, Var)> {
        let shape = tape.value(h).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "gdd_mlp",
                lhs: shape,
                rhs: vec![self.channels],
            });
        }
        let avg = tape.reduce(ReduceOp::Mean, h, 3)?;
        let max = tape.reduce(ReduceOp::Max, h, 3)?;
        let avg = tape.permute(avg, &[0, 2, 1])?;
        let max = tape.permute(max, &[0, 2, 1])?;

        let branch = |net: &ChannelMlp, tape: &mut Tape| -> Result<Var> {
            let a = net.forward(tape, store, avg)?;
            let m = net.forward(tape, store, max)?;
            let s = tape.add(a, m)?;
            let s = tape.sigmoid(s);
            let s = tape.permute(s, &[0, 2, 1])?;
            tape.reshape(s, [shape[0], shape[1], shape[2], 1])
        };
        let w = branch(&self.weight_net, tape)?;
        let b = branch(&self.bias_net, tape)?;
        Ok((w, b))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let (w, b) = self.weight_and_bias(tape, store, h)?;
        let wh = tape.mul(w, h)?;
        tape.add(wh, b)
    }

    /// FLOPs of the two networks alone for `cells = B·N` patch positions.
    /// Every term is proportional to the hidden width.
    pub fn network_flops(&self, cells: u64) -> u64 {
        // each network runs once per descriptor
        self.weight_net.flops(2 * cells) + self.bias_net.flops(2 * cells)
    }

    /// FLOPs of the whole module for `cells = B·N` patch positions and embedding width `e`.
    pub fn flops(&self, cells: u64, e: u64) -> u64 {
        let v = self.channels as u64;
        let pooling = 2 * cells * v * e;
        // descriptor sum and sigmoid for both branches
        let combine = 2 * 2 * cells * v;
        let gating = 2 * cells * v * e;
        pooling + self.network_flops(cells) + combine + gating
    }
}

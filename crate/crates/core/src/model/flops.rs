//! Analytic FLOP counts.
//!
//! Convention: a multiply-accumulate is 2 FLOPs; every elementwise
//! arithmetic operation or activation evaluation is 1.

use super::CMambaModel;

/// Instance norm: mean (1), squared deviation (2), normalize (2).
const NORM_FLOPS: u64 = 5;
/// Denormalize: scale and shift.
const DENORM_FLOPS: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub total: u64,
    /// Everything inside the GDD-MLP modules: pooling, networks, sigmoid, gating.
    pub gdd_mlp_part: u64,
    /// The two networks alone; linear in the hidden width.
    pub gdd_networks: u64,
}

impl FlopReport {
    /// GDD-MLP cost relative to the same model without it.
    pub fn increment_ratio(&self) -> f64 {
        if self.gdd_mlp_part == 0 {
            return 0.0;
        }
        self.gdd_mlp_part as f64 / (self.total - self.gdd_mlp_part) as f64
    }
}

/// Forward-pass FLOPs for a batch of `batch` samples.
pub fn estimate_flops(model: &CMambaModel, batch: u64) -> FlopReport {
    let cfg = &model.cfg;
    let (l, v, t) = (cfg.look_back as u64, cfg.channels as u64, cfg.horizon as u64);
    let (n, e) = (cfg.num_patches() as u64, cfg.d_model() as u64);
    let series = batch * v;
    let tokens = series * n;
    let cells = batch * n;

    let mut total = NORM_FLOPS * series * l;
    total += model.patch_proj.flops(tokens) + tokens * e;
    let mut gdd_part = 0;
    let mut gdd_networks = 0;
    for layer in &model.layers {
        total += layer.mamba.flops(tokens);
        if let Some(gdd) = &layer.gdd {
            gdd_part += gdd.flops(cells, e);
            gdd_networks += gdd.network_flops(cells);
        }
        // residual add
        total += tokens * e;
    }
    total += gdd_part;
    total += tokens * e + model.head.flops(series) + DENORM_FLOPS * series * t;
    FlopReport {
        total,
        gdd_mlp_part: gdd_part,
        gdd_networks,
    }
}

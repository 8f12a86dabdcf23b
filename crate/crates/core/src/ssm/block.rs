use super::{causal_depthwise_conv, selective_scan_kernel, AMode, DMode, MambaBlockConfig};
use crate::error::{Error, Result};
use crate::nn::{uniform, Linear};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

/// FLOPs per (feature, state) pair for turning `(Δ, A, B)` into `(Ā, B̄)`.
pub(crate) const DISCRETIZE_FLOPS: u64 = 5;
/// FLOPs per (feature, state) pair for one recurrence step plus its output MAC.
pub(crate) const SCAN_FLOPS: u64 = 5;

#[derive(Clone, Debug)]
pub enum DParam {
    Free(ParamId),
    DataDependent(Linear),
}

/// Learnable pieces of one selective SSM acting on `inner` features.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub a_log: ParamId,
    pub proj_b: Linear,
    pub proj_c: Linear,
    pub dt_down: Linear,
    pub dt_up: Linear,
    pub d: DParam,
    pub inner: usize,
    pub d_state: usize,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl SsmParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        inner: usize,
        d_state: usize,
        dt_rank: usize,
        a_mode: AMode,
        d_mode: DMode,
        rng: &mut Rng,
    ) -> Self {
        let a_row: Vec<f64> = (1..=d_state).map(|s| (s as f64).ln()).collect();
        let a_log = match a_mode {
            AMode::FeatureIndependent => Tensor::new([d_state], a_row),
            AMode::FeatureSpecific => Tensor::new([inner, d_state], a_row.repeat(inner)),
        }
        .expect("a_log shape");
        let a_log = store.add(format!("{prefix}.a_log"), a_log);
        let proj_b = Linear::new(store, &format!("{prefix}.proj_b"), inner, d_state, false, rng);
        let proj_c = Linear::new(store, &format!("{prefix}.proj_c"), inner, d_state, false, rng);
        let dt_down = Linear::new(store, &format!("{prefix}.dt_down"), inner, dt_rank, false, rng);
        let dt_up = Linear::new(store, &format!("{prefix}.dt_up"), dt_rank, inner, true, rng);
        let (lo, hi) = (DT_MIN.ln(), DT_MAX.ln());
        let bias = Tensor::from_fn([inner], |_| inverse_softplus(rng.uniform_range(lo, hi).exp()));
        *store.value_mut(dt_up.bias.expect("dt bias")) = bias;
        let d = match d_mode {
            DMode::Free => DParam::Free(store.add(format!("{prefix}.d"), Tensor::ones([inner]))),
            DMode::DataDependent => {
                let lin = Linear::zeros(store, &format!("{prefix}.proj_d"), inner, inner, true);
                *store.value_mut(lin.bias.expect("d bias")) = Tensor::ones([inner]);
                DParam::DataDependent(lin)
            }
        };
        SsmParams {
            a_log,
            proj_b,
            proj_c,
            dt_down,
            dt_up,
            d,
            inner,
            d_state,
        }
    }

    /// `A = −exp(a_log)`.
    pub fn a(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let a_log = tape.param(store, self.a_log);
        let e = tape.exp(a_log);
        tape.neg(e)
    }

    /// `Δ = softplus(dt_up(dt_down(u)))`, shape of `u`.
    pub fn delta(&self, tape: &mut Tape, store: &ParamStore, u: Var) -> Result<Var> {
        let low = self.dt_down.forward(tape, store, u)?;
        let pre = self.dt_up.forward(tape, store, low)?;
        Ok(tape.softplus(pre))
    }

    /// Selective scan over the token axis of `u: (…, N, inner)`, plus the `D ⊙ u` skip.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, u: Var) -> Result<Var> {
        let a = self.a(tape, store);
        let b = self.proj_b.forward(tape, store, u)?;
        let c = self.proj_c.forward(tape, store, u)?;
        let delta = self.delta(tape, store, u)?;
        let y = selective_scan_kernel(tape, u, delta, a, b, c)?;
        let d = match &self.d {
            DParam::Free(id) => tape.param(store, *id),
            DParam::DataDependent(lin) => lin.forward(tape, store, u)?,
        };
        let skip = tape.mul(d, u)?;
        tape.add(y, skip)
    }

    pub fn a_param_count(&self, store: &ParamStore) -> usize {
        store.value(self.a_log).numel()
    }

    /// FLOPs for `tokens` scan positions.
    pub fn flops(&self, tokens: u64) -> u64 {
        let (e, s) = (self.inner as u64, self.d_state as u64);
        let proj = self.proj_b.flops(tokens) + self.proj_c.flops(tokens);
        let dt = self.dt_down.flops(tokens) + self.dt_up.flops(tokens) + tokens * e;
        let scan = tokens * e * s * (DISCRETIZE_FLOPS + SCAN_FLOPS);
        let d = match &self.d {
            DParam::Free(_) => 0,
            DParam::DataDependent(lin) => lin.flops(tokens),
        } + 2 * tokens * e;
        proj + dt + scan + d
    }
}

/// One M-Mamba block mapping `(…, N, E)` to `(…, N, E)`.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub cfg: MambaBlockConfig,
    pub in_x: Linear,
    pub in_z: Option<Linear>,
    /// Depthwise kernel `(inner, K)` and bias `(inner)`.
    pub conv: Option<(ParamId, ParamId)>,
    pub ssm: SsmParams,
    pub out_proj: Linear,
}

impl MambaBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &MambaBlockConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (e, inner) = (cfg.d_model, cfg.inner_dim());
        let in_x = Linear::new(store, &format!("{prefix}.in_proj_x"), e, inner, false, rng);
        let in_z = cfg
            .use_z_branch
            .then(|| Linear::new(store, &format!("{prefix}.in_proj_z"), e, inner, false, rng));
        let conv = cfg.use_conv.then(|| {
            let bound = 1.0 / (cfg.conv_kernel as f64).sqrt();
            let w = store.add(format!("{prefix}.conv.weight"), uniform([inner, cfg.conv_kernel], bound, rng));
            let b = store.add(format!("{prefix}.conv.bias"), uniform([inner], bound, rng));
            (w, b)
        });
        let ssm = SsmParams::new(
            store,
            &format!("{prefix}.ssm"),
            inner,
            cfg.d_state,
            cfg.resolved_dt_rank(),
            cfg.a_mode,
            cfg.d_mode,
            rng,
        );
        let out_proj = Linear::new(store, &format!("{prefix}.out_proj"), inner, e, false, rng);
        Ok(MambaBlock {
            cfg: cfg.clone(),
            in_x,
            in_z,
            conv,
            ssm,
            out_proj,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape();
        if shape.len() < 2 || shape[shape.len() - 1] != self.cfg.d_model {
            return Err(Error::ShapeMismatch {
                op: "mamba_block",
                lhs: shape.to_vec(),
                rhs: vec![self.cfg.d_model],
            });
        }
        let mut u = self.in_x.forward(tape, store, x)?;
        if let Some((w, b)) = self.conv {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            u = causal_depthwise_conv(tape, u, w, b)?;
        }
        let u = tape.silu(u);
        let mut y = self.ssm.forward(tape, store, u)?;
        if let Some(in_z) = &self.in_z {
            let z = in_z.forward(tape, store, x)?;
            let gate = tape.silu(z);
            y = tape.mul(y, gate)?;
        }
        self.out_proj.forward(tape, store, y)
    }

    /// Stage names in execution order.
    pub fn trace(&self) -> Vec<&'static str> {
        let mut t = vec!["in_proj_x"];
        if self.conv.is_some() {
            t.push("causal_conv");
        }
        t.extend(["silu", "selective_scan"]);
        t.push(match self.ssm.d {
            DParam::Free(_) => "skip_free_d",
            DParam::DataDependent(_) => "skip_data_dependent_d",
        });
        if self.in_z.is_some() {
            t.extend(["in_proj_z", "silu_gate"]);
        }
        t.push("out_proj");
        t
    }

    pub fn num_params(&self, store: &ParamStore) -> usize {
        let linears = [
            Some(&self.in_x),
            self.in_z.as_ref(),
            Some(&self.ssm.proj_b),
            Some(&self.ssm.proj_c),
            Some(&self.ssm.dt_down),
            Some(&self.ssm.dt_up),
            Some(&self.out_proj),
        ];
        let mut ids = vec![self.ssm.a_log];
        for lin in linears.into_iter().flatten() {
            ids.push(lin.weight);
            ids.extend(lin.bias);
        }
        match &self.ssm.d {
            DParam::Free(id) => ids.push(*id),
            DParam::DataDependent(lin) => {
                ids.push(lin.weight);
                ids.extend(lin.bias);
            }
        }
        if let Some((w, b)) = self.conv {
            ids.extend([w, b]);
        }
        ids.iter().map(|&id| store.value(id).numel()).sum()
    }

    /// FLOPs for `tokens` positions (every leading axis and `N` multiplied out).
    pub fn flops(&self, tokens: u64) -> u64 {
        let inner = self.cfg.inner_dim() as u64;
        let mut f = self.in_x.flops(tokens) + self.out_proj.flops(tokens);
        if self.conv.is_some() {
            f += tokens * inner * (2 * self.cfg.conv_kernel as u64 + 1);
        }
        f += tokens * inner; // silu
        f += self.ssm.flops(tokens);
        if let Some(in_z) = &self.in_z {
            f += in_z.flops(tokens) + 2 * tokens * inner;
        }
        f
    }
}

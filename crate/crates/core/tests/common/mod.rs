//! Reference implementations used only by integration tests. They are
//! written loop-by-loop and share no code with the library kernels.

#![allow(dead_code)]

use cmamba_core::nn::Linear;
use cmamba_core::ssm::{DParam, SsmParams};
use cmamba_core::{ParamStore, Rng, Tensor};

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Zero-order hold for one (feature, state) pair: `(Ā, B̄/b)`.
pub fn zoh(a: f64, dt: f64) -> (f64, f64) {
    let x = dt * a;
    let abar = x.exp();
    let factor = if x == 0.0 { dt } else { x.exp_m1() / x * dt };
    (abar, factor)
}

/// `x · W (+ b)` for a row vector and a `(in, out)` weight.
pub fn dense(x: &[f64], store: &ParamStore, lin: &Linear) -> Vec<f64> {
    let w = store.value(lin.weight).data();
    let mut out: Vec<f64> = match lin.bias {
        Some(b) => store.value(b).data().to_vec(),
        None => vec![0.0; lin.out_dim],
    };
    for (i, xi) in x.iter().enumerate() {
        for (o, out_o) in out.iter_mut().enumerate() {
            *out_o += xi * w[i * lin.out_dim + o];
        }
    }
    out
}

/// Token-by-token recurrence for `u: (lanes, N, E)` with per-token
/// `Δ: (lanes, N, E)`, `b, c: (lanes, N, S)` and `a: (S)` or `(E, S)`.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn naive_scan(u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], n: usize, e: usize, s: usize) -> Vec<f64> {
    let lanes = u.len() / (n * e);
    let a_at = |ei: usize, si: usize| if a.len() == s { a[si] } else { a[ei * s + si] };
    let mut y = vec![0.0; u.len()];
    for lane in 0..lanes {
        let mut h = vec![vec![0.0; s]; e];
        for t in 0..n {
            for ei in 0..e {
                let idx = (lane * n + t) * e + ei;
                let mut acc = 0.0;
                for si in 0..s {
                    let (abar, f) = zoh(a_at(ei, si), delta[idx]);
                    let bt = b[(lane * n + t) * s + si];
                    h[ei][si] = abar * h[ei][si] + f * bt * u[idx];
                    acc += c[(lane * n + t) * s + si] * h[ei][si];
                }
                y[idx] = acc;
            }
        }
    }
    y
}

/// The full selective SSM of `params` on `u: (…, N, E)`, projections included.
pub fn naive_ssm(store: &ParamStore, params: &SsmParams, u: &Tensor) -> Vec<f64> {
    let (e, s) = (params.inner, params.d_state);
    let shape = u.shape();
    let n = shape[shape.len() - 2];
    let tokens = u.numel() / e;
    let a: Vec<f64> = store.value(params.a_log).data().iter().map(|v| -v.exp()).collect();
    let (mut delta, mut b, mut c, mut d) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for tok in 0..tokens {
        let x = &u.data()[tok * e..(tok + 1) * e];
        b.extend(dense(x, store, &params.proj_b));
        c.extend(dense(x, store, &params.proj_c));
        let low = dense(x, store, &params.dt_down);
        delta.extend(dense(&low, store, &params.dt_up).into_iter().map(softplus));
        match &params.d {
            DParam::Free(id) => d.extend_from_slice(store.value(*id).data()),
            DParam::DataDependent(lin) => d.extend(dense(x, store, lin)),
        }
    }
    let y = naive_scan(u.data(), &delta, &a, &b, &c, n, e, s);
    y.iter()
        .zip(&d)
        .zip(u.data())
        .map(|((yi, di), ui)| yi + di * ui)
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Moves every parameter by a uniform amount in `±scale`.
pub fn perturb(store: &mut ParamStore, scale: f64, rng: &mut Rng) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.uniform_range(-scale, scale);
        }
    }
}

/// Two sinusoids per channel with random periods, phases and amplitudes.
/// Returns `(x: (B, L, V), y: (B, T, V))` cut from one continuous series per sample.
pub fn two_sinusoid_batch(batch: usize, l: usize, t: usize, v: usize, rng: &mut Rng) -> (Tensor, Tensor) {
    let mut coeffs = Vec::new();
    for _ in 0..batch * v {
        coeffs.push([
            rng.uniform_range(8.0, 32.0),
            rng.uniform_range(0.0, 6.3),
            rng.uniform_range(3.0, 12.0),
            rng.uniform_range(0.0, 6.3),
            rng.uniform_range(0.2, 0.6),
        ]);
    }
    let series = |bi: usize, step: usize, ci: usize| {
        let [p1, f1, p2, f2, a2] = coeffs[bi * v + ci];
        let s = step as f64;
        (std::f64::consts::TAU * s / p1 + f1).sin() + a2 * (std::f64::consts::TAU * s / p2 + f2).sin()
    };
    let x = Tensor::from_fn([batch, l, v], |i| series(i / (l * v), (i / v) % l, i % v));
    let y = Tensor::from_fn([batch, t, v], |i| series(i / (t * v), l + (i / v) % t, i % v));
    (x, y)
}

/// CSV text with a timestamp column followed by `channels` smooth series.
pub fn synthetic_csv(rows: usize, channels: usize) -> String {
    let mut s = String::from("date");
    for c in 0..channels {
        s.push_str(&format!(",s{c}"));
    }
    s.push('\n');
    for r in 0..rows {
        s.push_str(&format!("t{r}"));
        for c in 0..channels {
            let (t, cf) = (r as f64, c as f64);
            let v = (t / (4.0 + cf)).sin() + 0.5 * (t / 9.0 + cf).cos();
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

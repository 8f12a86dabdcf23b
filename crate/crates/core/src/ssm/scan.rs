//! Fused selective-scan kernel with a hand-written backward pass.
//!
//! Shapes (leading axes `…` are flattened into independent lanes):
//! `u, Δ: (…, N, E)`, `A: (S)` or `(E, S)`, `B, C: (…, N, S)` → `y: (…, N, E)`.
//!
//! Per lane and token: `h_t = Ā_t ⊙ h_{t−1} + B̄_t · u_t`, `y_t = h_t · C_t`,
//! with `h_0 = 0`. The skip term `D ⊙ u` is added by the caller.

use super::discretize::{zoh_factor, zoh_factor_derivative};
use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct Dims {
    lanes: usize,
    n: usize,
    e: usize,
    s: usize,
    shared_a: bool,
}

impl Dims {
    fn of(u: &[usize], delta: &[usize], a: &[usize], b: &[usize], c: &[usize]) -> Result<Self> {
        let mismatch = |lhs: &[usize], rhs: &[usize]| Error::ShapeMismatch {
            op: "selective_scan",
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        if u.len() < 2 {
            return Err(mismatch(u, &[]));
        }
        if delta != u {
            return Err(mismatch(u, delta));
        }
        let r = u.len();
        let (n, e) = (u[r - 2], u[r - 1]);
        let lanes: usize = u[..r - 2].iter().product();
        let (s, shared_a) = match a {
            [s] => (*s, true),
            [ea, s] if *ea == e => (*s, false),
            _ => return Err(mismatch(u, a)),
        };
        let mut bc_shape = u[..r - 1].to_vec();
        bc_shape.push(s);
        if b != bc_shape.as_slice() {
            return Err(mismatch(&bc_shape, b));
        }
        if c != bc_shape.as_slice() {
            return Err(mismatch(&bc_shape, c));
        }
        Ok(Dims {
            lanes,
            n,
            e,
            s,
            shared_a,
        })
    }

    #[inline]
    fn a_index(&self, ei: usize, si: usize) -> usize {
        if self.shared_a {
            si
        } else {
            ei * self.s + si
        }
    }
}

/// Runs the recurrence; returns `y` and every hidden state `(lanes, N, E, S)`.
fn forward(
    dims: Dims,
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let Dims { lanes, n, e, s, .. } = dims;
    let mut y = vec![0.0; lanes * n * e];
    let mut states = vec![0.0; lanes * n * e * s];
    let mut h = vec![0.0; e * s];
    for lane in 0..lanes {
        h.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..n {
            let tok = lane * n + t;
            let b_t = &b[tok * s..(tok + 1) * s];
            let c_t = &c[tok * s..(tok + 1) * s];
            let mut finite = true;
            for ei in 0..e {
                let dt = delta[tok * e + ei];
                let x = u[tok * e + ei];
                let h_e = &mut h[ei * s..(ei + 1) * s];
                let mut acc = 0.0;
                for si in 0..s {
                    let z = dt * a[dims.a_index(ei, si)];
                    let abar = z.exp();
                    let bbar = zoh_factor(z) * dt * b_t[si];
                    h_e[si] = abar * h_e[si] + bbar * x;
                    acc += c_t[si] * h_e[si];
                }
                finite &= acc.is_finite();
                y[tok * e + ei] = acc;
            }
            if !finite {
                return Err(Error::NonFinite(format!(
                    "selective scan state at token {t} (lane {lane})"
                )));
            }
            states[tok * e * s..(tok + 1) * e * s].copy_from_slice(&h);
        }
    }
    Ok((y, states))
}

struct SelectiveScanOp {
    dims: Dims,
    states: Vec<f64>,
}

impl CustomOp for SelectiveScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let Dims { lanes, n, e, s, .. } = self.dims;
        let (u, delta, a, b, c) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
        );
        let mut gu = vec![0.0; u.len()];
        let mut gdelta = vec![0.0; delta.len()];
        let mut ga = vec![0.0; a.len()];
        let mut gb = vec![0.0; b.len()];
        let mut gc = vec![0.0; c.len()];
        // gradient arriving at h_t from later tokens
        let mut gh = vec![0.0; e * s];
        for lane in 0..lanes {
            gh.iter_mut().for_each(|v| *v = 0.0);
            for t in (0..n).rev() {
                let tok = lane * n + t;
                let h_t = &self.states[tok * e * s..(tok + 1) * e * s];
                let h_prev = (t > 0).then(|| &self.states[(tok - 1) * e * s..tok * e * s]);
                for ei in 0..e {
                    let dt = delta[tok * e + ei];
                    let x = u[tok * e + ei];
                    let gy = grad_out[tok * e + ei];
                    let mut gu_acc = 0.0;
                    let mut gdt_acc = 0.0;
                    for si in 0..s {
                        let idx = ei * s + si;
                        let ai = self.dims.a_index(ei, si);
                        let av = a[ai];
                        let bv = b[tok * s + si];
                        let z = dt * av;
                        let abar = z.exp();
                        let phi = zoh_factor(z);
                        let dphi = zoh_factor_derivative(z);

                        let ght = gh[idx] + gy * c[tok * s + si];
                        gc[tok * s + si] += gy * h_t[idx];
                        let hp = h_prev.map_or(0.0, |h| h[idx]);
                        let g_abar = ght * hp;
                        let g_bbar = ght * x;
                        gu_acc += ght * phi * dt * bv;
                        let gz = g_abar * abar + g_bbar * dphi * dt * bv;
                        gdt_acc += gz * av + g_bbar * phi * bv;
                        ga[ai] += gz * dt;
                        gb[tok * s + si] += g_bbar * phi * dt;
                        gh[idx] = ght * abar;
                    }
                    gu[tok * e + ei] += gu_acc;
                    gdelta[tok * e + ei] += gdt_acc;
                }
            }
        }
        [gu, gdelta, ga, gb, gc]
            .into_iter()
            .zip(needs)
            .map(|(g, &need)| need.then_some(g))
            .collect()
    }
}

/// Records the selective scan on `tape`.
pub fn selective_scan_kernel(
    tape: &mut Tape,
    u: Var,
    delta: Var,
    a: Var,
    b: Var,
    c: Var,
) -> Result<Var> {
    let (uv, dv, av, bv, cv) = (
        tape.value(u),
        tape.value(delta),
        tape.value(a),
        tape.value(b),
        tape.value(c),
    );
    let dims = Dims::of(uv.shape(), dv.shape(), av.shape(), bv.shape(), cv.shape())?;
    if let Some(bad) = dv.data().iter().find(|&&d| d.is_nan() || d <= 0.0) {
        return Err(Error::Domain(format!("Δ must be positive, got {bad}")));
    }
    let (y, states) = forward(dims, uv.data(), dv.data(), av.data(), bv.data(), cv.data())?;
    let out = Tensor::new(uv.shape().to_vec(), y)?;
    Ok(tape.custom(SelectiveScanOp { dims, states }, &[u, delta, a, b, c], out))
}

/// Value-only evaluation of the kernel (no tape).
pub fn selective_scan_values(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
) -> Result<Tensor> {
    let dims = Dims::of(u.shape(), delta.shape(), a.shape(), b.shape(), c.shape())?;
    let (y, _) = forward(dims, u.data(), delta.data(), a.data(), b.data(), c.data())?;
    Tensor::new(u.shape().to_vec(), y)
}

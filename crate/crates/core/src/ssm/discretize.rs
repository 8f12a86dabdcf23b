//! Zero-order-hold discretization of a diagonal continuous SSM.
//!
//! For a diagonal `A` the matrix form reduces elementwise to
//! `Ā = exp(ΔA)` and `B̄ = φ(ΔA)·ΔB` with `φ(z) = (eᶻ − 1)/z`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Below this `|ΔA|` the ZOH factor switches to its Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// The derivative uses its own (wider) series window: the closed form loses
/// digits to cancellation roughly as `ε/z²`.
const DERIVATIVE_SERIES_THRESHOLD: f64 = 1e-2;

/// `(eᶻ − 1)/z` in closed form.
pub fn zoh_factor_exact(z: f64) -> f64 {
    z.exp_m1() / z
}

/// Second-order series `1 + z/2 + z²/6`.
pub fn zoh_factor_series(z: f64) -> f64 {
    1.0 + z * (0.5 + z / 6.0)
}

pub fn zoh_factor(z: f64) -> f64 {
    if z.abs() < SERIES_THRESHOLD {
        zoh_factor_series(z)
    } else {
        zoh_factor_exact(z)
    }
}

/// dφ/dz.
pub fn zoh_factor_derivative(z: f64) -> f64 {
    if z.abs() < DERIVATIVE_SERIES_THRESHOLD {
        // Σ n zⁿ⁻¹/(n+1)!, n = 1..6
        0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0 + z / 840.0))))
    } else {
        let ez = z.exp();
        (ez * (z - 1.0) + 1.0) / (z * z)
    }
}

/// Discretizes one token: `a` is `(S)` or `(E,S)` with `A < 0`, `b` is the
/// token's `(S)` input projection, `dt` is `(E)` with `Δ > 0`.
/// Returns `(Ā, B̄)`, both `(E,S)`.
pub fn discretize(a: &Tensor, b: &Tensor, dt: &Tensor) -> Result<(Tensor, Tensor)> {
    let e = dt.numel();
    let s = b.numel();
    let shared = match a.shape() {
        [n] if *n == s => true,
        [ea, sa] if *ea == e && *sa == s => false,
        other => {
            return Err(Error::ShapeMismatch {
                op: "discretize",
                lhs: other.to_vec(),
                rhs: vec![e, s],
            })
        }
    };
    if let Some(bad) = dt.data().iter().find(|&&d| d.is_nan() || d <= 0.0) {
        return Err(Error::Domain(format!("Δ must be positive, got {bad}")));
    }
    if let Some(bad) = a.data().iter().find(|&&x| x.is_nan() || x >= 0.0) {
        return Err(Error::Domain(format!("A must be negative, got {bad}")));
    }
    let mut abar = vec![0.0; e * s];
    let mut bbar = vec![0.0; e * s];
    for ei in 0..e {
        let d = dt.data()[ei];
        for si in 0..s {
            let av = if shared { a.data()[si] } else { a.data()[ei * s + si] };
            let z = d * av;
            abar[ei * s + si] = z.exp();
            bbar[ei * s + si] = zoh_factor(z) * d * b.data()[si];
        }
    }
    Ok((Tensor::new([e, s], abar)?, Tensor::new([e, s], bbar)?))
}

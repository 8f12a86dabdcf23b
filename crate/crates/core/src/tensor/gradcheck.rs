use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly spaced coordinates per parameter.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_coords: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.entries.iter().filter(|e| !e.passed).collect()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<5} {:<32} rel={:.3e} at [{}] analytic={:.6e} numeric={:.6e}",
                if e.passed { "ok" } else { "FAIL" },
                e.name,
                e.max_rel_error,
                e.worst_index,
                e.analytic,
                e.numeric
            )?;
        }
        Ok(())
    }
}

fn eval<F>(f: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let v = tape.value(loss).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("grad_check forward value {v}")));
    }
    Ok(v)
}

/// Compares the tape's gradients of `f` with respect to every parameter in
/// `store` against central finite differences.
///
/// `f` must be deterministic. Parameter values are restored before returning.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let base = tape.value(loss).item();
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("grad_check forward value {base}")));
    }
    let saved_grads: Vec<Vec<f64>> = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();
    tape.backward_into(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.clone()).collect();
    for (p, g) in store.iter_mut().zip(saved_grads) {
        p.grad = g;
    }
    drop(tape);

    let ids: Vec<_> = store.ids().collect();
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = (0.0f64, 0usize, 0.0f64, 0.0f64);
        for &c in &coords {
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + opts.step;
            let plus = eval(&mut f, store);
            store.value_mut(id).data_mut()[c] = orig - opts.step;
            let minus = eval(&mut f, store);
            store.value_mut(id).data_mut()[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let a = analytic[id.index()][c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > worst.0 || coords.len() == 1 {
                worst = (rel, c, a, numeric);
            }
        }
        entries.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            analytic: worst.2,
            numeric: worst.3,
            passed: worst.0 < opts.tol,
        });
    }
    Ok(GradCheckReport { entries })
}

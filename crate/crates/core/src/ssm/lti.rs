use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Time-invariant SSM evaluated as a causal convolution.
///
/// `x: (N, E)`, `abar, bbar: (E, S)`, `c: (S)`, `d: (E)`. Builds the kernel
/// `K̄_j[e] = Σ_s c_s · abar[e,s]^j · bbar[e,s]` and returns
/// `y_t = Σ_{j≤t} K̄_j ⊙ x_{t−j} + d ⊙ x_t`.
pub fn lti_convolution_reference(
    x: &Tensor,
    abar: &Tensor,
    bbar: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<Tensor> {
    let [n, e] = *x.shape() else {
        return Err(Error::ShapeMismatch {
            op: "lti_convolution_reference",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    let s = c.numel();
    for (t, name) in [(abar, "abar"), (bbar, "bbar")] {
        if t.shape() != [e, s] {
            return Err(Error::Data(format!(
                "{name} has shape {:?}, expected [{e}, {s}]",
                t.shape()
            )));
        }
    }
    if d.numel() != e {
        return Err(Error::ShapeMismatch {
            op: "lti_convolution_reference",
            lhs: vec![e],
            rhs: d.shape().to_vec(),
        });
    }

    let mut kernel = vec![0.0; n * e];
    for ei in 0..e {
        for si in 0..s {
            let a = abar.data()[ei * s + si];
            let mut pow = 1.0;
            for j in 0..n {
                kernel[j * e + ei] += c.data()[si] * pow * bbar.data()[ei * s + si];
                pow *= a;
            }
        }
    }

    let xs = x.data();
    let y = Tensor::from_fn([n, e], |i| {
        let (t, ei) = (i / e, i % e);
        let conv: f64 = (0..=t).map(|j| kernel[j * e + ei] * xs[(t - j) * e + ei]).sum();
        conv + d.data()[ei] * xs[i]
    });
    Ok(y)
}

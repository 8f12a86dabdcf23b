use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

/// Left-padded depthwise convolution along the token axis.
///
/// `x: (…, N, E)`, `weight: (E, K)`, `bias: (E)`;
/// `out[t, e] = bias[e] + Σ_k weight[e, k] · x[t − (K − 1) + k, e]`,
/// with positions before the first token treated as zero.
pub fn causal_depthwise_conv(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xs = tape.value(x);
    let ws = tape.value(weight);
    let bs = tape.value(bias);
    let r = xs.rank();
    if r < 2 || ws.rank() != 2 || ws.shape()[0] != xs.shape()[r - 1] || bs.shape() != [ws.shape()[0]] {
        return Err(Error::ShapeMismatch {
            op: "causal_depthwise_conv",
            lhs: xs.shape().to_vec(),
            rhs: ws.shape().to_vec(),
        });
    }
    let geo = ConvGeometry {
        lanes: xs.shape()[..r - 2].iter().product(),
        n: xs.shape()[r - 2],
        e: xs.shape()[r - 1],
        k: ws.shape()[1],
    };
    let mut out: Vec<f64> = (0..xs.numel()).map(|o| bs.data()[o % geo.e]).collect();
    geo.for_each_tap(|o, i, wi| out[o] += ws.data()[wi] * xs.data()[i]);
    let out = Tensor::new(xs.shape().to_vec(), out)?;
    Ok(tape.custom(ConvOp { geo }, &[x, weight, bias], out))
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    lanes: usize,
    n: usize,
    e: usize,
    k: usize,
}

impl ConvGeometry {
    /// Calls `tap(out_idx, in_idx, weight_idx)` for every contributing product.
    fn for_each_tap(&self, mut tap: impl FnMut(usize, usize, usize)) {
        let ConvGeometry { lanes, n, e, k } = *self;
        for lane in 0..lanes {
            for t in 0..n {
                for ei in 0..e {
                    let o = (lane * n + t) * e + ei;
                    for kk in 0..k {
                        let Some(src) = (t + kk + 1).checked_sub(k) else {
                            continue;
                        };
                        tap(o, (lane * n + src) * e + ei, ei * k + kk);
                    }
                }
            }
        }
    }
}

struct ConvOp {
    geo: ConvGeometry,
}

impl CustomOp for ConvOp {
    fn name(&self) -> &'static str {
        "causal_depthwise_conv"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; inputs[2].numel()];
        self.geo.for_each_tap(|o, i, wi| {
            gx[i] += grad_out[o] * w[wi];
            gw[wi] += grad_out[o] * x[i];
        });
        for (o, g) in grad_out.iter().enumerate() {
            gb[o % self.geo.e] += g;
        }
        [gx, gw, gb]
            .into_iter()
            .zip(needs)
            .map(|(g, &need)| need.then_some(g))
            .collect()
    }
}

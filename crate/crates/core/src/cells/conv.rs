//! Same-length temporal convolutions with zero padding.

use crate::tape::{Tape, Var};
use crate::tensor::TensorError;

use super::params::Conv1dParams;

type Result<T> = std::result::Result<T, TensorError>;

/// Stacked convolutions over `xs` (one `[B×D]` tensor per step), ReLU
/// between layers. Each layer widens the receptive field by `kernel/2` on
/// both sides.
pub fn conv1d_forward(tape: &mut Tape, xs: &[Var], p: &Conv1dParams<Var>) -> Result<Vec<Var>> {
    let mut seq = xs.to_vec();
    let n_layers = p.layers.len();
    for (li, layer) in p.layers.iter().enumerate() {
        let kernel = layer.taps.len();
        if kernel % 2 == 0 {
            return Err(TensorError::Contract(format!("conv kernel width {kernel} is not odd")));
        }
        let radius = kernel / 2;
        let t_len = seq.len();
        let mut next = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut terms = Vec::with_capacity(kernel);
            for (k, &tap) in layer.taps.iter().enumerate() {
                let Some(src) = (t + k).checked_sub(radius).filter(|&u| u < t_len) else {
                    continue;
                };
                terms.push(tape.matmul_nt(seq[src], tap)?);
            }
            let sum = if terms.len() == 1 { terms[0] } else { tape.add_n(&terms)? };
            let mut out = tape.add_bias(sum, layer.b)?;
            if li + 1 < n_layers {
                out = tape.relu(out);
            }
            next.push(out);
        }
        seq = next;
    }
    Ok(seq)
}

//! The MoNet unit and its layer-wise recursive expansion.
//!
//! One unit step fuses three candidates per coordinate: a ReLU hidden state
//! built from the appearance input and both gated neighbors, and the two
//! neighbors themselves:
//!
//! ```text
//! r_f = σ(W_r x + U_rf s_left  + b_r)      r_b = σ(W_r x + U_rb s_right + b_r)
//! z_f = σ(W_z x + U_zf s_left  + b_z)      z_b = σ(W_z x + U_zb s_right + b_z)
//! h   = relu(W_h x + U_h [s_right∘r_b, s_left∘r_f] + b_h)
//! [z̃, z̃_b, z̃_f] = softmax([1, z_b, z_f])   (per coordinate)
//! s   = z̃∘h + z̃_b∘s_right + z̃_f∘s_left
//! ```
//!
//! [`monet_forward`] seeds every position with a neighbor-free unit step and
//! then applies `L` expansion layers, each reading the previous layer at
//! `t-1` and `t+1`. Sequence ends are padded with zero states and all layers
//! share one parameter set, so the receptive field of layer `L` is exactly
//! `t-L ..= t+L`.

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

use super::params::MoNetParams;
use super::recurrent::affine;

type Result<T> = std::result::Result<T, TensorError>;

/// Every intermediate value of one unit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoNetStepTrace<T = Var> {
    pub r_f: T,
    pub r_b: T,
    pub z_f: T,
    pub z_b: T,
    pub h: T,
    /// Fusion weight of the hidden state.
    pub fuse_h: T,
    /// Fusion weight of the right (`t+1`) neighbor.
    pub fuse_b: T,
    /// Fusion weight of the left (`t-1`) neighbor.
    pub fuse_f: T,
    pub s: T,
}

impl MoNetStepTrace<Var> {
    /// Copies the traced values off the tape.
    pub fn values(&self, tape: &Tape) -> MoNetStepTrace<Tensor> {
        let v = |var: Var| tape.value(var).clone();
        MoNetStepTrace {
            r_f: v(self.r_f),
            r_b: v(self.r_b),
            z_f: v(self.z_f),
            z_b: v(self.z_b),
            h: v(self.h),
            fuse_h: v(self.fuse_h),
            fuse_b: v(self.fuse_b),
            fuse_f: v(self.fuse_f),
            s: v(self.s),
        }
    }
}

/// `W x + b` for the reset, update and hidden paths. Independent of the
/// layer index, so computed once per position.
#[derive(Debug, Clone, Copy)]
struct MoNetInput {
    r: Var,
    z: Var,
    h: Var,
}

fn project(tape: &mut Tape, p: &MoNetParams<Var>, x: Var) -> Result<MoNetInput> {
    Ok(MoNetInput {
        r: affine(tape, x, p.w_r, p.b_r)?,
        z: affine(tape, x, p.w_z, p.b_z)?,
        h: affine(tape, x, p.w_h, p.b_h)?,
    })
}

fn gate(tape: &mut Tape, input: Var, u: Var, neighbor: Option<Var>) -> Result<Var> {
    let pre = match neighbor {
        Some(s) => {
            let us = tape.matmul_nt(s, u)?;
            tape.add(input, us)?
        }
        None => input,
    };
    Ok(tape.sigmoid(pre))
}

/// Shared per-forward constants: the literal `1` of the fusion softmax and
/// a zero state for absent neighbors.
struct Constants {
    ones: Var,
    zeros: Var,
}

impl Constants {
    fn new(tape: &mut Tape, batch: usize, d_s: usize) -> Self {
        Self {
            ones: tape.constant(Tensor::full([batch, d_s], 1.0)),
            zeros: tape.constant(Tensor::zeros([batch, d_s])),
        }
    }
}

/// A `None` neighbor stands for the zero state; the result is identical to
/// passing explicit zeros but skips the dead products.
fn unit_projected(
    tape: &mut Tape,
    p: &MoNetParams<Var>,
    input: MoNetInput,
    left: Option<Var>,
    right: Option<Var>,
    k: &Constants,
) -> Result<MoNetStepTrace> {
    let r_f = gate(tape, input.r, p.u_rf, left)?;
    let r_b = gate(tape, input.r, p.u_rb, right)?;
    let z_f = gate(tape, input.z, p.u_zf, left)?;
    let z_b = gate(tape, input.z, p.u_zb, right)?;

    let right_gated = match right {
        Some(s) => tape.mul(s, r_b)?,
        None => k.zeros,
    };
    let left_gated = match left {
        Some(s) => tape.mul(s, r_f)?,
        None => k.zeros,
    };
    let h = if left.is_none() && right.is_none() {
        tape.relu(input.h)
    } else {
        let context = tape.concat(right_gated, left_gated, 1)?;
        let uh = tape.matmul_nt(context, p.u_h)?;
        let pre = tape.add(input.h, uh)?;
        tape.relu(pre)
    };

    let weights = tape.group_softmax(&[k.ones, z_b, z_f])?;
    let (fuse_h, fuse_b, fuse_f) = (weights[0], weights[1], weights[2]);
    let mut terms = vec![tape.mul(fuse_h, h)?];
    if let Some(s) = right {
        terms.push(tape.mul(fuse_b, s)?);
    }
    if let Some(s) = left {
        terms.push(tape.mul(fuse_f, s)?);
    }
    let s = if terms.len() == 1 { terms[0] } else { tape.add_n(&terms)? };
    Ok(MoNetStepTrace {
        r_f,
        r_b,
        z_f,
        z_b,
        h,
        fuse_h,
        fuse_b,
        fuse_f,
        s,
    })
}

/// One MoNet unit step. `s_left` is the previous layer's state at `t-1`,
/// `s_right` the one at `t+1`; all tensors are batched `[B×D]`.
pub fn monet_unit(
    tape: &mut Tape,
    x_t: Var,
    s_left: Var,
    s_right: Var,
    p: &MoNetParams<Var>,
) -> Result<MoNetStepTrace> {
    let batch = tape.value(x_t).shape()[0];
    let d_s = tape.value(p.b_h).len();
    for s in [s_left, s_right] {
        if tape.value(s).shape() != [batch, d_s] {
            return Err(TensorError::ShapeMismatch {
                op: "monet_unit",
                lhs: vec![batch, d_s],
                rhs: tape.value(s).shape().to_vec(),
            });
        }
    }
    let k = Constants::new(tape, batch, d_s);
    let input = project(tape, p, x_t)?;
    unit_projected(tape, p, input, Some(s_left), Some(s_right), &k)
}

/// Recursive expansion over a sequence `xs` (one `[B×D_x]` tensor per step).
///
/// Every position is first seeded with `monet_unit(x_t, 0, 0)`; each of the
/// `layers` expansion layers then computes
/// `s_t^i = monet_unit(x_t, s_{t-1}^{i-1}, s_{t+1}^{i-1})` with zero states
/// beyond both ends. With `causal_only` the right neighbor is always the
/// zero state, so no output depends on a later input.
pub fn monet_forward(
    tape: &mut Tape,
    xs: &[Var],
    p: &MoNetParams<Var>,
    layers: usize,
    causal_only: bool,
) -> Result<Vec<Var>> {
    Ok(monet_forward_traced(tape, xs, p, layers, causal_only)?
        .pop()
        .map(|layer| layer.into_iter().map(|tr| tr.s).collect())
        .unwrap_or_default())
}

/// Like [`monet_forward`] but returns the traces of every layer, seed layer
/// first.
pub fn monet_forward_traced(
    tape: &mut Tape,
    xs: &[Var],
    p: &MoNetParams<Var>,
    layers: usize,
    causal_only: bool,
) -> Result<Vec<Vec<MoNetStepTrace>>> {
    if layers == 0 {
        return Err(TensorError::Contract("monet_forward needs at least one layer".into()));
    }
    let Some(&first) = xs.first() else {
        return Ok(Vec::new());
    };
    let batch = tape.value(first).shape()[0];
    let d_s = tape.value(p.b_h).len();
    let k = Constants::new(tape, batch, d_s);
    let inputs = xs
        .iter()
        .map(|&x| project(tape, p, x))
        .collect::<Result<Vec<_>>>()?;

    let seed = inputs
        .iter()
        .map(|&input| unit_projected(tape, p, input, None, None, &k))
        .collect::<Result<Vec<_>>>()?;
    let mut all = vec![seed];
    for _ in 0..layers {
        let prev: Vec<Var> = all.last().expect("seed layer").iter().map(|tr| tr.s).collect();
        let n = prev.len();
        let mut layer = Vec::with_capacity(n);
        for (t, &input) in inputs.iter().enumerate() {
            let left = (t > 0).then(|| prev[t - 1]);
            let right = (!causal_only && t + 1 < n).then(|| prev[t + 1]);
            layer.push(unit_projected(tape, p, input, left, right, &k)?);
        }
        all.push(layer);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(d_x: usize, d_s: usize) -> MoNetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        MoNetParams::init(&mut rng, d_x, d_s).map(&mut |t: &Tensor| Tensor::zeros(t.shape()))
    }

    #[test]
    fn zero_params_zero_neighbors() {
        let mut tape = Tape::new();
        let p = zero_params(3, 2).map(&mut |t: &Tensor| tape.param(t));
        let x = tape.constant(Tensor::matrix(&[&[1.0, -2.0, 0.5]]));
        let z = tape.constant(Tensor::zeros([1, 2]));
        let tr = monet_unit(&mut tape, x, z, z, &p).unwrap().values(&tape);
        assert_eq!(tr.h.data(), &[0.0, 0.0]);
        assert_eq!(tr.z_b.data(), &[0.5, 0.5]);
        assert_eq!(tr.z_f.data(), &[0.5, 0.5]);
        assert_eq!(tr.s.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_give_closed_form_fusion() {
        let mut params = zero_params(3, 2);
        params.b_z = Tensor::full([2], -800.0);
        let mut tape = Tape::new();
        let p = params.map(&mut |t: &Tensor| tape.param(t));
        let x = tape.constant(Tensor::matrix(&[&[1.0, -2.0, 0.5]]));
        let n = tape.constant(Tensor::matrix(&[&[0.3, 0.9]]));
        let tr = monet_unit(&mut tape, x, n, n, &p).unwrap().values(&tape);
        let e = std::f64::consts::E;
        for c in 0..2 {
            assert!((tr.fuse_h.data()[c] - e / (e + 2.0)).abs() < 1e-12);
            assert!((tr.fuse_b.data()[c] - 1.0 / (e + 2.0)).abs() < 1e-12);
            assert!((tr.fuse_f.data()[c] - 1.0 / (e + 2.0)).abs() < 1e-12);
        }
        assert!((tr.fuse_h.data()[0] - 0.5761).abs() < 1e-4);
        assert!((tr.fuse_b.data()[0] - 0.2119).abs() < 1e-4);
    }

    #[test]
    fn absent_neighbor_matches_explicit_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = MoNetParams::init(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let p = params.map(&mut |t: &Tensor| tape.param(t));
        let x = tape.constant(Tensor::matrix(&[&[0.2, -0.7, 1.1], &[1.0, 0.0, -1.0]]));
        let z = tape.constant(Tensor::zeros([2, 4]));
        let explicit = monet_unit(&mut tape, x, z, z, &p).unwrap();
        let k = Constants::new(&mut tape, 2, 4);
        let input = project(&mut tape, &p, x).unwrap();
        let implicit = unit_projected(&mut tape, &p, input, None, None, &k).unwrap();
        assert_eq!(tape.value(explicit.s), tape.value(implicit.s));
    }

    #[test]
    fn single_step_sequence_is_one_unit_for_any_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = MoNetParams::init(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let p = params.map(&mut |t: &Tensor| tape.param(t));
        let x = tape.constant(Tensor::matrix(&[&[0.4, -0.2, 0.9]]));
        let z = tape.constant(Tensor::zeros([1, 4]));
        let unit = monet_unit(&mut tape, x, z, z, &p).unwrap().s;
        for layers in 1..=4 {
            let out = monet_forward(&mut tape, &[x], &p, layers, false).unwrap();
            assert_eq!(tape.value(out[0]), tape.value(unit));
        }
    }

    #[test]
    fn rejects_zero_layers_and_bad_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = MoNetParams::init(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let p = params.map(&mut |t: &Tensor| tape.param(t));
        let x = tape.constant(Tensor::zeros([1, 3]));
        assert!(monet_forward(&mut tape, &[x], &p, 0, false).is_err());
        let bad = tape.constant(Tensor::zeros([1, 3]));
        let ok = tape.constant(Tensor::zeros([1, 4]));
        assert!(monet_unit(&mut tape, x, bad, ok, &p).is_err());
    }
}

//! Causal recurrent baselines (vanilla RNN, GRU, LSTM), their stacked and
//! bidirectional wrappers.
//!
//! All inputs are batched row-major: `x_t` is `[B×D_x]`, states are `[B×D_s]`.

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

use super::params::{GruParams, LstmParams, RnnParams};

type Result<T> = std::result::Result<T, TensorError>;

/// `x·Wᵀ + b` for a batch of rows.
pub(crate) fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul_nt(x, w)?;
    tape.add_bias(xw, b)
}

fn zeros_like_state(tape: &mut Tape, batch: usize, u: Var) -> Var {
    let d_s = tape.value(u).shape()[0];
    tape.constant(Tensor::zeros([batch, d_s]))
}

/// A recurrent cell whose input-side projections can be computed for all
/// time steps before the recurrence runs.
pub trait RecurrentCell {
    type Input;
    type State: Copy;

    fn project(&self, tape: &mut Tape, x: Var) -> Result<Self::Input>;
    fn zero_state(&self, tape: &mut Tape, batch: usize) -> Self::State;
    fn step(&self, tape: &mut Tape, input: &Self::Input, state: Self::State) -> Result<Self::State>;
    fn output(state: Self::State) -> Var;
}

impl RecurrentCell for RnnParams<Var> {
    type Input = Var;
    type State = Var;

    fn project(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        affine(tape, x, self.w, self.b)
    }

    fn zero_state(&self, tape: &mut Tape, batch: usize) -> Var {
        zeros_like_state(tape, batch, self.u)
    }

    fn step(&self, tape: &mut Tape, input: &Var, s_prev: Var) -> Result<Var> {
        let us = tape.matmul_nt(s_prev, self.u)?;
        let pre = tape.add(*input, us)?;
        Ok(tape.tanh(pre))
    }

    fn output(state: Var) -> Var {
        state
    }
}

/// Input-side GRU projections `W x_t + b` for the three gates.
pub struct GruInput {
    r: Var,
    z: Var,
    h: Var,
}

impl RecurrentCell for GruParams<Var> {
    type Input = GruInput;
    type State = Var;

    fn project(&self, tape: &mut Tape, x: Var) -> Result<GruInput> {
        Ok(GruInput {
            r: affine(tape, x, self.w_r, self.b_r)?,
            z: affine(tape, x, self.w_z, self.b_z)?,
            h: affine(tape, x, self.w_h, self.b_h)?,
        })
    }

    fn zero_state(&self, tape: &mut Tape, batch: usize) -> Var {
        zeros_like_state(tape, batch, self.u_r)
    }

    fn step(&self, tape: &mut Tape, input: &GruInput, s_prev: Var) -> Result<Var> {
        let ur = tape.matmul_nt(s_prev, self.u_r)?;
        let r_pre = tape.add(input.r, ur)?;
        let r = tape.sigmoid(r_pre);
        let uz = tape.matmul_nt(s_prev, self.u_z)?;
        let z_pre = tape.add(input.z, uz)?;
        let z = tape.sigmoid(z_pre);
        let gated = tape.mul(r, s_prev)?;
        let uh = tape.matmul_nt(gated, self.u_h)?;
        let h_pre = tape.add(input.h, uh)?;
        let h = tape.tanh(h_pre);
        // s = z∘s_prev + (1 - z)∘h
        let keep = tape.mul(z, s_prev)?;
        let zh = tape.mul(z, h)?;
        let fresh = tape.sub(h, zh)?;
        tape.add(keep, fresh)
    }

    fn output(state: Var) -> Var {
        state
    }
}

/// One GRU step: `x_t` is `[B×D_x]`, `s_prev` is `[B×D_s]`.
pub fn gru_step(tape: &mut Tape, x_t: Var, s_prev: Var, p: &GruParams<Var>) -> Result<Var> {
    let input = p.project(tape, x_t)?;
    p.step(tape, &input, s_prev)
}

/// Hidden and cell state of an LSTM.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

pub struct LstmInput {
    i: Var,
    f: Var,
    o: Var,
    g: Var,
}

impl RecurrentCell for LstmParams<Var> {
    type Input = LstmInput;
    type State = LstmState;

    fn project(&self, tape: &mut Tape, x: Var) -> Result<LstmInput> {
        Ok(LstmInput {
            i: affine(tape, x, self.w_i, self.b_i)?,
            f: affine(tape, x, self.w_f, self.b_f)?,
            o: affine(tape, x, self.w_o, self.b_o)?,
            g: affine(tape, x, self.w_g, self.b_g)?,
        })
    }

    fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        LstmState {
            h: zeros_like_state(tape, batch, self.u_i),
            c: zeros_like_state(tape, batch, self.u_i),
        }
    }

    fn step(&self, tape: &mut Tape, input: &LstmInput, state: LstmState) -> Result<LstmState> {
        let gate = |tape: &mut Tape, pre_x: Var, u: Var| -> Result<Var> {
            let uh = tape.matmul_nt(state.h, u)?;
            tape.add(pre_x, uh)
        };
        let i_pre = gate(tape, input.i, self.u_i)?;
        let f_pre = gate(tape, input.f, self.u_f)?;
        let o_pre = gate(tape, input.o, self.u_o)?;
        let g_pre = gate(tape, input.g, self.u_g)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let kept = tape.mul(f, state.c)?;
        let written = tape.mul(i, g)?;
        let c = tape.add(kept, written)?;
        let c_act = tape.tanh(c);
        let h = tape.mul(o, c_act)?;
        Ok(LstmState { h, c })
    }

    fn output(state: LstmState) -> Var {
        state.h
    }
}

/// One LSTM step.
pub fn lstm_step(tape: &mut Tape, x_t: Var, state: LstmState, p: &LstmParams<Var>) -> Result<LstmState> {
    let input = p.project(tape, x_t)?;
    p.step(tape, &input, state)
}

/// Runs one layer over the sequence, optionally right-to-left. Outputs are
/// returned in the original time order.
pub fn run_layer<C: RecurrentCell>(tape: &mut Tape, cell: &C, xs: &[Var], reverse: bool) -> Result<Vec<Var>> {
    let Some(&first) = xs.first() else {
        return Ok(Vec::new());
    };
    let batch = tape.value(first).shape()[0];
    let inputs = xs
        .iter()
        .map(|&x| cell.project(tape, x))
        .collect::<Result<Vec<_>>>()?;
    let mut state = cell.zero_state(tape, batch);
    let mut outputs = vec![first; xs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..xs.len()).rev())
    } else {
        Box::new(0..xs.len())
    };
    for t in order {
        state = cell.step(tape, &inputs[t], state)?;
        outputs[t] = C::output(state);
    }
    Ok(outputs)
}

/// Stacks layers directly: layer `l+1` consumes layer `l`'s outputs.
pub fn run_stack<C: RecurrentCell>(tape: &mut Tape, layers: &[C], xs: &[Var], reverse: bool) -> Result<Vec<Var>> {
    let mut seq = xs.to_vec();
    for cell in layers {
        seq = run_layer(tape, cell, &seq, reverse)?;
    }
    Ok(seq)
}

/// Independent left-to-right and right-to-left stacks, summed per step so the
/// output width stays `D_s`.
pub fn bidirectional_forward<C: RecurrentCell>(
    tape: &mut Tape,
    xs: &[Var],
    forward: &[C],
    backward: &[C],
) -> Result<Vec<Var>> {
    let fwd = run_stack(tape, forward, xs, false)?;
    let bwd = run_stack(tape, backward, xs, true)?;
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.add(f, b))
        .collect()
}

//! Exact multiply-add counts of the forward pass.
//!
//! Matrix-vector products count one multiply-add per weight; elementwise
//! products (gating, fusion) count one each. Bias additions and activation
//! evaluations are not multiply-adds; activations are reported separately.

use serde::Serialize;

use super::model::{CellConfig, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    /// Multiply-adds of one interior cell step (first layer for stacks).
    pub unit_step_macs: u64,
    /// Activation evaluations of that step.
    pub unit_step_activations: u64,
    /// Multiply-adds of the whole forward pass over a length-`T` sequence,
    /// following exactly the products the implementation performs.
    pub sequence_macs: u64,
    pub sequence_len: u64,
}

impl FlopCount {
    /// Sequence cost averaged per time step.
    pub fn per_step_macs(&self) -> f64 {
        self.sequence_macs as f64 / self.sequence_len.max(1) as f64
    }
}

fn recurrent_unit(family: Family, d_in: u64, d_s: u64) -> (u64, u64) {
    match family {
        Family::VanillaRnn | Family::Conv1d => (d_s * d_in + d_s * d_s, d_s),
        Family::Gru | Family::BiGru => (3 * d_s * d_in + 3 * d_s * d_s + 3 * d_s, 3 * d_s),
        Family::Lstm | Family::BiLstm => (4 * d_s * d_in + 4 * d_s * d_s + 3 * d_s, 5 * d_s),
        Family::Monet => (3 * d_s * d_in + 6 * d_s * d_s + 5 * d_s, 8 * d_s),
    }
}

pub fn flop_count(config: &CellConfig, seq_len: usize) -> FlopCount {
    let (d_x, d_s, t) = (config.d_x as u64, config.d_s as u64, seq_len as u64);
    let layers = config.layers as u64;
    let (unit_step_macs, unit_step_activations) = match config.family {
        Family::Conv1d => {
            let last = config.layers == 1;
            (config.kernel as u64 * d_s * d_x, if last { 0 } else { d_s })
        }
        f => recurrent_unit(f, d_x, d_s),
    };
    let cell = match config.family {
        Family::VanillaRnn | Family::Gru | Family::Lstm | Family::BiGru | Family::BiLstm => {
            let one_dir: u64 = (0..layers)
                .map(|l| recurrent_unit(config.family, if l == 0 { d_x } else { d_s }, d_s).0 * t)
                .sum();
            let dirs = if matches!(config.family, Family::BiGru | Family::BiLstm) { 2 } else { 1 };
            dirs * one_dir
        }
        Family::Conv1d => {
            let radius = config.kernel / 2;
            let mut total = 0;
            for l in 0..layers {
                let d_in = if l == 0 { d_x } else { d_s };
                for pos in 0..seq_len {
                    let taps = (0..config.kernel)
                        .filter(|&k| (pos + k).checked_sub(radius).is_some_and(|u| u < seq_len))
                        .count() as u64;
                    total += taps * d_s * d_in;
                }
            }
            total
        }
        Family::Monet => {
            let projections = t * 3 * d_s * d_x;
            // seed layer: only z̃∘h
            let seed = t * d_s;
            let mut expansion = 0;
            for pos in 0..seq_len {
                let neighbors = u64::from(pos > 0)
                    + u64::from(!config.causal_only && pos + 1 < seq_len);
                let with_context = if neighbors > 0 { 2 * d_s * d_s } else { 0 };
                expansion += neighbors * (2 * d_s * d_s + 2 * d_s) + with_context + d_s;
            }
            projections + seed + layers * expansion
        }
    };
    let readout = config.d_out.map_or(0, |d| t * d as u64 * d_s);
    FlopCount {
        unit_step_macs,
        unit_step_activations,
        sequence_macs: cell + readout,
        sequence_len: t,
    }
}

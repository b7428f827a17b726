//! Cell configuration, owned parameters and the batched forward pass shared
//! by every family.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

use super::conv::conv1d_forward;
use super::monet::monet_forward;
use super::params::{
    Conv1dParams, ConvLayer, GruParams, LinearParams, LstmParams, MoNetParams, RnnParams,
};
use super::recurrent::{affine, bidirectional_forward, run_stack};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid cell config: {field}: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    VanillaRnn,
    Gru,
    Lstm,
    BiGru,
    BiLstm,
    Conv1d,
    Monet,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::VanillaRnn,
        Family::Gru,
        Family::Lstm,
        Family::BiGru,
        Family::BiLstm,
        Family::Conv1d,
        Family::Monet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::VanillaRnn => "vanilla-rnn",
            Family::Gru => "gru",
            Family::Lstm => "lstm",
            Family::BiGru => "bi-gru",
            Family::BiLstm => "bi-lstm",
            Family::Conv1d => "conv1d",
            Family::Monet => "monet",
        }
    }

    pub fn tag(self) -> u32 {
        Family::ALL.iter().position(|&f| f == self).expect("listed") as u32
    }

    pub fn from_tag(tag: u32) -> Option<Family> {
        Family::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| ConfigError {
                field: "family",
                reason: format!("unknown cell family {s:?}"),
            })
    }
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

/// Architecture of a hallucination model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub family: Family,
    pub d_x: usize,
    pub d_s: usize,
    /// Stack depth for recurrent and conv families, expansion depth for MoNet.
    #[serde(default = "one")]
    pub layers: usize,
    /// Odd temporal width, conv1d only.
    #[serde(default = "three")]
    pub kernel: usize,
    /// MoNet only: drop every right-neighbor input.
    #[serde(default)]
    pub causal_only: bool,
    /// Optional linear readout from `d_s` to this width. Lets families with
    /// different state sizes emit the same feature dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_out: Option<usize>,
}

impl CellConfig {
    pub fn new(family: Family, d_x: usize, d_s: usize) -> Self {
        Self {
            family,
            d_x,
            d_s,
            layers: 1,
            kernel: 3,
            causal_only: false,
            d_out: None,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_causal_only(mut self, causal_only: bool) -> Self {
        self.causal_only = causal_only;
        self
    }

    pub fn with_d_out(mut self, d_out: Option<usize>) -> Self {
        self.d_out = d_out;
        self
    }

    pub fn output_dim(&self) -> usize {
        self.d_out.unwrap_or(self.d_s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |field, reason: &str| {
            Err(ConfigError {
                field,
                reason: reason.to_string(),
            })
        };
        if self.d_x == 0 {
            return err("d_x", "must be at least 1");
        }
        if self.d_s == 0 {
            return err("d_s", "must be at least 1");
        }
        if self.layers == 0 {
            return err("layers", "must be at least 1");
        }
        if self.kernel.is_multiple_of(2) {
            return err("kernel", "must be odd");
        }
        if self.causal_only && self.family != Family::Monet {
            return err("causal_only", "only meaningful for the monet family");
        }
        if self.d_out == Some(0) {
            return err("d_out", "must be at least 1 when set");
        }
        Ok(())
    }
}

/// Learnable weights of one family, generic over storage like the
/// individual parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams<T = Tensor> {
    VanillaRnn(Vec<RnnParams<T>>),
    Gru(Vec<GruParams<T>>),
    Lstm(Vec<LstmParams<T>>),
    BiGru {
        forward: Vec<GruParams<T>>,
        backward: Vec<GruParams<T>>,
    },
    BiLstm {
        forward: Vec<LstmParams<T>>,
        backward: Vec<LstmParams<T>>,
    },
    Conv1d(Conv1dParams<T>),
    MoNet(MoNetParams<T>),
}

impl<T> CellParams<T> {
    pub fn map<U, F: FnMut(&T) -> U>(&self, f: &mut F) -> CellParams<U> {
        match self {
            CellParams::VanillaRnn(l) => CellParams::VanillaRnn(l.iter().map(|p| p.map(f)).collect()),
            CellParams::Gru(l) => CellParams::Gru(l.iter().map(|p| p.map(f)).collect()),
            CellParams::Lstm(l) => CellParams::Lstm(l.iter().map(|p| p.map(f)).collect()),
            CellParams::BiGru { forward, backward } => CellParams::BiGru {
                forward: forward.iter().map(|p| p.map(f)).collect(),
                backward: backward.iter().map(|p| p.map(f)).collect(),
            },
            CellParams::BiLstm { forward, backward } => CellParams::BiLstm {
                forward: forward.iter().map(|p| p.map(f)).collect(),
                backward: backward.iter().map(|p| p.map(f)).collect(),
            },
            CellParams::Conv1d(p) => CellParams::Conv1d(p.map(f)),
            CellParams::MoNet(p) => CellParams::MoNet(p.map(f)),
        }
    }

    pub fn for_each<'a, F: FnMut(&'a T)>(&'a self, f: &mut F) {
        match self {
            CellParams::VanillaRnn(l) => l.iter().for_each(|p| p.for_each(f)),
            CellParams::Gru(l) => l.iter().for_each(|p| p.for_each(f)),
            CellParams::Lstm(l) => l.iter().for_each(|p| p.for_each(f)),
            CellParams::BiGru { forward, backward } => {
                forward.iter().chain(backward).for_each(|p| p.for_each(f))
            }
            CellParams::BiLstm { forward, backward } => {
                forward.iter().chain(backward).for_each(|p| p.for_each(f))
            }
            CellParams::Conv1d(p) => p.layers.iter().for_each(|l| l.for_each(f)),
            CellParams::MoNet(p) => p.for_each(f),
        }
    }

    pub fn for_each_mut<'a, F: FnMut(&'a mut T)>(&'a mut self, f: &mut F) {
        match self {
            CellParams::VanillaRnn(l) => l.iter_mut().for_each(|p| p.for_each_mut(f)),
            CellParams::Gru(l) => l.iter_mut().for_each(|p| p.for_each_mut(f)),
            CellParams::Lstm(l) => l.iter_mut().for_each(|p| p.for_each_mut(f)),
            CellParams::BiGru { forward, backward } => forward
                .iter_mut()
                .chain(backward.iter_mut())
                .for_each(|p| p.for_each_mut(f)),
            CellParams::BiLstm { forward, backward } => forward
                .iter_mut()
                .chain(backward.iter_mut())
                .for_each(|p| p.for_each_mut(f)),
            CellParams::Conv1d(p) => p.layers.iter_mut().for_each(|l| l.for_each_mut(f)),
            CellParams::MoNet(p) => p.for_each_mut(f),
        }
    }
}

fn stack<P>(layers: usize, d_x: usize, d_s: usize, mut init: impl FnMut(usize, usize) -> P) -> Vec<P> {
    (0..layers)
        .map(|l| init(if l == 0 { d_x } else { d_s }, d_s))
        .collect()
}

impl CellParams {
    pub fn init<R: Rng + ?Sized>(config: &CellConfig, rng: &mut R) -> Self {
        let (l, d_x, d_s) = (config.layers, config.d_x, config.d_s);
        match config.family {
            Family::VanillaRnn => CellParams::VanillaRnn(stack(l, d_x, d_s, |i, o| RnnParams::init(rng, i, o))),
            Family::Gru => CellParams::Gru(stack(l, d_x, d_s, |i, o| GruParams::init(rng, i, o))),
            Family::Lstm => CellParams::Lstm(stack(l, d_x, d_s, |i, o| LstmParams::init(rng, i, o))),
            Family::BiGru => {
                let forward = stack(l, d_x, d_s, |i, o| GruParams::init(rng, i, o));
                let backward = stack(l, d_x, d_s, |i, o| GruParams::init(rng, i, o));
                CellParams::BiGru { forward, backward }
            }
            Family::BiLstm => {
                let forward = stack(l, d_x, d_s, |i, o| LstmParams::init(rng, i, o));
                let backward = stack(l, d_x, d_s, |i, o| LstmParams::init(rng, i, o));
                CellParams::BiLstm { forward, backward }
            }
            Family::Conv1d => CellParams::Conv1d(Conv1dParams {
                layers: stack(l, d_x, d_s, |i, o| ConvLayer::init(rng, i, o, config.kernel)),
            }),
            Family::Monet => CellParams::MoNet(MoNetParams::init(rng, d_x, d_s)),
        }
    }
}

/// A hallucination model: one cell family plus an optional linear readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: CellConfig,
    cell: CellParams,
    readout: Option<LinearParams>,
}

impl Model {
    pub fn init(config: &CellConfig, seed: u64) -> Result<Self, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(config, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(config: &CellConfig, rng: &mut R) -> Result<Self, ConfigError> {
        config.validate()?;
        let cell = CellParams::init(config, rng);
        let readout = config.d_out.map(|d| LinearParams::init(rng, config.d_s, d));
        Ok(Self {
            config: config.clone(),
            cell,
            readout,
        })
    }

    /// A model of the right shapes with every weight zero.
    pub fn zeros(config: &CellConfig) -> Result<Self, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::init_with_rng(config, &mut rng)?;
        for t in model.parameters_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(model)
    }

    /// Rebuilds a model from tensors listed in [`Model::parameters`] order.
    pub fn from_parameters(config: &CellConfig, tensors: Vec<Tensor>) -> Result<Self, TensorError> {
        let mut model = Self::zeros(config).map_err(|e| TensorError::Contract(e.to_string()))?;
        let slots = model.parameters_mut();
        if slots.len() != tensors.len() {
            return Err(TensorError::Contract(format!(
                "{} family with {} layer(s) has {} parameter tensors, got {}",
                config.family,
                config.layers,
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "from_parameters",
                    lhs: slot.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn cell(&self) -> &CellParams {
        &self.cell
    }

    pub fn cell_mut(&mut self) -> &mut CellParams {
        &mut self.cell
    }

    pub fn readout(&self) -> Option<&LinearParams> {
        self.readout.as_ref()
    }

    /// Every learnable tensor in a fixed order (cell first, then readout).
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.cell.for_each(&mut |t| out.push(t));
        if let Some(r) = &self.readout {
            r.for_each(&mut |t| out.push(t));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.cell.for_each_mut(&mut |t| out.push(t));
        if let Some(r) = &mut self.readout {
            r.for_each_mut(&mut |t| out.push(t));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        self.bind_with(tape, true)
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundModel {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut record = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t.clone())
            }
        };
        let cell = self.cell.map(&mut record);
        let readout = self.readout.as_ref().map(|r| r.map(&mut record));
        BoundModel {
            config: self.config.clone(),
            cell,
            readout,
        }
    }

    /// Forward pass without gradient tracking. Each sequence is `[T×D_x]`;
    /// all sequences in one call must share `T`.
    pub fn hallucinate(&self, seqs: &[&Tensor]) -> Result<Vec<Tensor>, TensorError> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let steps = time_major(seqs)?;
        let xs: Vec<Var> = steps.into_iter().map(|s| tape.constant(s)).collect();
        let out = bound.forward(&mut tape, &xs)?;
        batch_major(&tape, &out)
    }
}

/// Parameters recorded on a tape, ready for a forward pass.
pub struct BoundModel {
    config: CellConfig,
    cell: CellParams<Var>,
    readout: Option<LinearParams<Var>>,
}

impl BoundModel {
    pub fn cell(&self) -> &CellParams<Var> {
        &self.cell
    }

    /// Parameter vars in the same order as [`Model::parameters`].
    pub fn params(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.cell.for_each(&mut |&v| out.push(v));
        if let Some(r) = &self.readout {
            r.for_each(&mut |&v| out.push(v));
        }
        out
    }

    /// Maps a sequence of `[B×D_x]` steps to `[B×D_out]` steps.
    pub fn forward(&self, tape: &mut Tape, xs: &[Var]) -> Result<Vec<Var>, TensorError> {
        for &x in xs {
            let shape = tape.value(x).shape();
            if shape.len() != 2 || shape[1] != self.config.d_x {
                return Err(TensorError::ShapeMismatch {
                    op: "model input",
                    lhs: vec![shape.first().copied().unwrap_or(0), self.config.d_x],
                    rhs: shape.to_vec(),
                });
            }
        }
        let states = match &self.cell {
            CellParams::VanillaRnn(layers) => run_stack(tape, layers, xs, false)?,
            CellParams::Gru(layers) => run_stack(tape, layers, xs, false)?,
            CellParams::Lstm(layers) => run_stack(tape, layers, xs, false)?,
            CellParams::BiGru { forward, backward } => bidirectional_forward(tape, xs, forward, backward)?,
            CellParams::BiLstm { forward, backward } => bidirectional_forward(tape, xs, forward, backward)?,
            CellParams::Conv1d(p) => conv1d_forward(tape, xs, p)?,
            CellParams::MoNet(p) => monet_forward(tape, xs, p, self.config.layers, self.config.causal_only)?,
        };
        match &self.readout {
            None => Ok(states),
            Some(r) => states.into_iter().map(|s| affine(tape, s, r.w, r.b)).collect(),
        }
    }
}

/// Re-slices `B` sequences of shape `[T×D]` into `T` tensors of shape `[B×D]`.
pub fn time_major(seqs: &[&Tensor]) -> Result<Vec<Tensor>, TensorError> {
    let Some(first) = seqs.first() else {
        return Ok(Vec::new());
    };
    let (t_len, d) = match first.shape() {
        &[t, d] => (t, d),
        other => {
            return Err(TensorError::Rank {
                op: "time_major",
                expected: 2,
                shape: other.to_vec(),
            })
        }
    };
    for s in seqs {
        if s.shape() != first.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "time_major",
                lhs: first.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
    }
    let b = seqs.len();
    Ok((0..t_len)
        .map(|t| {
            let mut data = Vec::with_capacity(b * d);
            for s in seqs {
                data.extend_from_slice(s.row(t));
            }
            Tensor::new([b, d], data).expect("step shape")
        })
        .collect())
}

/// Inverse of [`time_major`] for values recorded on a tape.
pub fn batch_major(tape: &Tape, steps: &[Var]) -> Result<Vec<Tensor>, TensorError> {
    let Some(&first) = steps.first() else {
        return Ok(Vec::new());
    };
    let (b, d) = match tape.value(first).shape() {
        &[b, d] => (b, d),
        other => {
            return Err(TensorError::Rank {
                op: "batch_major",
                expected: 2,
                shape: other.to_vec(),
            })
        }
    };
    let t_len = steps.len();
    let mut out = vec![Vec::with_capacity(t_len * d); b];
    for &s in steps {
        let v = tape.value(s);
        for (i, seq) in out.iter_mut().enumerate() {
            seq.extend_from_slice(v.row(i));
        }
    }
    out.into_iter().map(|data| Tensor::new([t_len, d], data)).collect()
}

/// Exact learnable scalar count of a configuration.
pub fn count_params(config: &CellConfig) -> usize {
    let (d_x, d_s, l) = (config.d_x, config.d_s, config.layers);
    let per_layer = |gates: usize, d_in: usize| gates * (d_s * d_in + d_s * d_s + d_s);
    let stacked = |gates: usize| -> usize {
        (0..l).map(|i| per_layer(gates, if i == 0 { d_x } else { d_s })).sum()
    };
    let cell = match config.family {
        Family::VanillaRnn => stacked(1),
        Family::Gru => stacked(3),
        Family::Lstm => stacked(4),
        Family::BiGru => 2 * stacked(3),
        Family::BiLstm => 2 * stacked(4),
        Family::Conv1d => (0..l)
            .map(|i| config.kernel * d_s * if i == 0 { d_x } else { d_s } + d_s)
            .sum(),
        Family::Monet => 3 * d_s * d_x + 4 * d_s * d_s + d_s * 2 * d_s + 3 * d_s,
    };
    let readout = config.d_out.map_or(0, |d| d * d_s + d);
    cell + readout
}

/// Result of searching a state size for a parameter-matched baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatch {
    pub config: CellConfig,
    pub count: usize,
    pub target: usize,
    pub relative_gap: f64,
    /// False when no state size lands within 5% of the target; `config` is
    /// then the closest one found.
    pub within_tolerance: bool,
}

pub const MATCH_TOLERANCE: f64 = 0.05;

/// Picks the `d_s` for `candidate` whose parameter count is closest to
/// `target`'s. The candidate gets a readout to `target`'s output width so
/// both emit the same feature dimension.
pub fn match_params(target: &CellConfig, candidate: &CellConfig) -> Result<ParamMatch, ConfigError> {
    target.validate()?;
    let goal = count_params(target);
    let mut template = candidate.clone();
    template.d_x = target.d_x;
    template.d_out = Some(target.output_dim());
    let mut best: Option<(usize, usize)> = None;
    for d_s in 1.. {
        let mut cfg = template.clone();
        cfg.d_s = d_s;
        cfg.validate()?;
        let count = count_params(&cfg);
        let better = best.is_none_or(|(_, c)| count.abs_diff(goal) < c.abs_diff(goal));
        if better {
            best = Some((d_s, count));
        }
        if count > goal {
            break;
        }
    }
    let (d_s, count) = best.expect("at least one candidate");
    template.d_s = d_s;
    let relative_gap = count.abs_diff(goal) as f64 / goal as f64;
    Ok(ParamMatch {
        config: template,
        count,
        target: goal,
        relative_gap,
        within_tolerance: relative_gap <= MATCH_TOLERANCE,
    })
}

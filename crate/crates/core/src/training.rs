//! Hallucination objective, gradient clipping, learning-rate schedule and
//! the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::{time_major, Model};
use crate::classify::{classify, mean_pool, LinearClassifier};
use crate::data::FeatureRecord;
use crate::optim::{Optimizer, OptimizerKind};
use crate::tape::{Tape, Var};
use crate::tensor::{softmax, Tensor, TensorError};

/// Probability vectors may deviate from unit mass by at most this much.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Examples per gradient shard. Shards are reduced in index order, so the
/// result does not depend on how many threads evaluate them.
pub const SHARD_SIZE: usize = 16;

/// Records per chunk when evaluating; fixed so metrics are reproducible.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the classification-agreement term.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 10.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(TrainError::Config {
                field: "alpha",
                reason: format!("must be finite and non-negative, got {}", self.alpha),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            decay_factor: 0.1,
            decay_every: 15,
            clip_norm: 1.0,
            max_epochs: 40,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field, reason: String| Err(TrainError::Config { field, reason });
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr", format!("must be finite and non-negative, got {}", self.lr));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return bad("decay_factor", format!("must be positive, got {}", self.decay_factor));
        }
        if self.decay_every == 0 {
            return bad("decay_every", "must be at least 1".into());
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return bad("clip_norm", format!("must be positive, got {}", self.clip_norm));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `lr · decay_factor^⌊epoch / decay_every⌋`.
///
/// When `1/decay_factor` is an integer the decay is applied as a division
/// by its power, which keeps decimal schedules such as `2e-4 → 2e-5 → 2e-6`
/// exact in binary floating point.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = (epoch / cfg.decay_every) as i32;
    let inv = 1.0 / cfg.decay_factor;
    if inv.fract() == 0.0 && inv.powi(k).is_finite() {
        cfg.lr / inv.powi(k)
    } else {
        cfg.lr * cfg.decay_factor.powi(k)
    }
}

/// Global L2 norm over every buffer.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales all buffers by `max_norm / g` when their global norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}

/// Rows holding a NaN or infinity are let through: they can only produce a
/// non-finite loss, which the caller reports with more context.
fn check_probs(p: &Tensor, what: &str) -> Result<(), TensorError> {
    let c = *p.shape().last().unwrap_or(&0);
    if c == 0 {
        return Err(TensorError::Contract(format!("{what}: no classes")));
    }
    for (i, row) in p.data().chunks(c).enumerate().filter(|(_, r)| r.iter().all(|v| v.is_finite())) {
        let total: f64 = row.iter().sum();
        if row.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(TensorError::Contract(format!(
                "{what}: row {i} is not a probability vector (sum {total})"
            )));
        }
    }
    Ok(())
}

/// Value of the hallucination objective
///
/// ```text
/// 1/(N·D·T) Σ ‖s_t − ŝ_t‖²  +  α · 1/(N·C) Σ |p(S) − p(Ŝ)|
/// ```
///
/// `s` and `s_hat` are `[T×D]` (one example) or `[N×T×D]`; `p_s` and
/// `p_s_hat` are `[C]` or `[N×C]`.
pub fn hallucination_loss(
    s: &Tensor,
    s_hat: &Tensor,
    p_s: &Tensor,
    p_s_hat: &Tensor,
    cfg: &LossConfig,
) -> Result<f64, TensorError> {
    if s.shape() != s_hat.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "hallucination_loss features",
            lhs: s.shape().to_vec(),
            rhs: s_hat.shape().to_vec(),
        });
    }
    if p_s.shape() != p_s_hat.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "hallucination_loss probabilities",
            lhs: p_s.shape().to_vec(),
            rhs: p_s_hat.shape().to_vec(),
        });
    }
    let n_feat = match s.rank() {
        2 => 1,
        3 => s.shape()[0],
        _ => {
            return Err(TensorError::Rank {
                op: "hallucination_loss",
                expected: 3,
                shape: s.shape().to_vec(),
            })
        }
    };
    let n_prob = match p_s.rank() {
        1 => 1,
        2 => p_s.shape()[0],
        _ => {
            return Err(TensorError::Rank {
                op: "hallucination_loss",
                expected: 2,
                shape: p_s.shape().to_vec(),
            })
        }
    };
    if n_feat != n_prob || s.is_empty() || p_s.is_empty() {
        return Err(TensorError::Contract(format!(
            "hallucination_loss: {n_feat} feature sequences but {n_prob} probability rows"
        )));
    }
    check_probs(p_s, "p(S)")?;
    check_probs(p_s_hat, "p(Ŝ)")?;
    let sq: f64 = s.data().iter().zip(s_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let l1: f64 = p_s.data().iter().zip(p_s_hat.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sq / s.len() as f64 + cfg.alpha * l1 / p_s.len() as f64)
}

/// The same objective recorded on a tape. `s` and `s_hat` are time-major
/// steps of shape `[N×D]`; `p_s` and `p_s_hat` are `[N×C]`.
pub fn hallucination_loss_on_tape(
    tape: &mut Tape,
    s: &[Var],
    s_hat: &[Var],
    p_s: Var,
    p_s_hat: Var,
    cfg: &LossConfig,
) -> Result<Var, TensorError> {
    if s.len() != s_hat.len() || s.is_empty() {
        return Err(TensorError::Contract(format!(
            "hallucination_loss: {} predicted steps but {} target steps",
            s.len(),
            s_hat.len()
        )));
    }
    check_probs(tape.value(p_s), "p(S)")?;
    check_probs(tape.value(p_s_hat), "p(Ŝ)")?;
    let mut sq_terms = Vec::with_capacity(s.len());
    for (&a, &b) in s.iter().zip(s_hat) {
        let diff = tape.sub(a, b)?;
        let sq = tape.mul(diff, diff)?;
        sq_terms.push(tape.sum(sq));
    }
    let per_step = tape.value(s[0]).len();
    let sq_total = tape.add_n(&sq_terms)?;
    let mse = tape.scale(sq_total, 1.0 / (per_step * s.len()) as f64);
    let gap = tape.sub(p_s, p_s_hat)?;
    let gap = tape.abs(gap);
    let l1 = tape.sum(gap);
    let n_probs = tape.value(p_s).len() as f64;
    let l1 = tape.scale(l1, cfg.alpha / n_probs);
    tape.add(mse, l1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean squared error per coordinate against the target flow.
    pub mse: f64,
    /// Flow-classifier top-1 on the hallucinated sequences.
    pub top1: f64,
}

/// Hallucinates every record in fixed-size chunks and scores it against
/// its target and with the flow classifier.
pub fn evaluate(model: &Model, flow_clf: &LinearClassifier, records: &[FeatureRecord]) -> Result<EvalMetrics, TensorError> {
    let outputs = hallucinate_all(model, records)?;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut hits = 0usize;
    for (out, r) in outputs.iter().zip(records) {
        sq += out.data().iter().zip(r.flow_target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += out.len();
        if classify(out, flow_clf)?.top1 == r.label {
            hits += 1;
        }
    }
    if records.is_empty() {
        return Err(TensorError::Contract("evaluate on an empty set".into()));
    }
    Ok(EvalMetrics {
        mse: sq / count as f64,
        top1: hits as f64 / records.len() as f64,
    })
}

/// Model outputs for every record, chunked by [`EVAL_CHUNK`].
pub fn hallucinate_all(model: &Model, records: &[FeatureRecord]) -> Result<Vec<Tensor>, TensorError> {
    let chunks: Vec<&[FeatureRecord]> = records.chunks(EVAL_CHUNK).collect();
    let outs: Vec<Result<Vec<Tensor>, TensorError>> = chunks
        .par_iter()
        .map(|chunk| {
            let seqs: Vec<&Tensor> = chunk.iter().map(|r| &r.appearance).collect();
            model.hallucinate(&seqs)
        })
        .collect();
    let mut all = Vec::with_capacity(records.len());
    for o in outs {
        all.extend(o?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub num_params: usize,
    pub initial_val_mse: f64,
    pub initial_val_top1: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the retained checkpoint; `None` when no epoch improved on
    /// the initialization.
    pub best_epoch: Option<usize>,
    pub final_val_mse: f64,
    pub final_val_top1: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters with the best validation MSE seen.
    pub model: Model,
}

fn check_records(model: &Model, teacher: &LinearClassifier, records: &[FeatureRecord], what: &str) -> Result<(), TrainError> {
    let cfg = model.config();
    let t_len = records.first().map(|r| r.seq_len());
    for r in records {
        let a = r.appearance.shape();
        let f = r.flow_target.shape();
        if a.len() != 2 || f.len() != 2 || Some(a[0]) != t_len || f[0] != a[0] {
            return Err(TrainError::Data(format!("{what} record {}: sequences must share one length", r.id)));
        }
        if a[1] != cfg.d_x || f[1] != cfg.output_dim() {
            return Err(TrainError::Data(format!(
                "{what} record {}: widths {}/{} do not match model D_x={} output={}",
                r.id,
                a[1],
                f[1],
                cfg.d_x,
                cfg.output_dim()
            )));
        }
        if r.label >= teacher.num_classes() {
            return Err(TrainError::Data(format!("{what} record {}: label {} has no class", r.id, r.label)));
        }
    }
    Ok(())
}

type ShardResult = Result<(f64, Vec<Vec<f64>>), TensorError>;

/// Loss (already weighted by its share of the batch) and gradients of one
/// shard.
fn shard_grads(
    model: &Model,
    teacher: &LinearClassifier,
    shard: &[&FeatureRecord],
    teacher_probs: &[&Vec<f64>],
    weight: f64,
    loss_cfg: &LossConfig,
) -> ShardResult {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let app: Vec<&Tensor> = shard.iter().map(|r| &r.appearance).collect();
    let flow: Vec<&Tensor> = shard.iter().map(|r| &r.flow_target).collect();
    let xs: Vec<Var> = time_major(&app)?.into_iter().map(|t| tape.constant(t)).collect();
    let targets: Vec<Var> = time_major(&flow)?.into_iter().map(|t| tape.constant(t)).collect();
    let out = bound.forward(&mut tape, &xs)?;
    let w = tape.constant(teacher.w.clone());
    let b = tape.constant(teacher.b.clone());
    let p_s = LinearClassifier::probs_on_tape(&mut tape, &out, w, b)?;
    let c = teacher.num_classes();
    let p_hat_data = teacher_probs.iter().flat_map(|p| p.iter().copied()).collect();
    let p_hat = tape.constant(Tensor::new([shard.len(), c], p_hat_data)?);
    let loss = hallucination_loss_on_tape(&mut tape, &out, &targets, p_s, p_hat, loss_cfg)?;
    let loss = tape.scale(loss, weight);
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    let grads = bound
        .params()
        .into_iter()
        .map(|v| tape.grad_data(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec))
        .collect();
    Ok((value, grads))
}

/// Trains `model` on `train`, selecting by validation MSE on `val`.
///
/// `teacher` is the frozen flow classifier: it scores both the target flow
/// `p(Ŝ)` and the hallucinated flow `p(S)`.
pub fn train(
    model: Model,
    train: &[FeatureRecord],
    val: &[FeatureRecord],
    teacher: &LinearClassifier,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Data("training and validation sets must be non-empty".into()));
    }
    if teacher.dim() != model.config().output_dim() {
        return Err(TrainError::Data(format!(
            "flow classifier expects width {}, model emits {}",
            teacher.dim(),
            model.config().output_dim()
        )));
    }
    check_records(&model, teacher, train, "train")?;
    check_records(&model, teacher, val, "val")?;

    let teacher_probs: Vec<Vec<f64>> = train
        .iter()
        .map(|r| Ok(softmax(&teacher.logits_pooled(&mean_pool(&r.flow_target)?)?)))
        .collect::<Result<_, TensorError>>()?;

    let initial = evaluate(&model, teacher, val)?;
    let mut report = TrainReport {
        num_params: model.num_params(),
        initial_val_mse: initial.mse,
        initial_val_top1: initial.top1,
        epochs: Vec::new(),
        best_epoch: None,
        final_val_mse: initial.mse,
        final_val_top1: initial.top1,
        stopped_early: false,
    };
    let mut best = model.clone();
    let mut model = model;
    let mut opt = Optimizer::for_params(cfg.optimizer, &model.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let recs: Vec<&FeatureRecord> = batch.iter().map(|&i| &train[i]).collect();
            let probs: Vec<&Vec<f64>> = batch.iter().map(|&i| &teacher_probs[i]).collect();
            let shards: Vec<(Vec<&FeatureRecord>, Vec<&Vec<f64>>)> = recs
                .chunks(SHARD_SIZE)
                .zip(probs.chunks(SHARD_SIZE))
                .map(|(r, p)| (r.to_vec(), p.to_vec()))
                .collect();
            let n = batch.len() as f64;
            let results: Vec<ShardResult> = shards
                .par_iter()
                .map(|(r, p)| shard_grads(&model, teacher, r, p, r.len() as f64 / n, loss_cfg))
                .collect();
            let mut batch_loss = 0.0;
            let mut grads: Option<Vec<Vec<f64>>> = None;
            for res in results {
                let (l, g) = res?;
                batch_loss += l;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().flatten().zip(g.iter().flatten()).for_each(|(a, b)| *a += b),
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss: batch_loss,
                });
            }
            let mut grads = grads.expect("batch has at least one shard");
            clip_global_norm(&mut grads, cfg.clip_norm);
            let mut params: Vec<&mut [f64]> = model.parameters_mut().into_iter().map(|t| t.data_mut()).collect();
            opt.step(&mut params, &grads, lr);
            loss_sum += batch_loss * n;
        }
        let metrics = evaluate(&model, teacher, val)?;
        report.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_mse: metrics.mse,
            val_top1: metrics.top1,
        });
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train_loss {:.6} val_mse {:.6} val_top1 {:.4}",
            loss_sum / train.len() as f64,
            metrics.mse,
            metrics.top1
        );
        if metrics.mse < report.final_val_mse {
            report.final_val_mse = metrics.mse;
            report.final_val_top1 = metrics.top1;
            report.best_epoch = Some(epoch);
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = epoch + 1 < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome { report, model: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellConfig, Family};
    use crate::classify::{fit_classifier, FitConfig};
    use crate::data::{generate_synthetic, SyntheticTaskSpec};

    fn probs(v: &[f64]) -> Tensor {
        Tensor::vector(v)
    }

    #[test]
    fn identical_inputs_give_zero() {
        let s = Tensor::matrix(&[&[0.1, 0.2], &[0.3, -0.4]]);
        let p = probs(&[0.2, 0.8]);
        assert_eq!(hallucination_loss(&s, &s, &p, &p, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn alpha_zero_is_quadratic() {
        let a = Tensor::matrix(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let b = Tensor::matrix(&[&[0.5, -0.25], &[1.0, 0.0]]);
        let b2 = b.map(|v| 2.0 * v);
        let cfg = LossConfig { alpha: 0.0 };
        let p = probs(&[0.3, 0.7]);
        let q = probs(&[0.6, 0.4]);
        let one = hallucination_loss(&a, &b, &p, &q, &cfg).unwrap();
        let two = hallucination_loss(&a, &b2, &p, &q, &cfg).unwrap();
        assert_eq!(one, (0.25 + 0.0625 + 1.0) / 4.0);
        assert_eq!(two, 4.0 * one);
    }

    #[test]
    fn unnormalised_probs_rejected() {
        let s = Tensor::zeros([1, 1]);
        let err = hallucination_loss(&s, &s, &probs(&[0.5, 0.6]), &probs(&[0.5, 0.5]), &LossConfig::default());
        assert!(matches!(err, Err(TensorError::Contract(_))));
        let err = hallucination_loss(&s, &Tensor::zeros([1, 2]), &probs(&[1.0]), &probs(&[1.0]), &LossConfig::default());
        assert!(matches!(err, Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn tape_loss_matches_value() {
        let s = Tensor::new([2, 3, 2], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let s_hat = Tensor::new([2, 3, 2], (0..12).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let p = Tensor::new([2, 2], vec![0.1, 0.9, 0.35, 0.65]).unwrap();
        let q = Tensor::new([2, 2], vec![0.5, 0.5, 0.8, 0.2]).unwrap();
        let cfg = LossConfig { alpha: 10.0 };
        let want = hallucination_loss(&s, &s_hat, &p, &q, &cfg).unwrap();

        let split = |t: &Tensor| {
            let a = Tensor::new([3, 2], t.data()[..6].to_vec()).unwrap();
            let b = Tensor::new([3, 2], t.data()[6..].to_vec()).unwrap();
            time_major(&[&a, &b]).unwrap()
        };
        let mut tape = Tape::new();
        let sv: Vec<Var> = split(&s).into_iter().map(|t| tape.constant(t)).collect();
        let hv: Vec<Var> = split(&s_hat).into_iter().map(|t| tape.constant(t)).collect();
        let pv = tape.constant(p);
        let qv = tape.constant(q);
        let loss = hallucination_loss_on_tape(&mut tape, &sv, &hv, pv, qv, &cfg).unwrap();
        assert!((tape.value(loss).item() - want).abs() < 1e-12);
    }

    #[test]
    fn clipping_cases() {
        let mut g = vec![vec![0.3], vec![0.4]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 0.5);
        assert_eq!(g, vec![vec![0.3], vec![0.4]]);
        let mut g = vec![vec![3.0, 4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[0][1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 2e-4);
        assert_eq!(lr_at(14, &cfg), 2e-4);
        assert_eq!(lr_at(15, &cfg), 2e-5);
        assert_eq!(lr_at(30, &cfg), 2e-6);
        assert_eq!(lr_at(44, &cfg), 2e-6);
        assert!((lr_at(45, &cfg) - 2e-7).abs() <= 2e-7 * 1e-15);
        let odd = TrainConfig { decay_factor: 0.3, ..cfg };
        assert_eq!(lr_at(15, &odd), 2e-4 * 0.3);
    }

    #[test]
    fn strict_config_json() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"lr": 0.001, "optimizer": "sgd"}"#).unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Sgd);
        assert_eq!(cfg.batch_size, 32);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.1}"#).is_err());
        assert!(TrainConfig { clip_norm: 0.0, ..cfg }.validate().is_err());
    }

    fn tiny_setup() -> (Model, Vec<FeatureRecord>, Vec<FeatureRecord>, LinearClassifier) {
        let spec = SyntheticTaskSpec {
            num_classes: 3,
            seq_len: 6,
            d_x: 4,
            d_s: 3,
            n_train: 48,
            n_val: 12,
            seed: 2,
            ..Default::default()
        };
        let task = generate_synthetic(&spec).unwrap();
        let flows: Vec<&Tensor> = task.train.iter().map(|r| &r.flow_target).collect();
        let labels: Vec<usize> = task.train.iter().map(|r| r.label).collect();
        let teacher = fit_classifier(&flows, &labels, 3, &FitConfig::default()).unwrap();
        let model = Model::init(&CellConfig::new(Family::Monet, 4, 3).with_layers(2), 1).unwrap();
        (model, task.train, task.val, teacher)
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (model, tr, va, teacher) = tiny_setup();
        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 3,
            patience: 10,
            ..Default::default()
        };
        let out = train(model.clone(), &tr, &va, &teacher, &cfg, &LossConfig::default()).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.report.epochs.len(), 3);
        assert_eq!(out.report.best_epoch, None);
    }

    #[test]
    fn same_seed_same_report() {
        let (model, tr, va, teacher) = tiny_setup();
        let cfg = TrainConfig {
            lr: 5e-3,
            max_epochs: 3,
            batch_size: 20,
            ..Default::default()
        };
        let a = train(model.clone(), &tr, &va, &teacher, &cfg, &LossConfig::default()).unwrap();
        let b = train(model, &tr, &va, &teacher, &cfg, &LossConfig::default()).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.model, b.model);
        assert!(a.report.final_val_mse < a.report.initial_val_mse);
    }

    #[test]
    fn nan_loss_names_batch() {
        let (model, mut tr, va, teacher) = tiny_setup();
        tr[40].flow_target.data_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            max_epochs: 1,
            batch_size: 16,
            ..Default::default()
        };
        match train(model, &tr, &va, &teacher, &cfg, &LossConfig::default()) {
            Err(TrainError::NonFiniteLoss { epoch: 0, batch, .. }) => assert!(batch < 3),
            other => panic!("expected a non-finite loss error, got {:?}", other.map(|o| o.report)),
        }
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let (model, tr, va, teacher) = tiny_setup();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let out = train(model.clone(), &tr, &va, &teacher, &cfg, &LossConfig::default()).unwrap();
        assert_eq!(out.model, model);
        assert!(out.report.epochs.is_empty());
        assert_eq!(out.report.final_val_mse, out.report.initial_val_mse);
    }
}

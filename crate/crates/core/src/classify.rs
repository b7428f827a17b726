//! Mean-pooled linear classifiers, two-stream ensembling and accuracy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::optim::{Optimizer, OptimizerKind};
use crate::tape::{Tape, Var};
use crate::tensor::{softmax, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Tolerance on `Σ probs = 1` accepted by [`Prediction::new`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// `softmax(W · meanpool(seq) + b)` with `W: C×D`, `b: C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearClassifier {
    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        let (c, _) = match w.shape() {
            &[c, d] => (c, d),
            other => {
                return Err(TensorError::Rank {
                    op: "LinearClassifier",
                    expected: 2,
                    shape: other.to_vec(),
                })
            }
        };
        if b.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "LinearClassifier bias",
                lhs: vec![c],
                rhs: b.shape().to_vec(),
            });
        }
        Ok(Self { w, b })
    }

    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            w: Tensor::zeros([num_classes, dim]),
            b: Tensor::zeros([num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn logits_pooled(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        if pooled.len() != self.dim() {
            return Err(TensorError::ShapeMismatch {
                op: "classify",
                lhs: vec![self.dim()],
                rhs: vec![pooled.len()],
            });
        }
        Ok((0..self.num_classes())
            .map(|c| {
                self.w.row(c).iter().zip(pooled).map(|(w, x)| w * x).sum::<f64>() + self.b.data()[c]
            })
            .collect())
    }

    /// Records `softmax(W · mean_t(steps) + b)` on a tape. `steps` are the
    /// time-major `[B×D]` tensors of a batch, `w` and `b` the classifier
    /// weights already on the tape. Returns `[B×C]` probabilities.
    pub fn probs_on_tape(tape: &mut Tape, steps: &[Var], w: Var, b: Var) -> Result<Var> {
        if steps.is_empty() {
            return Err(TensorError::Contract("classify: sequence has no time steps".into()));
        }
        let total = tape.add_n(steps)?;
        let pooled = tape.scale(total, 1.0 / steps.len() as f64);
        let logits = tape.matmul_nt(pooled, w)?;
        let logits = tape.add_bias(logits, b)?;
        tape.softmax_rows(logits)
    }
}

/// Mean over the rows of a `[T×D]` sequence.
pub fn mean_pool(seq: &Tensor) -> Result<Vec<f64>> {
    let (t_len, d) = match seq.shape() {
        &[t, d] => (t, d),
        other => {
            return Err(TensorError::Rank {
                op: "mean_pool",
                expected: 2,
                shape: other.to_vec(),
            })
        }
    };
    if t_len == 0 {
        return Err(TensorError::Contract("classify: sequence has no time steps".into()));
    }
    let mut out = vec![0.0; d];
    for row in seq.data().chunks(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / t_len as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub top1: usize,
}

impl Prediction {
    /// Validates a probability vector and takes its argmax (first index on
    /// ties).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(TensorError::Contract("prediction over zero classes".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(TensorError::Contract(format!(
                "probabilities must be in [0,1] and sum to 1, got sum {total}"
            )));
        }
        let top1 = argmax(&probs);
        Ok(Self { probs, top1 })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(seq: &Tensor, clf: &LinearClassifier) -> Result<Prediction> {
    let pooled = mean_pool(seq)?;
    Prediction::new(softmax(&clf.logits_pooled(&pooled)?))
}

/// Equal-weight mean of two probability vectors, re-argmaxed.
pub fn ensemble(p_app: &Prediction, p_flow: &Prediction) -> Result<Prediction> {
    if p_app.num_classes() != p_flow.num_classes() {
        return Err(TensorError::ShapeMismatch {
            op: "ensemble",
            lhs: vec![p_app.num_classes()],
            rhs: vec![p_flow.num_classes()],
        });
    }
    // (a + b) / 2 rounds identically for either argument order.
    let probs = p_app.probs.iter().zip(&p_flow.probs).map(|(a, b)| (a + b) * 0.5).collect();
    Prediction::new(probs)
}

pub fn top1_accuracy(preds: &[Prediction], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(TensorError::Contract("top1_accuracy of an empty set".into()));
    }
    if preds.len() != labels.len() {
        return Err(TensorError::Contract(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, &l)| p.top1 == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Settings for [`fit_classifier`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.05,
            weight_decay: 1e-3,
        }
    }
}

/// Full-batch Adam on mean softmax cross-entropy over mean-pooled features,
/// starting from zero weights. Deterministic for fixed inputs.
pub fn fit_classifier(
    seqs: &[&Tensor],
    labels: &[usize],
    num_classes: usize,
    cfg: &FitConfig,
) -> Result<LinearClassifier> {
    if seqs.is_empty() || seqs.len() != labels.len() {
        return Err(TensorError::Contract(format!(
            "fit_classifier needs matching non-empty inputs, got {} sequences and {} labels",
            seqs.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(TensorError::Contract(format!("label {bad} outside [0, {num_classes})")));
    }
    let pooled: Vec<Vec<f64>> = seqs.iter().map(|s| mean_pool(s)).collect::<Result<_>>()?;
    let d = pooled[0].len();
    if pooled.iter().any(|p| p.len() != d) {
        return Err(TensorError::Contract("fit_classifier: feature dims differ".into()));
    }
    let n = pooled.len() as f64;
    let mut clf = LinearClassifier::zeros(num_classes, d);
    let mut opt = Optimizer::new(OptimizerKind::Adam, &[num_classes * d, num_classes]);
    for _ in 0..cfg.steps {
        let mut gw = vec![0.0; num_classes * d];
        let mut gb = vec![0.0; num_classes];
        for (x, &y) in pooled.iter().zip(labels) {
            let p = softmax(&clf.logits_pooled(x)?);
            for c in 0..num_classes {
                let g = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
                gb[c] += g;
                for (gwi, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *gwi += g * xi;
                }
            }
        }
        for (g, w) in gw.iter_mut().zip(clf.w.data()) {
            *g += cfg.weight_decay * w;
        }
        let LinearClassifier { w, b } = &mut clf;
        opt.step(&mut [w.data_mut(), b.data_mut()], &[gw, gb], cfg.lr);
    }
    Ok(clf)
}

/// One row of a predictions export.
#[derive(Debug, Clone)]
pub struct PredictionRow<'a> {
    pub example_id: &'a str,
    pub label: usize,
    pub prediction: &'a Prediction,
}

/// Writes `example_id,label,top1,p0,…,p{C-1}`.
pub fn write_predictions_csv<W: Write>(out: W, rows: &[PredictionRow<'_>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let c = rows.first().map_or(0, |r| r.prediction.num_classes());
    let mut header = vec!["example_id".to_string(), "label".into(), "top1".into()];
    header.extend((0..c).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.example_id.to_string(), r.label.to_string(), r.prediction.top1.to_string()];
        rec.extend(r.prediction.probs.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}

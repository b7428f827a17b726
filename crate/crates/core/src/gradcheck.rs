//! Central finite differences and model-level gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cells::{time_major, CellConfig, Family, Model};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; central differences at `h = 1e-6` carry roughly
/// `1e-10` of cancellation noise.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Pass threshold of the gradient suite.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `x`.
pub fn finite_diff_grad<F: FnMut(&Tensor) -> f64>(mut f: F, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub family: Family,
    pub layers: usize,
    pub trials: usize,
    pub coordinates: usize,
    pub max_relative_error: f64,
    /// Which tensor produced the worst error, e.g. `param 3` or `input`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GRADCHECK_TOLERANCE
    }
}

/// A fixed random linear functional of the model output, so every output
/// coordinate contributes to the scalar being differentiated.
struct Probe {
    inputs: Vec<Tensor>,
    weights: Vec<Tensor>,
}

impl Probe {
    fn loss(&self, model: &Model, inputs: &[Tensor], fault: Option<f64>) -> Result<(Tape, Var, Vec<Var>, Vec<Var>), TensorError> {
        let mut tape = Tape::new();
        if let Some(f) = fault {
            tape.inject_sigmoid_grad_fault(f);
        }
        let bound = model.bind(&mut tape);
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let xs: Vec<Var> = time_major(&refs)?
            .into_iter()
            .map(|t| tape.leaf(t.with_requires_grad(true)))
            .collect();
        let out = bound.forward(&mut tape, &xs)?;
        let mut terms = Vec::with_capacity(out.len());
        for (o, w) in out.iter().zip(&self.weights) {
            let w = tape.constant(w.clone());
            let prod = tape.mul(*o, w)?;
            terms.push(tape.sum(prod));
        }
        let loss = tape.add_n(&terms)?;
        Ok((tape, loss, bound.params(), xs))
    }

    fn value(&self, model: &Model, inputs: &[Tensor]) -> f64 {
        let (tape, loss, _, _) = self.loss(model, inputs, None).expect("probe forward");
        tape.value(loss).item()
    }
}

/// Compares tape gradients against central differences for every parameter
/// and input coordinate of one model on `inputs` (sequences `[T×D_x]`).
/// `fault` injects a scaled sigmoid backward to exercise the check itself.
pub fn check_model(
    model: &Model,
    inputs: &[Tensor],
    probe_seed: u64,
    fault: Option<f64>,
) -> Result<(f64, String, usize), TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let t_len = inputs[0].shape()[0];
    let d_out = model.config().output_dim();
    let weights = (0..t_len)
        .map(|_| {
            let data = (0..inputs.len() * d_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new([inputs.len(), d_out], data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let probe = Probe {
        inputs: inputs.to_vec(),
        weights,
    };

    let (mut tape, loss, params, xs) = probe.loss(model, inputs, fault)?;
    tape.backward(loss)?;

    let mut worst = (0.0, String::from("none"));
    let mut coordinates = 0;
    let mut record = |err: f64, what: String| {
        if err > worst.0 || worst.1 == "none" {
            worst = (err.max(worst.0), what);
        }
    };

    for (k, &pv) in params.iter().enumerate() {
        let analytic = tape.grad(pv).unwrap_or_else(|| Tensor::zeros(tape.value(pv).shape()));
        let base = model.parameters()[k].clone();
        let numeric = finite_diff_grad(
            |t| {
                let mut m = model.clone();
                *m.parameters_mut()[k] = t.clone();
                probe.value(&m, &probe.inputs)
            },
            &base,
            DEFAULT_STEP,
        );
        coordinates += base.len();
        record(max_relative_error(&analytic, &numeric), format!("param {k}"));
    }

    // Input gradients: the tape holds them per time step, [B×D_x] each.
    for (t, &xv) in xs.iter().enumerate() {
        let analytic = tape.grad(xv).unwrap_or_else(|| Tensor::zeros(tape.value(xv).shape()));
        let base = tape.value(xv).clone();
        let numeric = finite_diff_grad(
            |step| {
                let mut seqs = probe.inputs.clone();
                for (b, seq) in seqs.iter_mut().enumerate() {
                    let d = seq.shape()[1];
                    seq.data_mut()[t * d..(t + 1) * d].copy_from_slice(step.row(b));
                }
                probe.value(model, &seqs)
            },
            &base,
            DEFAULT_STEP,
        );
        coordinates += base.len();
        record(max_relative_error(&analytic, &numeric), format!("input step {t}"));
    }
    Ok((worst.0, worst.1, coordinates))
}

/// Shape of the random instances used by [`gradcheck_family`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckShape {
    pub d_x: usize,
    pub d_s: usize,
    pub seq_len: usize,
    pub batch: usize,
}

impl Default for GradCheckShape {
    fn default() -> Self {
        Self {
            d_x: 5,
            d_s: 4,
            seq_len: 6,
            batch: 2,
        }
    }
}

/// Runs `trials` random instances of one family. Every weight and bias is
/// drawn from `[-1, 1]` and every input from `[-2, 2]`.
pub fn gradcheck_family(
    family: Family,
    layers: usize,
    trials: usize,
    seed: u64,
    shape: GradCheckShape,
    fault: Option<f64>,
) -> Result<GradCheckReport, TensorError> {
    let config = CellConfig::new(family, shape.d_x, shape.d_s).with_layers(layers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        family,
        layers,
        trials,
        coordinates: 0,
        max_relative_error: 0.0,
        worst: "none".into(),
    };
    for trial in 0..trials {
        let mut model = Model::init_with_rng(&config, &mut rng)
            .map_err(|e| TensorError::Contract(e.to_string()))?;
        for t in model.parameters_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let inputs = (0..shape.batch)
            .map(|_| {
                let data = (0..shape.seq_len * shape.d_x).map(|_| rng.gen_range(-2.0..2.0)).collect();
                Tensor::new([shape.seq_len, shape.d_x], data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (err, worst, coords) = check_model(&model, &inputs, rng.gen(), fault)?;
        report.coordinates += coords;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = format!("trial {trial}, {worst}");
        }
    }
    Ok(report)
}

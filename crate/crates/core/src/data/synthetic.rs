//! Synthetic two-stream task.
//!
//! Each class owns a linear dynamical system over appearance features and a
//! nonlinear map from a three-step appearance window to flow features:
//!
//! ```text
//! x_t = μ_c + y_t,   y_t = ρ Q_c y_{t-1} + √(1-ρ²) ε_t
//! ŝ_t = tanh(A_c x_{t-1} + B_c x_t + A'_c x_{t+1} + β_c) + σ η_t
//! ```
//!
//! with `x_0 = x_{T+1} = 0`. A causal model never sees `x_{t+1}`, so the
//! `A'_c` term is only partly predictable for it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureRecord};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub num_classes: usize,
    pub seq_len: usize,
    pub d_x: usize,
    pub d_s: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Fixed at 1: targets read `x_{t-1}`, `x_t` and `x_{t+1}`.
    pub context_radius: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Standard deviation of the per-class appearance means.
    pub class_separation: f64,
    /// Temporal correlation `ρ` of the appearance dynamics.
    pub dynamics_rho: f64,
    /// Relative size of the per-class deviation of the flow maps from the
    /// shared ones.
    pub class_mix: f64,
    /// Standard deviation of the per-class flow offset `β_c`.
    pub flow_class_bias: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            seq_len: 20,
            d_x: 16,
            d_s: 16,
            n_train: 2000,
            n_val: 400,
            context_radius: 1,
            noise_sigma: 0.05,
            seed: 0,
            class_separation: 1.0,
            dynamics_rho: 0.5,
            class_mix: 0.25,
            flow_class_bias: 0.25,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field, reason: &str| {
            Err(DataError::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        };
        let positive = [
            ("num_classes", self.num_classes),
            ("seq_len", self.seq_len),
            ("d_x", self.d_x),
            ("d_s", self.d_s),
        ];
        for (field, v) in positive {
            if v == 0 {
                return bad(field, "must be at least 1");
            }
        }
        if self.context_radius != 1 {
            return bad("context_radius", "only radius 1 is supported");
        }
        let non_negative = [
            ("noise_sigma", self.noise_sigma),
            ("class_separation", self.class_separation),
            ("class_mix", self.class_mix),
            ("flow_class_bias", self.flow_class_bias),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be a finite non-negative number");
            }
        }
        if !(self.dynamics_rho.is_finite() && (0.0..1.0).contains(&self.dynamics_rho)) {
            return bad("dynamics_rho", "must lie in [0, 1)");
        }
        let total = self.n_train.checked_add(self.n_val).filter(|&n| n <= u32::MAX as usize);
        if total.is_none() {
            return bad("n_train", "record count does not fit the file format");
        }
        Ok(())
    }
}

/// The generating system of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSystem {
    pub mean: Vec<f64>,
    /// Orthonormal `Q_c`, `D_x×D_x`.
    pub transition: Tensor,
    pub a_prev: Tensor,
    pub a_cur: Tensor,
    pub a_next: Tensor,
    pub bias: Vec<f64>,
}

impl ClassSystem {
    /// Noise-free flow target for an appearance sequence `[T×D_x]`.
    pub fn clean_flow(&self, x: &Tensor) -> Tensor {
        let (t_len, d_x) = (x.shape()[0], x.shape()[1]);
        let d_s = self.bias.len();
        let mut out = Vec::with_capacity(t_len * d_s);
        for t in 0..t_len {
            let mut arg = self.bias.clone();
            let mut add = |m: &Tensor, src: usize| {
                let xs = &x.data()[src * d_x..(src + 1) * d_x];
                for (i, a) in arg.iter_mut().enumerate() {
                    *a += m.row(i).iter().zip(xs).map(|(w, v)| w * v).sum::<f64>();
                }
            };
            if t > 0 {
                add(&self.a_prev, t - 1);
            }
            add(&self.a_cur, t);
            if t + 1 < t_len {
                add(&self.a_next, t + 1);
            }
            out.extend(arg.into_iter().map(f64::tanh));
        }
        Tensor::new([t_len, d_s], out).expect("flow shape")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub systems: Vec<ClassSystem>,
    pub train: Vec<FeatureRecord>,
    pub val: Vec<FeatureRecord>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| std * normal(rng)).collect();
    Tensor::new([rows, cols], data).expect("gaussian shape")
}

/// Gram-Schmidt on a Gaussian matrix; rows come out orthonormal.
fn orthonormal(rng: &mut ChaCha8Rng, d: usize) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for r in &rows {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Tensor::new([d, d], rows.concat()).expect("orthonormal shape")
}

fn draw_systems(spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> Vec<ClassSystem> {
    let (d_x, d_s) = (spec.d_x, spec.d_s);
    // Keeps the tanh argument at roughly unit variance.
    let gain = 1.0 / (3.0 * d_x as f64 * (1.0 + spec.class_separation.powi(2))).sqrt();
    let shared = [
        gaussian(rng, d_s, d_x, gain),
        gaussian(rng, d_s, d_x, gain),
        gaussian(rng, d_s, d_x, gain),
    ];
    (0..spec.num_classes)
        .map(|_| {
            let mean = (0..d_x).map(|_| spec.class_separation * normal(rng)).collect();
            let transition = orthonormal(rng, d_x);
            let [a_prev, a_cur, a_next] = shared.clone().map(|m| {
                let delta = gaussian(rng, d_s, d_x, gain * spec.class_mix);
                Tensor::new([d_s, d_x], m.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect())
                    .expect("same shape")
            });
            let bias = (0..d_s).map(|_| spec.flow_class_bias * normal(rng)).collect();
            ClassSystem {
                mean,
                transition,
                a_prev,
                a_cur,
                a_next,
                bias,
            }
        })
        .collect()
}

fn draw_record(spec: &SyntheticTaskSpec, sys: &ClassSystem, rng: &mut ChaCha8Rng, id: String, label: usize) -> FeatureRecord {
    let (t_len, d_x, d_s) = (spec.seq_len, spec.d_x, spec.d_s);
    let rho = spec.dynamics_rho;
    let innov = (1.0 - rho * rho).sqrt();
    let mut y: Vec<f64> = (0..d_x).map(|_| normal(rng)).collect();
    let mut x = Vec::with_capacity(t_len * d_x);
    for t in 0..t_len {
        if t > 0 {
            let prev = y.clone();
            for (i, yi) in y.iter_mut().enumerate() {
                let qy: f64 = sys.transition.row(i).iter().zip(&prev).map(|(q, v)| q * v).sum();
                *yi = rho * qy + innov * normal(rng);
            }
        }
        x.extend(y.iter().zip(&sys.mean).map(|(v, m)| v + m));
    }
    let appearance = Tensor::new([t_len, d_x], x).expect("appearance shape");
    let mut flow_target = sys.clean_flow(&appearance);
    if spec.noise_sigma > 0.0 {
        for v in flow_target.data_mut() {
            *v += spec.noise_sigma * normal(rng);
        }
    }
    debug_assert_eq!(flow_target.shape(), &[t_len, d_s]);
    FeatureRecord {
        id,
        label,
        appearance,
        flow_target,
    }
}

/// Draws the class systems, then `n_train` and `n_val` records. Labels
/// cycle through the classes (`i mod C`) so every split is balanced.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticTask, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let systems = draw_systems(spec, &mut rng);
    let mut make = |prefix: &str, n: usize| -> Vec<FeatureRecord> {
        (0..n)
            .map(|i| {
                let label = i % spec.num_classes;
                draw_record(spec, &systems[label], &mut rng, format!("{prefix}-{i:05}"), label)
            })
            .collect()
    };
    let train = make("train", spec.n_train);
    let val = make("val", spec.n_val);
    Ok(SyntheticTask {
        spec: spec.clone(),
        systems,
        train,
        val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            num_classes: 3,
            seq_len: 7,
            d_x: 4,
            d_s: 3,
            n_train: 12,
            n_val: 6,
            noise_sigma: 0.0,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        let c = generate_synthetic(&SyntheticTaskSpec { seed: 6, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn shapes_and_labels() {
        let task = generate_synthetic(&small()).unwrap();
        assert_eq!(task.train.len(), 12);
        assert_eq!(task.val.len(), 6);
        for (i, r) in task.train.iter().enumerate() {
            assert_eq!(r.label, i % 3);
            assert_eq!(r.appearance.shape(), &[7, 4]);
            assert_eq!(r.flow_target.shape(), &[7, 3]);
            r.validate().unwrap();
        }
    }

    #[test]
    fn transitions_are_orthonormal() {
        let task = generate_synthetic(&small()).unwrap();
        let q = &task.systems[0].transition;
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = q.row(i).iter().zip(q.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spec_validation_names_field() {
        let err = generate_synthetic(&SyntheticTaskSpec { num_classes: 0, ..small() }).unwrap_err();
        assert!(matches!(err, DataError::InvalidSpec { field: "num_classes", .. }));
        let err = SyntheticTaskSpec { context_radius: 2, ..small() }.validate().unwrap_err();
        assert!(matches!(err, DataError::InvalidSpec { field: "context_radius", .. }));
        let err = SyntheticTaskSpec { noise_sigma: -1.0, ..small() }.validate().unwrap_err();
        assert!(matches!(err, DataError::InvalidSpec { field: "noise_sigma", .. }));
    }

    #[test]
    fn strict_json() {
        let spec: SyntheticTaskSpec = serde_json::from_str(r#"{"num_classes": 4}"#).unwrap();
        assert_eq!(spec.num_classes, 4);
        assert_eq!(spec.seq_len, 20);
        assert!(serde_json::from_str::<SyntheticTaskSpec>(r#"{"classes": 4}"#).is_err());
    }
}

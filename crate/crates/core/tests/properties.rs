use proptest::prelude::*;

use monet::cells::{monet_unit, CellConfig, CellParams, Family, Model};
use monet::classify::{classify, ensemble, top1_accuracy, LinearClassifier, Prediction};
use monet::data::{decode, encode, quantize, split, Dataset, DatasetMeta, FeatureRecord};
use monet::training::{clip_global_norm, global_norm, hallucination_loss, LossConfig};
use monet::{Tape, Tensor};

fn values(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

fn tensor(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    values(rows * cols, lo, hi).prop_map(move |v| Tensor::new([rows, cols], v).unwrap())
}

fn probs(c: usize) -> impl Strategy<Value = Vec<f64>> {
    values(c, 0.01, 1.0).prop_map(|v| {
        let total: f64 = v.iter().sum();
        v.iter().map(|x| x / total).collect()
    })
}

fn classifier(c: usize, d: usize) -> impl Strategy<Value = LinearClassifier> {
    (tensor(c, d, -2.0, 2.0), values(c, -1.0, 1.0))
        .prop_map(|(w, b)| LinearClassifier::new(w, Tensor::vector(&b)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_softmax_is_a_partition_of_unity(k in 2usize..5, seed in values(12, -8.0, 8.0)) {
        let mut tape = Tape::new();
        let inputs: Vec<_> = (0..k)
            .map(|i| tape.constant(Tensor::new([3], seed[i * 3 % 12..i * 3 % 12 + 3].to_vec()).unwrap()))
            .collect();
        let out = tape.group_softmax(&inputs).unwrap();
        for j in 0..3 {
            let w: Vec<f64> = out.iter().map(|&v| tape.value(v).data()[j]).collect();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn concat_then_split_is_identity(a in tensor(2, 3, -5.0, 5.0), b in tensor(2, 4, -5.0, 5.0)) {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let joined = tape.concat(va, vb, 1).unwrap();
        let parts = tape.split(joined, 1, &[3, 4]).unwrap();
        prop_assert_eq!(tape.value(parts[0]), &a);
        prop_assert_eq!(tape.value(parts[1]), &b);
    }

    #[test]
    fn backward_is_deterministic(x in tensor(2, 4, -2.0, 2.0), w in tensor(4, 3, -2.0, 2.0)) {
        let run = || {
            let mut tape = Tape::new();
            let (vx, vw) = (tape.param(&x), tape.param(&w));
            let y = tape.matmul(vx, vw).unwrap();
            let y = tape.tanh(y);
            let l = tape.sum(y);
            tape.backward(l).unwrap();
            (tape.grad(vx).unwrap(), tape.grad(vw).unwrap())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn monet_gates_lie_strictly_inside_unit_interval(
        x in tensor(1, 5, -3.0, 3.0),
        left in tensor(1, 4, -3.0, 3.0),
        right in tensor(1, 4, -3.0, 3.0),
        seed in any::<u64>(),
    ) {
        let model = Model::init(&CellConfig::new(Family::Monet, 5, 4), seed).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let CellParams::MoNet(p) = bound.cell() else { unreachable!() };
        let (x, l, r) = (tape.constant(x), tape.constant(left), tape.constant(right));
        let tr = monet_unit(&mut tape, x, l, r, p).unwrap().values(&tape);
        for g in [&tr.r_f, &tr.r_b, &tr.z_f, &tr.z_b] {
            prop_assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        prop_assert!(tr.h.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clipping_shrinks_without_turning(g in values(10, -5.0, 5.0), max in 0.01f64..10.0) {
        let mut grads = vec![g[..4].to_vec(), g[4..].to_vec()];
        let before = grads.clone();
        let norm = clip_global_norm(&mut grads, max);
        let after = global_norm(&grads);
        prop_assert!(after <= norm * (1.0 + 1e-12));
        prop_assert!(after <= max * (1.0 + 1e-12) || after <= norm);
        let scale = if norm > 0.0 { after / norm } else { 1.0 };
        for (b, a) in before.concat().iter().zip(grads.concat()) {
            prop_assert!((a - b * scale).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_on_agreement(
        s in tensor(5, 3, -2.0, 2.0),
        s_hat in tensor(5, 3, -2.0, 2.0),
        p in probs(4),
        q in probs(4),
        alpha in 0.0f64..20.0,
    ) {
        let cfg = LossConfig { alpha };
        let (pt, qt) = (Tensor::vector(&p), Tensor::vector(&q));
        let l = hallucination_loss(&s, &s_hat, &pt, &qt, &cfg).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(hallucination_loss(&s, &s, &pt, &pt, &cfg).unwrap(), 0.0);
        if s != s_hat {
            prop_assert!(l > 0.0);
        }
    }

    #[test]
    fn ensemble_is_a_commutative_probability_vector(p in probs(5), q in probs(5)) {
        let (a, b) = (Prediction::new(p).unwrap(), Prediction::new(q).unwrap());
        let e = ensemble(&a, &b).unwrap();
        prop_assert!((e.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(e.probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(e, ensemble(&b, &a).unwrap());
    }

    #[test]
    fn classify_ignores_time_order(
        clf in classifier(4, 3),
        seq in tensor(6, 3, -2.0, 2.0),
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let mut rows = Vec::new();
        for &t in &perm {
            rows.extend_from_slice(seq.row(t));
        }
        let shuffled = Tensor::new([6, 3], rows).unwrap();
        let (a, b) = (classify(&seq, &clf).unwrap(), classify(&shuffled, &clf).unwrap());
        prop_assert_eq!(a.top1, b.top1);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn accuracy_survives_consistent_relabeling(
        clf in classifier(4, 3),
        seqs in prop::collection::vec(tensor(3, 3, -2.0, 2.0), 1..12),
        labels in prop::collection::vec(0usize..4, 12),
        perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let labels = &labels[..seqs.len()];
        let preds: Vec<_> = seqs.iter().map(|s| classify(s, &clf).unwrap()).collect();
        let acc = top1_accuracy(&preds, labels).unwrap();

        // row c of the relabeled classifier is old row perm^-1(c)
        let (c, d) = (4, 3);
        let mut w = vec![0.0; c * d];
        let mut b = vec![0.0; c];
        for old in 0..c {
            let new = perm[old];
            w[new * d..(new + 1) * d].copy_from_slice(clf.w.row(old));
            b[new] = clf.b.data()[old];
        }
        let relabeled = LinearClassifier::new(Tensor::new([c, d], w).unwrap(), Tensor::vector(&b)).unwrap();
        let preds: Vec<_> = seqs.iter().map(|s| classify(s, &relabeled).unwrap()).collect();
        let new_labels: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        prop_assert_eq!(top1_accuracy(&preds, &new_labels).unwrap(), acc);
    }

    #[test]
    fn mofe_round_trip_is_exact(
        raw in prop::collection::vec((tensor(3, 2, -1e3, 1e3), tensor(3, 4, -1e3, 1e3), 0usize..5, "[a-z0-9\\-]{0,12}"), 0..6),
    ) {
        let records: Vec<FeatureRecord> = raw
            .into_iter()
            .map(|(a, f, label, id)| FeatureRecord { id, label, appearance: a, flow_target: f })
            .collect();
        let meta = DatasetMeta { num_classes: 5, seq_len: 3, d_x: 2, d_s: 4 };
        let ds = Dataset::new(meta, quantize(&records)).unwrap();
        let bytes = encode(&ds).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn split_partitions_the_input(n in 4usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let records: Vec<FeatureRecord> = (0..n)
            .map(|i| FeatureRecord {
                id: format!("r{i}"),
                label: i % 3,
                appearance: Tensor::zeros([1, 1]),
                flow_target: Tensor::zeros([1, 1]),
            })
            .collect();
        let s = split(&records, frac, seed).unwrap();
        let mut ids: Vec<String> = s.train.iter().chain(&s.val).map(|r| r.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        expected.sort();
        prop_assert_eq!(ids, expected);
        prop_assert_eq!(s.val.len(), (n as f64 * frac).round() as usize);
        prop_assert_eq!(split(&records, frac, seed).unwrap().val, s.val);
    }
}

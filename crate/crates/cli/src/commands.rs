use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};

use monet::cells::{count_params, flop_count, match_params, CellConfig, Family, Model};
use monet::checkpoint::{Checkpoint, ClassifierRole};
use monet::classify::{classify, ensemble, fit_classifier, top1_accuracy, write_predictions_csv, Prediction, PredictionRow};
use monet::data::{
    generate_synthetic, quantize, read_dataset, sha256_file, write_dataset, Dataset, DatasetMeta, FeatureRecord, Manifest,
    ManifestFile, SyntheticTaskSpec,
};
use monet::gradcheck::{gradcheck_family, GradCheckShape, GRADCHECK_TOLERANCE};
use monet::training::{self, evaluate, hallucinate_all, TrainError};

use crate::config::{read_json, ExperimentConfig};
use crate::lock::DirLock;
use crate::{CmdResult, Failure};

pub const TRAIN_FILE: &str = "train.mofe";
pub const VAL_FILE: &str = "val.mofe";
pub const MANIFEST_FILE: &str = "manifest.json";

fn runtime(msg: impl std::fmt::Display) -> Failure {
    Failure::Runtime(anyhow!("{msg}"))
}

/// Writes `train.mofe`, `val.mofe` and a manifest for `spec` into `out`.
fn write_task(spec: &SyntheticTaskSpec, out: &Path) -> CmdResult {
    spec.validate().map_err(Failure::invalid)?;
    let task = generate_synthetic(spec).map_err(Failure::invalid)?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)?;
    let meta = DatasetMeta {
        num_classes: spec.num_classes,
        seq_len: spec.seq_len,
        d_x: spec.d_x,
        d_s: spec.d_s,
    };
    let mut files = Vec::new();
    for (name, records) in [(TRAIN_FILE, &task.train), (VAL_FILE, &task.val)] {
        let path = out.join(name);
        let ds = Dataset::new(meta, quantize(records)).map_err(Failure::runtime)?;
        write_dataset(&path, &ds).map_err(Failure::runtime)?;
        files.push(ManifestFile {
            name: name.into(),
            records: records.len(),
            sha256: sha256_file(&path).map_err(Failure::runtime)?,
        });
    }
    let manifest = Manifest {
        format: "MOFE".into(),
        version: monet::data::MOFE_VERSION,
        seed: spec.seed,
        spec: spec.clone(),
        files,
    };
    manifest.write(&out.join(MANIFEST_FILE)).map_err(Failure::runtime)?;
    info!(
        "wrote {} train and {} val records to {}",
        task.train.len(),
        task.val.len(),
        out.display()
    );
    Ok(())
}

pub fn gen_data(spec: Option<&Path>, out: &Path) -> CmdResult {
    let spec: SyntheticTaskSpec = match spec {
        Some(p) => read_json(p)?,
        None => SyntheticTaskSpec::default(),
    };
    write_task(&spec, out)
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    read_dataset(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Runtime)
}

/// Loads a data directory, checking the manifest when one is present.
fn load_dir(dir: &Path) -> Result<(Dataset, Dataset), Failure> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let m = Manifest::read(&manifest).map_err(Failure::runtime)?;
        let stale = m.verify(dir).map_err(Failure::runtime)?;
        if !stale.is_empty() {
            return Err(runtime(format!("checksum mismatch in {}: {}", dir.display(), stale.join(", "))));
        }
    }
    Ok((load(&dir.join(TRAIN_FILE))?, load(&dir.join(VAL_FILE))?))
}

fn check_dims(cell: &CellConfig, meta: &DatasetMeta, what: &str) -> CmdResult {
    if meta.d_x != cell.d_x || meta.d_s != cell.output_dim() {
        return Err(Failure::invalid(anyhow!(
            "{what} has D_x={} D_s={} but the model expects D_x={} and emits {}",
            meta.d_x,
            meta.d_s,
            cell.d_x,
            cell.output_dim()
        )));
    }
    Ok(())
}

fn fit(records: &[FeatureRecord], num_classes: usize, cfg: &monet::classify::FitConfig, flow: bool) -> Result<monet::classify::LinearClassifier, Failure> {
    let seqs: Vec<_> = records.iter().map(|r| if flow { &r.flow_target } else { &r.appearance }).collect();
    let labels: Vec<_> = records.iter().map(|r| r.label).collect();
    fit_classifier(&seqs, &labels, num_classes, cfg).map_err(Failure::runtime)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(Failure::runtime)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

pub fn train(config: &Path, epochs: Option<usize>) -> CmdResult {
    let mut cfg: ExperimentConfig = read_json(config)?;
    if let Some(e) = epochs {
        cfg.train.max_epochs = e;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))
        .map_err(Failure::Runtime)?;
    let _lock = DirLock::acquire(&cfg.out_dir).map_err(Failure::Runtime)?;

    let data_dir: PathBuf = match (&cfg.task, &cfg.data_dir) {
        (Some(task), _) => {
            let dir = cfg.out_dir.join("data");
            write_task(task, &dir)?;
            dir
        }
        (None, Some(dir)) => dir.clone(),
        (None, None) => unreachable!("validated"),
    };
    let (train_ds, val_ds) = load_dir(&data_dir)?;
    check_dims(&cfg.cell, &train_ds.meta, "training data")?;
    check_dims(&cfg.cell, &val_ds.meta, "validation data")?;
    if train_ds.meta.num_classes != val_ds.meta.num_classes {
        return Err(Failure::invalid(anyhow!("train and val disagree on the number of classes")));
    }
    let c = train_ds.meta.num_classes;

    let appearance = fit(&train_ds.records, c, &cfg.classifier, false)?;
    let teacher = fit(&train_ds.records, c, &cfg.classifier, true)?;
    let model = Model::init(&cfg.cell, cfg.seed).map_err(Failure::invalid)?;
    info!(
        "training {} ({} params) on {} examples, validating on {}",
        cfg.cell.family,
        model.num_params(),
        train_ds.records.len(),
        val_ds.records.len()
    );
    let outcome = training::train(model, &train_ds.records, &val_ds.records, &teacher, &cfg.train, &cfg.loss).map_err(|e| match e {
        TrainError::Config { .. } => Failure::invalid(e),
        e => Failure::runtime(e),
    })?;

    let report = &outcome.report;
    fs::write(cfg.out_dir.join("report.json"), report.to_json() + "\n").map_err(Failure::runtime)?;
    Checkpoint::new(outcome.model)
        .with_classifier(ClassifierRole::Appearance, appearance)
        .with_classifier(ClassifierRole::Flow, teacher)
        .save(&cfg.out_dir.join("checkpoint.monw"))
        .map_err(Failure::runtime)?;
    write_json(&cfg.out_dir.join("config.json"), &cfg)?;
    println!("final_val_mse: {}", report.final_val_mse);
    println!("final_val_top1: {}", report.final_val_top1);
    match report.best_epoch {
        Some(e) => println!("best_epoch: {e}"),
        None => println!("best_epoch: none"),
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Failure::Runtime)
}

fn role(ckpt: &Checkpoint, role: ClassifierRole) -> Result<&monet::classify::LinearClassifier, Failure> {
    ckpt.classifier(role)
        .ok_or_else(|| Failure::invalid(anyhow!("checkpoint has no {role:?} classifier")))
}

pub fn eval(checkpoint: &Path, data: &Path, hallucinated: bool, predictions: Option<&Path>) -> CmdResult {
    let ckpt = load_checkpoint(checkpoint)?;
    let ds = load(data)?;
    let cell = ckpt.model.config();
    if ds.records.is_empty() {
        return Err(Failure::invalid(anyhow!("{} holds no records", data.display())));
    }
    let app_clf = role(&ckpt, ClassifierRole::Appearance)?;
    let flow_clf = role(&ckpt, ClassifierRole::Flow)?;
    if ds.meta.d_x != app_clf.dim() || ds.meta.d_s != flow_clf.dim() || ds.meta.num_classes > app_clf.num_classes() {
        return Err(Failure::invalid(anyhow!(
            "data has D_x={} D_s={} C={} but the checkpoint classifiers expect D_x={} D_s={} C={}",
            ds.meta.d_x,
            ds.meta.d_s,
            ds.meta.num_classes,
            app_clf.dim(),
            flow_clf.dim(),
            app_clf.num_classes()
        )));
    }

    let flows = if hallucinated {
        None
    } else {
        check_dims(cell, &ds.meta, "data")?;
        Some(hallucinate_all(&ckpt.model, &ds.records).map_err(Failure::runtime)?)
    };
    let labels = ds.labels();
    let mut p_app = Vec::with_capacity(ds.records.len());
    let mut p_flow = Vec::with_capacity(ds.records.len());
    let mut p_fused = Vec::with_capacity(ds.records.len());
    for (i, r) in ds.records.iter().enumerate() {
        let flow = flows.as_ref().map_or(&r.flow_target, |f| &f[i]);
        let a = classify(&r.appearance, app_clf).map_err(Failure::runtime)?;
        let f = classify(flow, flow_clf).map_err(Failure::runtime)?;
        p_fused.push(ensemble(&a, &f).map_err(Failure::runtime)?);
        p_app.push(a);
        p_flow.push(f);
    }
    if !hallucinated {
        let m = evaluate(&ckpt.model, flow_clf, &ds.records).map_err(Failure::runtime)?;
        println!("val_mse: {}", m.mse);
    }
    let acc = |p: &[Prediction]| top1_accuracy(p, &labels).map_err(Failure::runtime);
    println!("top1_appearance: {}", acc(&p_app)?);
    println!("top1_flow: {}", acc(&p_flow)?);
    println!("top1_fused: {}", acc(&p_fused)?);

    if let Some(path) = predictions {
        let rows: Vec<_> = ds
            .records
            .iter()
            .zip(&p_fused)
            .map(|(r, p)| PredictionRow {
                example_id: &r.id,
                label: r.label,
                prediction: p,
            })
            .collect();
        let file = fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(Failure::Runtime)?;
        write_predictions_csv(BufWriter::new(file), &rows).map_err(Failure::runtime)?;
    }
    Ok(())
}

pub fn hallucinate(checkpoint: &Path, data: &Path, out: &Path) -> CmdResult {
    let ckpt = load_checkpoint(checkpoint)?;
    let ds = load(data)?;
    let cell = ckpt.model.config();
    if ds.meta.d_x != cell.d_x {
        return Err(Failure::invalid(anyhow!(
            "data has D_x={} but the model expects {}",
            ds.meta.d_x,
            cell.d_x
        )));
    }
    let flows = hallucinate_all(&ckpt.model, &ds.records).map_err(Failure::runtime)?;
    let records = ds
        .records
        .into_iter()
        .zip(flows)
        .map(|(r, flow)| FeatureRecord { flow_target: flow, ..r })
        .collect::<Vec<_>>();
    let meta = DatasetMeta {
        d_s: cell.output_dim(),
        ..ds.meta
    };
    let out_ds = Dataset::new(meta, quantize(&records)).map_err(Failure::runtime)?;
    write_dataset(out, &out_ds).map_err(Failure::runtime)?;
    info!("wrote {} hallucinated records to {}", out_ds.records.len(), out.display());
    Ok(())
}

pub fn gradcheck(family: Family, trials: usize, layers: &[usize], seed: u64, fault: Option<f64>) -> CmdResult {
    if trials == 0 {
        return Err(Failure::invalid(anyhow!("--trials must be positive")));
    }
    let shape = GradCheckShape::default();
    let mut failed = false;
    for &l in layers {
        CellConfig::new(family, shape.d_x, shape.d_s)
            .with_layers(l)
            .validate()
            .map_err(Failure::invalid)?;
        let report = gradcheck_family(family, l, trials, seed, shape, fault).map_err(Failure::runtime)?;
        let status = if report.passed() { "pass" } else { "FAIL" };
        println!(
            "{status} {} layers={} trials={} coords={} max_rel_err={:.3e} (tol {:.0e}) worst: {}",
            report.family,
            report.layers,
            report.trials,
            report.coordinates,
            report.max_relative_error,
            GRADCHECK_TOLERANCE,
            report.worst
        );
        failed |= !report.passed();
    }
    if failed {
        return Err(runtime("gradient check failed"));
    }
    Ok(())
}

pub fn flops(config: &Path, seq_len: usize, baseline: Family) -> CmdResult {
    let cell: CellConfig = read_json(config)?;
    cell.validate().map_err(Failure::invalid)?;
    if seq_len == 0 {
        return Err(Failure::invalid(anyhow!("--seq-len must be positive")));
    }
    let matched = match_params(&cell, &CellConfig::new(baseline, cell.d_x, 1)).map_err(Failure::invalid)?;
    if !matched.within_tolerance {
        warn!(
            "closest {baseline} is {:.1}% off the target parameter count",
            100.0 * matched.relative_gap
        );
    }
    for (name, cfg) in [("model", &cell), ("baseline", &matched.config)] {
        let f = flop_count(cfg, seq_len);
        println!(
            "{name}: family={} d_s={} layers={} params={} unit_step_macs={} unit_step_activations={} sequence_macs={} per_step_macs={:.1}",
            cfg.family,
            cfg.d_s,
            cfg.layers,
            count_params(cfg),
            f.unit_step_macs,
            f.unit_step_activations,
            f.sequence_macs,
            f.per_step_macs()
        );
    }
    Ok(())
}

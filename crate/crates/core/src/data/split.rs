//! Stratified train/validation splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, FeatureRecord};

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<FeatureRecord>,
    pub val: Vec<FeatureRecord>,
    /// Classes too small to stratify, one message each.
    pub warnings: Vec<String>,
}

/// Stratified by label. The validation size is `round(n · val_fraction)`;
/// per-class quotas come from largest-remainder allocation, so every class
/// lands within one example of its exact share. Within a class the chosen
/// examples are a seeded shuffle; both outputs keep input order.
pub fn split(records: &[FeatureRecord], val_fraction: f64, seed: u64) -> Result<Split, DataError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "val_fraction must lie strictly between 0 and 1, got {val_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }

    let mut warnings = Vec::new();
    for (&label, members) in &by_class {
        if members.len() < 2 {
            let msg = format!("class {label} has {} example(s); stratification is best effort", members.len());
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let total = (records.len() as f64 * val_fraction).round() as usize;
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&label, m)| {
            let exact = m.len() as f64 * val_fraction;
            (label, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        quotas[k].1 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; records.len()];
    for (label, quota, _) in quotas {
        let mut members = by_class[&label].clone();
        members.shuffle(&mut rng);
        for &i in members.iter().take(quota) {
            is_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (r, v) in records.iter().zip(is_val) {
        if v { val.push(r.clone()) } else { train.push(r.clone()) }
    }
    Ok(Split { train, val, warnings })
}

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use monet::cells::CellConfig;
use monet::classify::FitConfig;
use monet::data::SyntheticTaskSpec;
use monet::training::{LossConfig, TrainConfig};

use crate::Failure;

/// Everything needed to re-run one training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Synthetic task generated into `out_dir/data`. Exclusive with
    /// `data_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<SyntheticTaskSpec>,
    /// Directory holding `train.mofe` and `val.mofe`, e.g. from `gen-data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub cell: CellConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    /// Fitting recipe of the appearance and flow classifiers.
    #[serde(default)]
    pub classifier: FitConfig,
    pub out_dir: PathBuf,
    /// Seeds model initialization.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        match (&self.task, &self.data_dir) {
            (Some(_), Some(_)) => {
                return Err(Failure::invalid(anyhow::anyhow!("set only one of `task` and `data_dir`")))
            }
            (None, None) => return Err(Failure::invalid(anyhow::anyhow!("one of `task` or `data_dir` is required"))),
            _ => {}
        }
        if let Some(t) = &self.task {
            t.validate().map_err(Failure::invalid)?;
        }
        self.cell.validate().map_err(Failure::invalid)?;
        self.train.validate().map_err(Failure::invalid)?;
        self.loss.validate().map_err(Failure::invalid)?;
        Ok(())
    }
}

/// Reads strict JSON: a missing file is a runtime failure, anything the
/// schema rejects is invalid input.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::runtime(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::invalid(anyhow::anyhow!("{}: {e}", path.display())))
}

//! Paired appearance/flow feature sequences: the synthetic stand-in task,
//! the `MOFE` file format, splitting and dataset manifests.

mod manifest;
mod mofe;
mod split;
mod synthetic;

use thiserror::Error;

use crate::tensor::Tensor;

pub use manifest::{sha256_file, sha256_hex, Manifest, ManifestFile};
pub use mofe::{
    decode, encode, quantize, read_dataset, read_header, write_dataset, Dataset, DatasetMeta, MOFE_MAGIC,
    MOFE_VERSION,
};
pub use split::{split, Split};
pub use synthetic::{generate_synthetic, ClassSystem, SyntheticTask, SyntheticTaskSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("version mismatch: file is version {found}, reader supports {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload while reading {what}")]
    Truncated { what: String },
    #[error("record {record} ({stream}) contains a non-finite value")]
    NonFinite { record: usize, stream: &'static str },
    #[error("record {record}: id is not valid UTF-8")]
    InvalidUtf8 { record: usize },
    #[error("invalid task spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One example: an appearance sequence `[T×D_x]`, its target flow sequence
/// `[T×D_s]` and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: usize,
    pub appearance: Tensor,
    pub flow_target: Tensor,
}

impl FeatureRecord {
    pub fn seq_len(&self) -> usize {
        self.appearance.shape()[0]
    }

    /// Checks that both sequences are rank 2, share `T`, and are finite.
    pub fn validate(&self) -> Result<(), DataError> {
        let (a, f) = (self.appearance.shape(), self.flow_target.shape());
        if a.len() != 2 || f.len() != 2 || a[0] != f[0] {
            return Err(DataError::Invalid(format!(
                "record {}: appearance {a:?} and flow {f:?} must be [T×D] with equal T",
                self.id
            )));
        }
        if !self.appearance.is_finite() || !self.flow_target.is_finite() {
            return Err(DataError::Invalid(format!("record {}: non-finite values", self.id)));
        }
        Ok(())
    }
}

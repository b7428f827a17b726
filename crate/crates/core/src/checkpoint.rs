//! The `MONW` parameter checkpoint.
//!
//! ```text
//! magic    "MONW"
//! version  u32
//! family   u32 tag
//! D_x, D_s, layers, kernel   u32 each
//! flags    u32 (bit 0: causal_only)
//! d_out    u32 (0 when the model has no readout)
//! n_tensors u32
//! n_tensors × { ndim u32, dims u32…, data f64… }
//! n_classifiers u32
//! n_classifiers × { role u32, C u32, D u32, W C·D f64, b C f64 }
//! ```
//!
//! Little-endian throughout, row-major data. Tensors appear in
//! [`Model::parameters`] order, so decoding followed by encoding reproduces
//! the input bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::cells::{CellConfig, Family, Model};
use crate::classify::LinearClassifier;
use crate::tensor::{Tensor, TensorError};

pub const MONW_MAGIC: [u8; 4] = *b"MONW";
pub const MONW_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("version mismatch: file is version {found}, reader supports {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint while reading {0}")]
    Truncated(String),
    #[error("unknown family tag {0}")]
    UnknownFamily(u32),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which stream a stored classifier scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierRole {
    Appearance,
    Flow,
}

impl ClassifierRole {
    fn tag(self) -> u32 {
        match self {
            ClassifierRole::Appearance => 0,
            ClassifierRole::Flow => 1,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(ClassifierRole::Appearance),
            1 => Some(ClassifierRole::Flow),
            _ => None,
        }
    }
}

/// A hallucination model together with the stream classifiers it was
/// trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub classifiers: Vec<(ClassifierRole, LinearClassifier)>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            classifiers: Vec::new(),
        }
    }

    pub fn with_classifier(mut self, role: ClassifierRole, clf: LinearClassifier) -> Self {
        self.classifiers.push((role, clf));
        self
    }

    pub fn classifier(&self, role: ClassifierRole) -> Option<&LinearClassifier> {
        self.classifiers.iter().find(|(r, _)| *r == role).map(|(_, c)| c)
    }

    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        let c = self.model.config();
        let mut out = Vec::new();
        out.extend_from_slice(&MONW_MAGIC);
        put(&mut out, MONW_VERSION as usize)?;
        put(&mut out, c.family.tag() as usize)?;
        for v in [c.d_x, c.d_s, c.layers, c.kernel, c.causal_only as usize, c.d_out.unwrap_or(0)] {
            put(&mut out, v)?;
        }
        let params = self.model.parameters();
        put(&mut out, params.len())?;
        for t in params {
            put_tensor(&mut out, t)?;
        }
        put(&mut out, self.classifiers.len())?;
        for (role, clf) in &self.classifiers {
            put(&mut out, role.tag() as usize)?;
            put(&mut out, clf.num_classes())?;
            put(&mut out, clf.dim())?;
            put_f64s(&mut out, clf.w.data());
            put_f64s(&mut out, clf.b.data());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MONW_MAGIC {
            let mut found = [0u8; 4];
            found.copy_from_slice(magic);
            return Err(CheckpointError::BadMagic {
                expected: MONW_MAGIC,
                found,
            });
        }
        let version = r.u32("version")?;
        if version != MONW_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: MONW_VERSION,
            });
        }
        let tag = r.u32("family")?;
        let family = Family::from_tag(tag).ok_or(CheckpointError::UnknownFamily(tag))?;
        let d_x = r.u32("D_x")? as usize;
        let d_s = r.u32("D_s")? as usize;
        let layers = r.u32("layers")? as usize;
        let kernel = r.u32("kernel")? as usize;
        let flags = r.u32("flags")?;
        if flags & !1 != 0 {
            return Err(CheckpointError::Invalid(format!("unknown flag bits {flags:#x}")));
        }
        let d_out = r.u32("d_out")? as usize;
        let config = CellConfig {
            family,
            d_x,
            d_s,
            layers,
            kernel,
            causal_only: flags & 1 == 1,
            d_out: (d_out > 0).then_some(d_out),
        };
        config.validate().map_err(|e| CheckpointError::Invalid(e.to_string()))?;

        let n = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for i in 0..n {
            let ndim = r.u32(&format!("tensor {i} rank"))? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32(&format!("tensor {i} dims")).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| CheckpointError::Invalid(format!("tensor {i} is too large")))?;
            tensors.push(Tensor::new(dims, r.f64s(len, &format!("tensor {i} data"))?)?);
        }
        let model = Model::from_parameters(&config, tensors)?;

        let k = r.u32("classifier count")? as usize;
        let mut classifiers = Vec::with_capacity(k.min(16));
        for i in 0..k {
            let tag = r.u32(&format!("classifier {i} role"))?;
            let role = ClassifierRole::from_tag(tag)
                .ok_or_else(|| CheckpointError::Invalid(format!("unknown classifier role {tag}")))?;
            let c = r.u32(&format!("classifier {i} classes"))? as usize;
            let d = r.u32(&format!("classifier {i} dim"))? as usize;
            let wlen = c.checked_mul(d).ok_or_else(|| CheckpointError::Invalid("classifier too large".into()))?;
            let w = Tensor::new([c, d], r.f64s(wlen, &format!("classifier {i} weights"))?)?;
            let b = Tensor::new([c], r.f64s(c, &format!("classifier {i} bias"))?)?;
            classifiers.push((role, LinearClassifier::new(w, b)?));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Invalid(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { model, classifiers })
    }

    /// Atomic write via a temporary file in the target directory.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.encode()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| CheckpointError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::decode(&fs::read(path)?)
    }
}

fn put(out: &mut Vec<u8>, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::Invalid(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) -> Result<(), CheckpointError> {
    put(out, t.rank())?;
    for &d in t.shape() {
        put(out, d)?;
    }
    put_f64s(out, t.data());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

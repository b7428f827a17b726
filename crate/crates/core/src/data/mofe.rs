//! The `MOFE` feature file.
//!
//! ```text
//! magic   "MOFE"
//! version u32
//! n, C, T, D_x, D_s   u32 each
//! n × { id_len u32, id (UTF-8), label u32,
//!       appearance T·D_x f32, flow T·D_s f32 }
//! ```
//!
//! All integers and floats are little-endian; sequences are row-major.
//! Values are stored as `f32`, so [`quantize`] gives the exact in-memory
//! image of what a write followed by a read produces.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, FeatureRecord};
use crate::tensor::Tensor;

pub const MOFE_MAGIC: [u8; 4] = *b"MOFE";
pub const MOFE_VERSION: u32 = 1;

/// Header counts of a dataset. `C`, `T` and the widths are stored even
/// when there are no records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub seq_len: usize,
    pub d_x: usize,
    pub d_s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<FeatureRecord>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, records: Vec<FeatureRecord>) -> Result<Self, DataError> {
        let ds = Self { meta, records };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), DataError> {
        let m = self.meta;
        for r in &self.records {
            r.validate()?;
            if r.appearance.shape() != [m.seq_len, m.d_x] || r.flow_target.shape() != [m.seq_len, m.d_s] {
                return Err(DataError::Invalid(format!(
                    "record {}: shapes {:?}/{:?} do not match header T={} D_x={} D_s={}",
                    r.id,
                    r.appearance.shape(),
                    r.flow_target.shape(),
                    m.seq_len,
                    m.d_x,
                    m.d_s
                )));
            }
            if r.label >= m.num_classes {
                return Err(DataError::Invalid(format!(
                    "record {}: label {} outside [0, {})",
                    r.id, r.label, m.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }
}

/// Rounds every value through `f32`, as a write/read cycle would.
pub fn quantize(records: &[FeatureRecord]) -> Vec<FeatureRecord> {
    let q = |t: &Tensor| t.map(|v| v as f32 as f64);
    records
        .iter()
        .map(|r| FeatureRecord {
            id: r.id.clone(),
            label: r.label,
            appearance: q(&r.appearance),
            flow_target: q(&r.flow_target),
        })
        .collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<(), DataError> {
    let v = u32::try_from(v).map_err(|_| DataError::Invalid(format!("{what} = {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, t: &Tensor, record: usize, stream: &'static str) -> Result<(), DataError> {
    for &v in t.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(DataError::NonFinite { record, stream });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>, DataError> {
    ds.check()?;
    let m = ds.meta;
    let mut out = Vec::new();
    out.extend_from_slice(&MOFE_MAGIC);
    out.extend_from_slice(&MOFE_VERSION.to_le_bytes());
    put_u32(&mut out, ds.records.len(), "n")?;
    put_u32(&mut out, m.num_classes, "C")?;
    put_u32(&mut out, m.seq_len, "T")?;
    put_u32(&mut out, m.d_x, "D_x")?;
    put_u32(&mut out, m.d_s, "D_s")?;
    for (i, r) in ds.records.iter().enumerate() {
        put_u32(&mut out, r.id.len(), "id length")?;
        out.extend_from_slice(r.id.as_bytes());
        put_u32(&mut out, r.label, "label")?;
        put_f32s(&mut out, &r.appearance, i, "appearance")?;
        put_f32s(&mut out, &r.flow_target, i, "flow")?;
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| DataError::Truncated {
            what: what.to_string(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, rows: usize, cols: usize, record: usize, stream: &'static str) -> Result<Tensor, DataError> {
        let n = rows * cols;
        let bytes = self.take(n.saturating_mul(4), &format!("record {record} {stream}"))?;
        let mut data = Vec::with_capacity(n);
        for c in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(DataError::NonFinite { record, stream });
            }
            data.push(v as f64);
        }
        Ok(Tensor::new([rows, cols], data).expect("payload shape"))
    }
}

fn header(r: &mut Reader<'_>) -> Result<(usize, DatasetMeta), DataError> {
    let magic = r.take(4, "magic")?;
    if magic != MOFE_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(DataError::BadMagic {
            expected: MOFE_MAGIC,
            found,
        });
    }
    let version = r.u32("version")?;
    if version != MOFE_VERSION {
        return Err(DataError::VersionMismatch {
            found: version,
            expected: MOFE_VERSION,
        });
    }
    let n = r.u32("record count")? as usize;
    let meta = DatasetMeta {
        num_classes: r.u32("class count")? as usize,
        seq_len: r.u32("sequence length")? as usize,
        d_x: r.u32("D_x")? as usize,
        d_s: r.u32("D_s")? as usize,
    };
    Ok((n, meta))
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (n, meta) = header(&mut r)?;
    // Capacity is bounded by the payload actually present.
    let mut records = Vec::with_capacity(n.min(bytes.len() / 8));
    for i in 0..n {
        let id_len = r.u32(&format!("record {i} id length"))? as usize;
        let id = std::str::from_utf8(r.take(id_len, &format!("record {i} id"))?)
            .map_err(|_| DataError::InvalidUtf8 { record: i })?
            .to_string();
        let label = r.u32(&format!("record {i} label"))? as usize;
        let appearance = r.tensor(meta.seq_len, meta.d_x, i, "appearance")?;
        let flow_target = r.tensor(meta.seq_len, meta.d_s, i, "flow")?;
        records.push(FeatureRecord {
            id,
            label,
            appearance,
            flow_target,
        });
    }
    if r.pos != bytes.len() {
        return Err(DataError::Invalid(format!(
            "{} trailing bytes after the last record",
            bytes.len() - r.pos
        )));
    }
    Dataset::new(meta, records)
}

/// Writes through a temporary file in the same directory, then renames it
/// into place, so readers never observe a partial file.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    let bytes = encode(ds)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| DataError::Io(e.error))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    decode(&fs::read(path)?)
}

/// Reads only the header: record count and dims.
pub fn read_header(path: &Path) -> Result<(usize, DatasetMeta), DataError> {
    use std::io::Read;
    let mut buf = [0u8; 28];
    let mut f = fs::File::open(path)?;
    let mut got = 0;
    while got < buf.len() {
        match f.read(&mut buf[got..])? {
            0 => break,
            k => got += k,
        }
    }
    header(&mut Reader { buf: &buf[..got], pos: 0 })
}

//! Binary trajectory files (`.gtrc`) and the vocabulary binning projection.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic    b"GTRC"
//! offset 4   version  u32
//! offset 8   dim      u32
//! offset 12  count    u64
//! offset 20  payload  count * dim * f32
//! ```
//!
//! Metadata lives next to the payload in `<trace>.meta.json` so rows stay
//! addressable by offset.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"GTRC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 20;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("row {row}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row}, column {col}: non-finite value")]
    NonFinite { row: usize, col: usize },
    #[error("not a trace file: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated trace: row {row} missing at byte offset {offset}")]
    Truncated { row: u64, offset: u64 },
    #[error("truncated trace header")]
    TruncatedHeader,
    #[error("bin count must be at least 1")]
    InvalidBinCount,
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

/// One point of a trajectory, stored at 32-bit precision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateVector(pub Vec<f32>);

impl StateVector {
    pub fn new(values: Vec<f32>) -> Self {
        StateVector(values)
    }

    /// Narrows a 64-bit vector; values that overflow f32 are rejected as non-finite.
    pub fn from_f64(values: &[f64]) -> Result<Self, TraceError> {
        let out: Vec<f32> = values.iter().map(|&x| x as f32).collect();
        if let Some(col) = out.iter().position(|x| !x.is_finite()) {
            return Err(TraceError::NonFinite { row: 0, col });
        }
        Ok(StateVector(out))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| x as f64).collect()
    }
}

impl From<Vec<f32>> for StateVector {
    fn from(v: Vec<f32>) -> Self {
        StateVector(v)
    }
}

/// Parsed fixed-size header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub dim: u32,
    pub count: u64,
}

impl TraceHeader {
    pub fn payload_len(&self) -> u64 {
        self.count * self.dim as u64 * 4
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut buf = [0u8; HEADER_LEN as usize];
        buf[0..4].copy_from_slice(&MAGIC);
        buf[4..8].copy_from_slice(&self.version.to_le_bytes());
        buf[8..12].copy_from_slice(&self.dim.to_le_bytes());
        buf[12..20].copy_from_slice(&self.count.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN as usize]) -> Result<Self, TraceError> {
        let magic: [u8; 4] = buf[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(TraceError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(TraceError::UnsupportedVersion(version));
        }
        Ok(TraceHeader {
            version,
            dim: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
            count: u64::from_le_bytes(buf[12..20].try_into().unwrap()),
        })
    }
}

/// Sidecar metadata written to `<trace>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TraceMeta {
    pub source_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub decode_config: serde_json::Value,
}

pub fn sidecar_path(trace: &Path) -> PathBuf {
    let mut name = trace.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_meta(trace: &Path, meta: &TraceMeta) -> Result<PathBuf, TraceError> {
    let path = sidecar_path(trace);
    let f = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(f, meta)?;
    Ok(path)
}

pub fn read_meta(trace: &Path) -> Result<TraceMeta, TraceError> {
    let f = BufReader::new(File::open(sidecar_path(trace))?);
    Ok(serde_json::from_reader(f)?)
}

fn check_row(row: &[f32], index: usize, dim: usize) -> Result<(), TraceError> {
    if row.len() != dim {
        return Err(TraceError::DimensionMismatch {
            row: index,
            expected: dim,
            got: row.len(),
        });
    }
    if let Some(col) = row.iter().position(|x| !x.is_finite()) {
        return Err(TraceError::NonFinite { row: index, col });
    }
    Ok(())
}

/// Streaming writer. The row count is patched into the header by [`finish`](Self::finish).
pub struct TraceWriter {
    out: BufWriter<File>,
    dim: Option<usize>,
    count: u64,
}

impl TraceWriter {
    /// Creates the file. When `dim` is `None` it is fixed by the first row.
    pub fn create(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Self, TraceError> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = TraceHeader {
            version: VERSION,
            dim: dim.unwrap_or(0) as u32,
            count: 0,
        };
        out.write_all(&header.encode())?;
        Ok(TraceWriter {
            out,
            dim,
            count: 0,
        })
    }

    pub fn push(&mut self, row: &[f32]) -> Result<(), TraceError> {
        let dim = *self.dim.get_or_insert(row.len());
        check_row(row, self.count as usize, dim)?;
        let mut buf = Vec::with_capacity(row.len() * 4);
        for x in row {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<TraceHeader, TraceError> {
        let header = TraceHeader {
            version: VERSION,
            dim: self.dim.unwrap_or(0) as u32,
            count: self.count,
        };
        self.out.flush()?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(0))?;
        file.write_all(&header.encode())?;
        file.flush()?;
        Ok(header)
    }
}

/// Writes all rows. Every row is validated before the file is touched.
pub fn write_trace(path: impl AsRef<Path>, rows: &[StateVector]) -> Result<TraceHeader, TraceError> {
    let dim = rows.first().map(|r| r.dim()).unwrap_or(0);
    for (i, r) in rows.iter().enumerate() {
        check_row(&r.0, i, dim)?;
    }
    let mut w = TraceWriter::create(path, Some(dim))?;
    for r in rows {
        w.push(&r.0)?;
    }
    w.finish()
}

/// Row-at-a-time reader.
pub struct TraceReader {
    input: BufReader<File>,
    header: TraceHeader,
    next_row: u64,
    buf: Vec<u8>,
}

impl TraceReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut hbuf = [0u8; HEADER_LEN as usize];
        if read_full(&mut input, &mut hbuf)? < hbuf.len() {
            return Err(TraceError::TruncatedHeader);
        }
        let header = TraceHeader::decode(&hbuf)?;
        Ok(TraceReader {
            input,
            buf: vec![0u8; header.dim as usize * 4],
            header,
            next_row: 0,
        })
    }

    pub fn header(&self) -> TraceHeader {
        self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn read_row(&mut self) -> Result<Option<StateVector>, TraceError> {
        if self.next_row >= self.header.count {
            return Ok(None);
        }
        let got = read_full(&mut self.input, &mut self.buf)?;
        if got < self.buf.len() {
            return Err(TraceError::Truncated {
                row: self.next_row,
                offset: HEADER_LEN + self.next_row * self.buf.len() as u64,
            });
        }
        self.next_row += 1;
        let row: Vec<f32> = self
            .buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Some(StateVector(row)))
    }
}

impl Iterator for TraceReader {
    type Item = Result<StateVector, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_row().transpose()
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, TraceError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<StateVector>, TraceError> {
    let reader = TraceReader::open(path)?;
    let mut rows = Vec::with_capacity(reader.header.count.min(1 << 20) as usize);
    for row in reader {
        rows.push(row?);
    }
    Ok(rows)
}

/// Opens a trace and checks the header and payload length without decoding rows.
pub fn validate_trace(path: impl AsRef<Path>) -> Result<TraceHeader, TraceError> {
    let path = path.as_ref();
    let reader = TraceReader::open(path)?;
    let header = reader.header();
    let len = std::fs::metadata(path)?.len();
    let row_bytes = header.dim as u64 * 4;
    let expected = HEADER_LEN + header.payload_len();
    if len < expected {
        let present = if row_bytes == 0 { 0 } else { (len - HEADER_LEN) / row_bytes };
        return Err(TraceError::Truncated {
            row: present,
            offset: HEADER_LEN + present * row_bytes,
        });
    }
    Ok(header)
}

/// Vocabulary binning `i -> i mod k`, summing entries per bin in f64.
///
/// Output dimension is `min(k, v.len())`, so short inputs pass through unchanged.
pub fn bin_project(v: &[f32], k: usize) -> Result<StateVector, TraceError> {
    if k == 0 {
        return Err(TraceError::InvalidBinCount);
    }
    let out_dim = k.min(v.len());
    let mut acc = vec![0.0f64; out_dim];
    for (i, &x) in v.iter().enumerate() {
        acc[i % k] += x as f64;
    }
    Ok(StateVector(acc.into_iter().map(|x| x as f32).collect()))
}

/// f64 variant used inside the estimators.
pub fn bin_project_f64(v: &[f64], k: usize) -> Result<Vec<f64>, TraceError> {
    if k == 0 {
        return Err(TraceError::InvalidBinCount);
    }
    let mut acc = vec![0.0f64; k.min(v.len())];
    for (i, &x) in v.iter().enumerate() {
        acc[i % k] += x;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f32]]) -> Vec<StateVector> {
        data.iter().map(|r| StateVector(r.to_vec())).collect()
    }

    #[test]
    fn three_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gtrc");
        let input = rows(&[&[1.0, 2.0], &[3.0, -4.5], &[0.0, f32::MIN_POSITIVE]]);
        let h = write_trace(&p, &input).unwrap();
        assert_eq!(h.count, 3);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), HEADER_LEN + 24);
        assert_eq!(read_trace(&p).unwrap(), input);
    }

    #[test]
    fn empty_trace_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.gtrc");
        let h = write_trace(&p, &[]).unwrap();
        assert_eq!(h.count, 0);
        assert!(read_trace(&p).unwrap().is_empty());
    }

    #[test]
    fn rejects_dimension_mismatch_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.gtrc");
        let err = write_trace(&p, &rows(&[&[1.0, 2.0], &[1.0]])).unwrap_err();
        assert!(matches!(err, TraceError::DimensionMismatch { row: 1, expected: 2, got: 1 }));
        let err = write_trace(&p, &rows(&[&[1.0, f32::NAN]])).unwrap_err();
        assert!(matches!(err, TraceError::NonFinite { row: 0, col: 1 }));
        let err = write_trace(&p, &rows(&[&[f32::INFINITY]])).unwrap_err();
        assert!(matches!(err, TraceError::NonFinite { .. }));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gtrc");
        let mut bytes = b"XXXX".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_trace(&p), Err(TraceError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn bad_version_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.gtrc");
        write_trace(&p, &rows(&[&[1.0]])).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_trace(&p), Err(TraceError::UnsupportedVersion(9))));
    }

    #[test]
    fn truncated_payload_reports_row_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.gtrc");
        let input: Vec<_> = (0..5).map(|i| StateVector(vec![i as f32; 3])).collect();
        write_trace(&p, &input).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 12);
        std::fs::write(&p, bytes).unwrap();
        let expected_offset = HEADER_LEN + 4 * 12;
        match read_trace(&p) {
            Err(TraceError::Truncated { row, offset }) => {
                assert_eq!(row, 4);
                assert_eq!(offset, expected_offset);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            validate_trace(&p),
            Err(TraceError::Truncated { row: 4, .. })
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.gtrc");
        write_trace(&p, &[]).unwrap();
        let meta = TraceMeta {
            source_kind: "ifs".into(),
            seed: Some(7),
            decode_config: serde_json::json!({"beta": 0.5}),
        };
        let side = write_meta(&p, &meta).unwrap();
        assert!(side.to_string_lossy().ends_with("s.gtrc.meta.json"));
        assert_eq!(read_meta(&p).unwrap(), meta);
    }

    #[test]
    fn bin_project_small_cases() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        assert_eq!(bin_project(&v, 3).unwrap().0, vec![12.0, 7.0, 9.0]);
        assert_eq!(bin_project(&v, 7).unwrap().0, v.to_vec());
        assert_eq!(bin_project(&v, 100).unwrap().0, v.to_vec());
        assert!(matches!(bin_project(&v, 0), Err(TraceError::InvalidBinCount)));
    }
}

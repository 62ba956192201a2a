//! Artifact persistence: full-precision JSON, `y,re,im` CSV fields, binary
//! field blocks and the checksummed run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// serde_json formatter that writes every float with 17 significant digits.
#[derive(Clone, Copy, Debug, Default)]
pub struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize with [`FullPrecision`]; non-finite floats become `null`.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    value.serialize(&mut ser).map_err(|e| Error::Io(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(String::from_utf8(to_json_bytes(value)?).expect("serde_json emits UTF-8"))
}

/// `y,re,im` CSV with a header row and LF endings.
pub fn field_csv_bytes(ys: &[f64], field: &[C64]) -> Result<Vec<u8>> {
    if ys.len() != field.len() {
        return Err(Error::Shape(format!("{} nodes for {} values", ys.len(), field.len())));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["y", "re", "im"]).map_err(|e| Error::Io(e.to_string()))?;
    for (y, z) in ys.iter().zip(field) {
        w.write_record([format!("{y:.16e}"), format!("{:.16e}", z.re), format!("{:.16e}", z.im)])
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Generic numeric CSV with the given header.
pub fn table_csv_bytes(header: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Shape(format!("row of {} values under {} columns", row.len(), header.len())));
        }
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Read a `y,re,im` CSV written by [`field_csv_bytes`] or by hand.
pub fn read_field_csv(path: &Path) -> Result<(Vec<f64>, Vec<C64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                Error::Io(format!("{}: malformed row {}", path.display(), row + 2))
            })
        };
        ys.push(get(0)?);
        zs.push(C64::new(get(1)?, get(2)?));
    }
    Ok((ys, zs))
}

/// Length-prefixed block: `u64` LE count followed by `(re, im)` LE `f64` pairs.
pub fn encode_block(values: &[C64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 16 * values.len());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

/// Decode one block; returns the values and the remaining bytes.
pub fn decode_block(bytes: &[u8]) -> Result<(Vec<C64>, &[u8])> {
    let short = || Error::Io("truncated field block".into());
    let len = u64::from_le_bytes(bytes.get(..8).ok_or_else(short)?.try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + 16 * len).ok_or_else(short)?;
    let vals = body
        .chunks_exact(16)
        .map(|c| {
            C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap()))
        })
        .collect();
    Ok((vals, &bytes[8 + 16 * len..]))
}

/// Row-major matrix as a block preceded by its `u64` LE row count.
pub fn encode_matrix(m: &Array2<C64>) -> Vec<u8> {
    let mut out = (m.nrows() as u64).to_le_bytes().to_vec();
    out.extend(encode_block(&m.iter().copied().collect::<Vec<_>>()));
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Array2<C64>> {
    let rows = u64::from_le_bytes(bytes.get(..8).ok_or_else(|| Error::Io("truncated matrix".into()))?.try_into().unwrap())
        as usize;
    let (vals, _) = decode_block(&bytes[8..])?;
    let cols = if rows == 0 { 0 } else { vals.len() / rows };
    Array2::from_shape_vec((rows, cols), vals).map_err(|e| Error::Shape(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Single writer for a run directory; records a checksum per file.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ArtifactWriter { dir, entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(ArtifactEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write_bytes(name, &to_json_bytes(value)?)
    }

    pub fn write_field_csv(&mut self, name: &str, ys: &[f64], field: &[C64]) -> Result<PathBuf> {
        self.write_bytes(name, &field_csv_bytes(ys, field)?)
    }

    pub fn write_table_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
        self.write_bytes(name, &table_csv_bytes(header, rows)?)
    }

    /// Time-stamped field blocks: `u64` LE sample count, then per sample the
    /// time as `f64` LE followed by its block.
    pub fn write_blocks(&mut self, name: &str, times: &[f64], fields: &[&[C64]]) -> Result<PathBuf> {
        let mut out = (times.len() as u64).to_le_bytes().to_vec();
        for (t, f) in times.iter().zip(fields) {
            out.extend_from_slice(&t.to_le_bytes());
            out.extend(encode_block(f));
        }
        self.write_bytes(name, &out)
    }

    pub fn write_matrix(&mut self, name: &str, m: &Array2<C64>) -> Result<PathBuf> {
        self.write_bytes(name, &encode_matrix(m))
    }
}

/// Decode a file written by [`ArtifactWriter::write_blocks`].
pub fn decode_blocks(bytes: &[u8]) -> Result<Vec<(f64, Vec<C64>)>> {
    let short = || Error::Io("truncated block file".into());
    let count = u64::from_le_bytes(bytes.get(..8).ok_or_else(short)?.try_into().unwrap()) as usize;
    let mut rest = &bytes[8..];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = f64::from_le_bytes(rest.get(..8).ok_or_else(short)?.try_into().unwrap());
        let (vals, tail) = decode_block(&rest[8..])?;
        out.push((t, vals));
        rest = tail;
    }
    Ok(out)
}

/// Calibrated and configured constants recorded with every run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConstants {
    pub c_dagger: f64,
    pub sigma_sharp: f64,
    pub sigma0: f64,
    /// `(label, c, c0)` per fitted kernel envelope.
    pub envelope_fits: Vec<(String, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub n: usize,
    pub period: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: serde_json::Value,
    pub profile: String,
    pub profile_hash: String,
    pub grid: GridInfo,
    pub constants: RunConstants,
    pub cutoff: String,
    pub wall_clock_seconds: f64,
    pub complete: bool,
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    /// Recompute checksums under `dir` and list the artifacts that differ.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            let bytes = fs::read(dir.join(&a.path))?;
            if sha256_hex(&bytes) != a.sha256 {
                bad.push(a.path.clone());
            }
        }
        Ok(bad)
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Write the manifest beside the artifacts (not itself listed).
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, to_json_bytes(manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn json_keeps_seventeen_digits() {
        let s = to_json_string(&[0.1, 1.0 / 3.0, f64::NAN]).unwrap();
        assert_eq!(s.trim(), "[1.0000000000000001e-1,3.3333333333333331e-1,null]");
        let back: Vec<Option<f64>> = serde_json::from_str(&s).unwrap();
        assert_eq!(back[1], Some(1.0 / 3.0));
    }

    #[test]
    fn csv_dialect() {
        let bytes = field_csv_bytes(&[0.0, 0.5], &[C64::new(1.0, -2.0), C64::new(0.25, 0.0)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("y,re,im\n") && !text.contains('\r'));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, &text).unwrap();
        let (ys, zs) = read_field_csv(&p).unwrap();
        assert_eq!(ys, vec![0.0, 0.5]);
        assert_eq!(zs[0], C64::new(1.0, -2.0));
    }

    #[test]
    fn writer_records_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write_bytes("a/b.bin", b"abc").unwrap();
        assert_eq!(w.entries()[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let m = RunManifest {
            version: "0".into(),
            config: serde_json::Value::Null,
            profile: String::new(),
            profile_hash: String::new(),
            grid: GridInfo { n: 1, period: 1.0 },
            constants: RunConstants::default(),
            cutoff: String::new(),
            wall_clock_seconds: 0.0,
            complete: true,
            error: None,
            artifacts: w.entries().to_vec(),
        };
        let p = write_manifest(dir.path(), &m).unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back, m);
        assert!(back.verify(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a/b.bin"), b"abd").unwrap();
        assert_eq!(back.verify(dir.path()).unwrap(), vec!["a/b.bin".to_string()]);
    }

    proptest! {
        #[test]
        fn block_round_trip(vals in proptest::collection::vec((-1e300f64..1e300, -1e300f64..1e300), 0..40)) {
            let z: Vec<C64> = vals.iter().map(|&(a, b)| C64::new(a, b)).collect();
            let enc = encode_block(&z);
            let (dec, rest) = decode_block(&enc).unwrap();
            prop_assert_eq!(dec, z);
            prop_assert!(rest.is_empty());
        }

        #[test]
        fn json_float_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = to_json_string(&x).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}

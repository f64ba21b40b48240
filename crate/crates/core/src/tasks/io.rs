//! Binary and CSV embedding files.
//!
//! Binary layout, little-endian: `b"TIMB"`, `u16` version (1), `u32` dim,
//! `u64` count, `u32` number of classes, then `count` records of
//! `u32` label followed by `dim` `f32` values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::EmbeddingBank;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TIMB";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8 + 4;

pub fn write_embeddings(bank: &EmbeddingBank, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(bank.dim() as u32).to_le_bytes())?;
    out.write_all(&(bank.len() as u64).to_le_bytes())?;
    out.write_all(&(bank.num_classes() as u32).to_le_bytes())?;
    for i in 0..bank.len() {
        out.write_all(&bank.labels()[i].to_le_bytes())?;
        for v in bank.row(i) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingBank> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let truncated = |reason: String| Error::Truncated {
        path: path.to_path_buf(),
        reason,
    };

    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(format("bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let num_classes = u32::from_le_bytes(bytes[18..22].try_into().unwrap());
    if dim == 0 {
        return Err(format("dimension is zero".into()));
    }

    let record = 4 + 4 * dim;
    let body = bytes.len() - HEADER_LEN;
    let expected = (count as u128) * record as u128;
    if (body as u128) < expected {
        return Err(truncated(format!(
            "header declares {count} records of {record} bytes, body has {body} bytes"
        )));
    }
    if body as u128 != expected {
        return Err(format(format!(
            "{} trailing bytes after {count} records of dimension {dim}",
            body as u128 - expected
        )));
    }

    let count = count as usize;
    let mut labels = Vec::with_capacity(count);
    let mut features = Vec::with_capacity(count * dim);
    for rec in bytes[HEADER_LEN..].chunks_exact(record) {
        let label = u32::from_le_bytes(rec[..4].try_into().unwrap());
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: label as u64,
                num_classes: num_classes as u64,
            });
        }
        labels.push(label);
        features.extend(
            rec[4..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
    }
    EmbeddingBank::new(dim, num_classes as usize, labels, features)
}

/// Reads a CSV with header `label,f0,…,f{d-1}`. The number of classes is
/// one more than the largest label.
pub fn read_csv_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingBank> {
    let path = path.as_ref();
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let dim = header.len().saturating_sub(1);
    if dim == 0 || &header[0] != "label" {
        return Err(format("header must be label,f0,...,f{d-1}".into()));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(format(format!(
                "column {} is {name:?}, expected f{j}",
                j + 1
            )));
        }
    }

    let mut labels = Vec::new();
    let mut features = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: dim + 1,
                actual: rec.len(),
            });
        }
        let label: u32 = rec[0]
            .parse()
            .map_err(|e| format(format!("row {line}: label: {e}")))?;
        labels.push(label);
        for v in rec.iter().skip(1) {
            let x: f32 = v
                .parse()
                .map_err(|e| format(format!("row {line}: value {v:?}: {e}")))?;
            features.push(x);
        }
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    EmbeddingBank::new(dim, num_classes, labels, features)
}

/// Writes `f32` values in their shortest round-trip decimal form.
pub fn write_csv_embeddings(bank: &EmbeddingBank, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..bank.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..bank.len() {
        let mut rec = vec![bank.labels()[i].to_string()];
        rec.extend(bank.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads either format, chosen by the `.csv` extension.
pub fn read_bank(path: impl AsRef<Path>) -> Result<EmbeddingBank> {
    let path = path.as_ref();
    if is_csv(path) {
        read_csv_embeddings(path)
    } else {
        read_embeddings(path)
    }
}

/// Writes either format, chosen by the `.csv` extension.
pub fn write_bank(bank: &EmbeddingBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_csv_embeddings(bank, path)
    } else {
        write_embeddings(bank, path)
    }
}

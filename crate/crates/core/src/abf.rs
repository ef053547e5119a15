//! ABF v1, the activation-record file format.
//!
//! ```text
//! "ABF1" | u32 LE n | u32 LE record count |
//!   per record: ceil(n/8) pattern bytes (LSB-first, bit 1 = +1) | f64 LE value | f64 LE weight
//! ```
//!
//! The JSON-lines variant writes a header object followed by one object per record
//! with the same fields; patterns are bit strings, character `i` for coordinate `i`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::bits::BitPattern;
use crate::dataset::{ActivationDataset, Record};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ABF1";

pub fn write_abf<W: Write>(ds: &ActivationDataset, mut sink: W) -> Result<()> {
    sink.write_all(MAGIC)?;
    sink.write_all(&(ds.n() as u32).to_le_bytes())?;
    sink.write_all(&(ds.len() as u32).to_le_bytes())?;
    for r in ds.records() {
        sink.write_all(&r.pattern.to_bytes())?;
        sink.write_all(&r.value.to_le_bytes())?;
        sink.write_all(&r.weight.to_le_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(source: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_abf<R: Read>(mut source: R) -> Result<ActivationDataset> {
    let mut head = [0u8; 12];
    read_exact_or(&mut source, &mut head, "header")?;
    if &head[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &head[..4])));
    }
    let n = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::Format("dimension 0".into()));
    }
    let pattern_len = n.div_ceil(8);
    let mut buf = vec![0u8; pattern_len + 16];
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for k in 0..count {
        read_exact_or(&mut source, &mut buf, &format!("record {k}"))?;
        let pattern = BitPattern::from_bytes(n, &buf[..pattern_len])?;
        let value = f64::from_le_bytes(buf[pattern_len..pattern_len + 8].try_into().unwrap());
        let weight = f64::from_le_bytes(buf[pattern_len + 8..].try_into().unwrap());
        if !value.is_finite() || !weight.is_finite() {
            return Err(Error::Format(format!("record {k} has a non-finite field")));
        }
        records.push(Record::weighted(pattern, value, weight));
    }
    ActivationDataset::new(n, records).map_err(|e| match e {
        Error::EmptyDataset => Error::Format("file holds no weighted records".into()),
        other => other,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    magic: String,
    n: usize,
    records: usize,
}

pub fn write_abf_jsonl<W: Write>(ds: &ActivationDataset, mut sink: W) -> Result<()> {
    let header = JsonlHeader { magic: "ABF1".into(), n: ds.n(), records: ds.len() };
    serde_json::to_writer(&mut sink, &header)?;
    sink.write_all(b"\n")?;
    for r in ds.records() {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_abf_jsonl<R: BufRead>(source: R) -> Result<ActivationDataset> {
    let mut lines = source.lines();
    let header: JsonlHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Format("missing header line".into())),
    };
    if header.magic != "ABF1" {
        return Err(Error::Format(format!("bad magic {:?}", header.magic)));
    }
    if header.n == 0 {
        return Err(Error::Format("dimension 0".into()));
    }
    let mut records = Vec::with_capacity(header.records);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str::<Record>(&line)?);
    }
    if records.len() != header.records {
        return Err(Error::Format(format!(
            "header announces {} records, found {}",
            header.records,
            records.len()
        )));
    }
    ActivationDataset::new(header.n, records)
}

//! On-disk formats: datasets (CSV and compact binary) and parameter checkpoints.
//!
//! Dataset CSV: a header line `source_id,class,f0,...`, then one sample per
//! row; `class` is `-1` for unlabeled samples. Values are written in shortest
//! round-trip form, so a write/read cycle is exact.
//!
//! Binary dataset: a 16-byte header (`FSDS`, version, sample length, count,
//! each a little-endian `u32` after the magic) followed by fixed-size records
//! of `source_id: u64`, `class: i32` and the features as `f64`.
//!
//! Checkpoint: a 16-byte prefix (`FSCK`, version, header length, reserved),
//! a JSON header with the role, layout and free-form metadata, then the flat
//! parameter vector as little-endian `f64`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use fogsynth_core::data::TrafficSample;
use fogsynth_core::nn::LayoutEntry;
use fogsynth_core::{ModelParams, Role};
use serde::{Deserialize, Serialize};

pub const DATASET_MAGIC: [u8; 4] = *b"FSDS";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FSCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// `.fsd` is binary, anything else is CSV.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("fsd") => DatasetFormat::Binary,
            _ => DatasetFormat::Csv,
        }
    }
}

fn class_field(class: Option<u32>) -> i64 {
    class.map_or(-1, i64::from)
}

fn parse_class(v: i64) -> Result<Option<u32>> {
    match v {
        -1 => Ok(None),
        c if c >= 0 && c <= i64::from(u32::MAX) => Ok(Some(c as u32)),
        c => bail!("class id {c} is out of range"),
    }
}

pub fn write_csv<W: Write>(out: W, samples: &[TrafficSample]) -> Result<()> {
    let mut out = BufWriter::new(out);
    let len = samples.first().map_or(0, TrafficSample::len);
    write!(out, "source_id,class")?;
    for i in 0..len {
        write!(out, ",f{i}")?;
    }
    writeln!(out)?;
    for s in samples {
        ensure!(s.len() == len, "samples have different lengths");
        write!(out, "{},{}", s.source_id, class_field(s.true_class))?;
        for v in s.features() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TrafficSample>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().context("empty dataset file")??;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let width = names.len();
    ensure!(
        names.starts_with(&["source_id", "class"]),
        "dataset header must start with `source_id,class`"
    );
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = n + 2;
        let fields: Vec<&str> = line.split(',').collect();
        ensure!(
            fields.len() == width,
            "line {row}: expected {width} fields, found {}",
            fields.len()
        );
        let source_id = fields[0]
            .trim()
            .parse()
            .with_context(|| format!("line {row}: source_id"))?;
        let class = parse_class(fields[1].trim().parse().with_context(|| format!("line {row}: class"))?)?;
        let features = fields[2..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("line {row}: feature value"))?;
        out.push(TrafficSample::new(features, class, source_id).with_context(|| format!("line {row}"))?);
    }
    Ok(out)
}

pub fn write_binary<W: Write>(out: W, samples: &[TrafficSample]) -> Result<()> {
    let mut out = BufWriter::new(out);
    let len = samples.first().map_or(0, TrafficSample::len);
    out.write_all(&DATASET_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&u32::try_from(len)?.to_le_bytes())?;
    out.write_all(&u32::try_from(samples.len())?.to_le_bytes())?;
    for s in samples {
        ensure!(s.len() == len, "samples have different lengths");
        out.write_all(&s.source_id.to_le_bytes())?;
        out.write_all(&i32::try_from(class_field(s.true_class))?.to_le_bytes())?;
        for v in s.features() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<TrafficSample>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    ensure!(
        bytes.len() >= 16 && bytes[..4] == DATASET_MAGIC,
        "not a binary dataset file"
    );
    let version = u32_at(&bytes, 4);
    ensure!(version == FORMAT_VERSION, "unsupported dataset version {version}");
    let len = u32_at(&bytes, 8) as usize;
    let count = u32_at(&bytes, 12) as usize;
    let record = 12 + 8 * len;
    ensure!(
        bytes.len() == 16 + record * count,
        "binary dataset is {} bytes, header implies {}",
        bytes.len(),
        16 + record * count
    );
    let mut out = Vec::with_capacity(count);
    for r in bytes[16..].chunks_exact(record) {
        let source_id = u64::from_le_bytes(r[..8].try_into()?);
        let class = parse_class(i64::from(i32::from_le_bytes(r[8..12].try_into()?)))?;
        let features = r[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(TrafficSample::new(features, class, source_id)?);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, samples: &[TrafficSample]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    match DatasetFormat::for_path(path) {
        DatasetFormat::Csv => write_csv(file, samples),
        DatasetFormat::Binary => write_binary(file, samples),
    }
    .with_context(|| format!("writing {}", path.display()))
}

/// Reads either format; binary files are recognized by their magic.
pub fn read_dataset(path: &Path) -> Result<Vec<TrafficSample>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(&DATASET_MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        read_csv(bytes.as_slice())
    }
    .with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    role: Role,
    layout: Vec<LayoutEntry>,
    values: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Parameters plus whatever the owner needs to rebuild the model around them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(params: &ModelParams, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CheckpointHeader {
        role: params.role(),
        layout: params.layout().to_vec(),
        values: params.len(),
        meta: meta.clone(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 8 * params.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(header.len())?.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&header);
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    ensure!(
        bytes.len() >= 16 && bytes[..4] == CHECKPOINT_MAGIC,
        "not a checkpoint file"
    );
    let version = u32_at(bytes, 4);
    ensure!(version == FORMAT_VERSION, "unsupported checkpoint version {version}");
    let header_len = u32_at(bytes, 8) as usize;
    let body = bytes.get(16..16 + header_len).context("truncated checkpoint header")?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let values = &bytes[16 + header_len..];
    ensure!(
        values.len() == 8 * header.values,
        "checkpoint holds {} value bytes, header declares {} values",
        values.len(),
        header.values
    );
    let values = values
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Checkpoint {
        params: ModelParams::new(values, header.layout, header.role)?,
        meta: header.meta,
    })
}

pub fn write_checkpoint(path: &Path, params: &ModelParams, meta: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_checkpoint(params, meta)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_checkpoint(&bytes).with_context(|| format!("parsing {}", path.display()))
}

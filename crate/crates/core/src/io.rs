//! On-disk formats: the `RGCD` dataset file, the `RGCM` checkpoint file,
//! binary PGM images and CSV reports. All integers and floats are little-endian.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::analysis::{FilterReport, Grid};
use crate::cnn::model::{Architecture, CnnModel, PARAM_NAMES};
use crate::cnn::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rgc::{LabeledDataset, RgcModel, SubunitKernel};
use crate::stimulus::Frame;
use crate::training::TrainHistory;

pub const DATASET_MAGIC: &[u8; 4] = b"RGCD";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RGCM";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes before the first frame in a dataset file.
pub const DATASET_HEADER_LEN: u64 = 26;

pub const TAG_CNN_LAYER: u8 = 1;
pub const TAG_TRUTH_KERNEL: u8 = 2;
pub const TAG_SCALAR: u8 = 3;

/// Byte cursor that reports where and what it failed to read.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.buf.len() as u64,
                expected: format!("{n} bytes of {what} at byte {}", self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }
}

fn parse_err(offset: u64, expected: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        expected: expected.into(),
    }
}

/// Total file size implied by a dataset header.
pub fn dataset_file_len(n_samples: u64, height: u64, width: u64, has_rates: bool) -> u64 {
    DATASET_HEADER_LEN + n_samples * (height * width + 1 + if has_rates { 8 } else { 0 })
}

/// Serializes a dataset to bytes.
pub fn encode_dataset(data: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_dataset_to(&mut out, data).expect("writing to a Vec cannot fail");
    out
}

fn write_dataset_to<W: Write>(w: &mut W, data: &LabeledDataset) -> Result<()> {
    let (width, height) = data.frame_dims().unwrap_or((0, 0));
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&[0u8, u8::from(data.rates().is_some())])?;
    let mut row = Vec::with_capacity(width * height);
    for f in data.frames() {
        row.clear();
        row.extend(f.pixels().iter().map(|&p| u8::from(p > 0)));
        w.write_all(&row)?;
    }
    w.write_all(data.labels())?;
    if let Some(rates) = data.rates() {
        for r in rates {
            w.write_all(&r.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut c = Cursor::new(bytes);
    if c.take(4, "magic")? != DATASET_MAGIC {
        return Err(parse_err(0, "magic \"RGCD\""));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(parse_err(4, format!("version {FORMAT_VERSION}, found {version}")));
    }
    let n = c.u64("sample count")?;
    let height = u64::from(c.u32("height")?);
    let width = u64::from(c.u32("width")?);
    let kind_at = c.offset();
    let kind = c.u8("label kind")?;
    if kind != 0 {
        return Err(parse_err(kind_at, format!("label kind 0 (spike counts), found {kind}")));
    }
    let rates_at = c.offset();
    let has_rates = match c.u8("rates flag")? {
        0 => false,
        1 => true,
        other => return Err(parse_err(rates_at, format!("rates flag 0 or 1, found {other}"))),
    };
    if n > 0 && (height == 0 || width == 0) {
        return Err(parse_err(12, "non-zero frame height and width"));
    }
    let expected_len = height
        .checked_mul(width)
        .and_then(|px| px.checked_add(1 + if has_rates { 8 } else { 0 }))
        .and_then(|per| per.checked_mul(n))
        .and_then(|body| body.checked_add(DATASET_HEADER_LEN))
        .ok_or_else(|| parse_err(8, "a sample count whose payload size fits in 64 bits"))?;
    let actual = bytes.len() as u64;
    if actual < expected_len {
        return Err(Error::Truncated {
            offset: actual,
            expected: format!("{expected_len} bytes for {n} samples of {width}x{height}"),
        });
    }
    if actual > expected_len {
        return Err(parse_err(expected_len, format!("end of file after {expected_len} bytes")));
    }

    let (n, h, w) = (n as usize, height as usize, width as usize);
    let frame_bytes = c.take(n * h * w, "frames")?;
    if let Some(pos) = frame_bytes.iter().position(|&b| b > 1) {
        return Err(parse_err(
            DATASET_HEADER_LEN + pos as u64,
            format!("frame byte 0x00 or 0x01, found {:#04x}", frame_bytes[pos]),
        ));
    }
    let frames = frame_bytes
        .chunks_exact(h * w.max(1))
        .take(n)
        .map(|px| Frame::new(w, h, px.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect()))
        .collect::<Result<Vec<_>>>()?;
    let labels = c.take(n, "labels")?.to_vec();
    let rates = if has_rates {
        Some((0..n).map(|_| c.f64("rate")).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    LabeledDataset::new(frames, labels, rates)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// One named array in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub tag: u8,
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Record {
    fn tensor(tag: u8, name: &str, t: &Tensor) -> Self {
        Record {
            tag,
            name: name.to_string(),
            dims: t.shape().iter().map(|&d| d as u32).collect(),
            data: t.data().to_vec(),
        }
    }

    fn scalar(name: impl Into<String>, value: f64) -> Self {
        Record {
            tag: TAG_SCALAR,
            name: name.into(),
            dims: Vec::new(),
            data: vec![value],
        }
    }
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(Error::Config(format!("duplicate record name {:?}", r.name)));
        }
        let expected: usize = r.dims.iter().map(|&d| d as usize).product();
        if expected != r.data.len() || r.dims.len() > u8::MAX as usize {
            return Err(Error::Shape(format!(
                "record {:?}: dims {:?} vs {} values",
                r.name,
                r.dims,
                r.data.len()
            )));
        }
        out.push(r.tag);
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dims.len() as u8);
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor::new(bytes);
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(parse_err(0, "magic \"RGCM\""));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(parse_err(4, format!("version {FORMAT_VERSION}, found {version}")));
    }
    let count = c.u32("record count")?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let tag_at = c.offset();
        let tag = c.u8("record tag")?;
        if !(TAG_CNN_LAYER..=TAG_SCALAR).contains(&tag) {
            return Err(parse_err(tag_at, format!("record tag 1, 2 or 3, found {tag}")));
        }
        let len = c.u32("name length")? as usize;
        let name_at = c.offset();
        let name = std::str::from_utf8(c.take(len, "record name")?)
            .map_err(|_| parse_err(name_at, "UTF-8 record name"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(parse_err(name_at, format!("unique record name, {name:?} repeats")));
        }
        let rank = c.u8("rank")? as usize;
        let dims = (0..rank).map(|_| c.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let count_at = c.offset();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Truncated {
                offset: bytes.len() as u64,
                expected: format!("payload of {name:?} with dims {dims:?} at byte {count_at}"),
            })?;
        let data = (0..n).map(|_| c.f64("payload value")).collect::<Result<Vec<_>>>()?;
        records.push(Record { tag, name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(parse_err(c.offset(), "end of file after the last record"));
    }
    Ok(records)
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Cnn(CnnModel),
    Truth(RgcModel),
}

pub fn cnn_records(model: &CnnModel) -> Vec<Record> {
    model
        .tensors()
        .iter()
        .map(|(name, t)| Record::tensor(TAG_CNN_LAYER, name, t))
        .collect()
}

pub fn truth_records(model: &RgcModel) -> Vec<Record> {
    let mut out = Vec::new();
    for (i, s) in model.subunits.iter().enumerate() {
        out.push(Record {
            tag: TAG_TRUTH_KERNEL,
            name: format!("subunit.{i}"),
            dims: vec![s.size as u32, s.size as u32],
            data: s.weights.clone(),
        });
        out.push(Record::scalar(format!("subunit.{i}.center_row"), s.center_row as f64));
        out.push(Record::scalar(format!("subunit.{i}.center_col"), s.center_col as f64));
        out.push(Record::scalar(format!("subunit.{i}.pooling_weight"), model.pooling_weights[i]));
    }
    out.push(Record::scalar("output_threshold", model.output_threshold));
    out.push(Record::scalar("gain", model.gain));
    out
}

pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let records = match checkpoint {
        Checkpoint::Cnn(m) => cnn_records(m),
        Checkpoint::Truth(m) => truth_records(m),
    };
    std::fs::write(path, encode_records(&records)?)?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let records = decode_records(bytes)?;
    let end = bytes.len() as u64;
    let has = |tag| records.iter().any(|r| r.tag == tag);
    match (has(TAG_CNN_LAYER), has(TAG_TRUTH_KERNEL)) {
        (true, false) => cnn_from_records(&records, end).map(Checkpoint::Cnn),
        (false, true) => truth_from_records(&records, end).map(Checkpoint::Truth),
        (true, true) => Err(parse_err(12, "either network layers or truth kernels, not both")),
        (false, false) => Err(parse_err(12, "at least one layer or kernel record")),
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Reads a checkpoint that must hold a network.
pub fn read_cnn(path: impl AsRef<Path>) -> Result<CnnModel> {
    match read_checkpoint(path)? {
        Checkpoint::Cnn(m) => Ok(m),
        Checkpoint::Truth(_) => Err(parse_err(12, "network layer records, found a truth model")),
    }
}

/// Reads a checkpoint that must hold a ground-truth cell.
pub fn read_truth(path: impl AsRef<Path>) -> Result<RgcModel> {
    match read_checkpoint(path)? {
        Checkpoint::Truth(m) => Ok(m),
        Checkpoint::Cnn(_) => Err(parse_err(12, "truth kernel records, found a network")),
    }
}

fn find<'a>(records: &'a [Record], name: &str, end: u64) -> Result<&'a Record> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| parse_err(end, format!("a record named {name:?}")))
}

fn cnn_from_records(records: &[Record], end: u64) -> Result<CnnModel> {
    let dims = |name: &str, rank: usize| -> Result<Vec<usize>> {
        let r = find(records, name, end)?;
        if r.dims.len() != rank || r.tag != TAG_CNN_LAYER {
            return Err(parse_err(end, format!("{name:?} as a rank-{rank} layer record")));
        }
        Ok(r.dims.iter().map(|&d| d as usize).collect())
    };
    let c1 = dims(PARAM_NAMES[0], 4)?;
    let c2 = dims(PARAM_NAMES[2], 4)?;
    let d = dims(PARAM_NAMES[4], 3)?;
    if c1[2] == 0 || c2[2] == 0 {
        return Err(parse_err(end, "non-empty convolution filters"));
    }
    let arch = Architecture {
        input_height: d[1] + c1[2] + c2[2] - 2,
        input_width: d[2] + c1[3] + c2[3] - 2,
        conv1_filters: c1[0],
        conv1_size: c1[2],
        conv2_filters: c2[0],
        conv2_size: c2[2],
    };
    let tensors = PARAM_NAMES
        .iter()
        .map(|&name| {
            let r = find(records, name, end)?;
            Tensor::new(r.dims.iter().map(|&d| d as usize).collect(), r.data.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let tensors: [Tensor; 6] = tensors.try_into().expect("six names");
    CnnModel::from_tensors(arch, tensors).map_err(|e| parse_err(end, format!("consistent layer shapes ({e})")))
}

fn truth_from_records(records: &[Record], end: u64) -> Result<RgcModel> {
    let scalar = |name: &str| -> Result<f64> {
        let r = find(records, name, end)?;
        if r.tag != TAG_SCALAR || r.data.len() != 1 {
            return Err(parse_err(end, format!("{name:?} as a scalar record")));
        }
        Ok(r.data[0])
    };
    let index = |v: f64, name: &str| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(parse_err(end, format!("{name:?} as a non-negative integer, found {v}")))
        }
    };
    let n = records.iter().filter(|r| r.tag == TAG_TRUTH_KERNEL).count();
    let mut subunits = Vec::with_capacity(n);
    let mut pooling = Vec::with_capacity(n);
    for i in 0..n {
        let k = find(records, &format!("subunit.{i}"), end)?;
        if k.dims.len() != 2 || k.dims[0] != k.dims[1] {
            return Err(parse_err(end, format!("subunit.{i} as a square kernel")));
        }
        let row_name = format!("subunit.{i}.center_row");
        let col_name = format!("subunit.{i}.center_col");
        let row = index(scalar(&row_name)?, &row_name)?;
        let col = index(scalar(&col_name)?, &col_name)?;
        subunits.push(SubunitKernel::new(row, col, k.dims[0] as usize, k.data.clone())?);
        pooling.push(scalar(&format!("subunit.{i}.pooling_weight"))?);
    }
    RgcModel::new(subunits, pooling, scalar("output_threshold")?, scalar("gain")?)
}

/// Binary 8-bit PGM of a grid, linearly mapped from `[min, max]` to
/// `[0, 255]`; a constant grid maps to 128.
pub fn encode_pgm(grid: &Grid) -> Result<Vec<u8>> {
    if grid.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot render a grid with non-finite values".into()));
    }
    let (lo, hi) = grid
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    out.extend(grid.values.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    std::fs::write(path, encode_pgm(grid)?)?;
    Ok(())
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_cc";

/// Per-epoch metrics as CSV, floats written with 17 significant digits.
pub fn encode_metrics_csv(history: &TrainHistory) -> Result<String> {
    if history.records.is_empty() {
        return Err(Error::Config("no epochs to write".into()));
    }
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in &history.records {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_cc
        ));
    }
    Ok(out)
}

pub fn write_metrics_csv(path: impl AsRef<Path>, history: &TrainHistory) -> Result<()> {
    let text = encode_metrics_csv(history)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub const FILTER_REPORT_HEADER: &str =
    "filter,norm,effective,crop_row,crop_col,subunit,ncc,shift_row,shift_col,sign";

pub fn encode_filter_report(report: &FilterReport) -> String {
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    let mut out = String::from(FILTER_REPORT_HEADER);
    out.push('\n');
    for e in &report.entries {
        out.push_str(&format!(
            "{},{:.16e},{},{},{},{},{},{},{},{}\n",
            e.index,
            e.norm,
            u8::from(e.effective),
            opt(e.crop_origin.map(|o| o.0)),
            opt(e.crop_origin.map(|o| o.1)),
            opt(e.subunit),
            e.ncc.map(|v| format!("{v:.16e}")).unwrap_or_default(),
            opt(e.shift.map(|s| s.0)),
            opt(e.shift.map(|s| s.1)),
            opt(e.sign),
        ));
    }
    out
}

pub fn write_filter_report(path: impl AsRef<Path>, report: &FilterReport) -> Result<()> {
    std::fs::write(path, encode_filter_report(report))?;
    Ok(())
}

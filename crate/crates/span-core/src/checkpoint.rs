//! Parameter checkpoint file.
//!
//! Layout: magic "SPANCKPT", format version u32, then per-parameter records
//! (name length u16, UTF-8 name, rank u8, extents u32 each, f64 values),
//! all little-endian. Records run to end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SpanError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPANCKPT";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    let file = File::create(path).map_err(|e| SpanError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let ioerr = |e| SpanError::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(ioerr)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(ioerr)?;
    for (name, tensor) in params {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(SpanError::Contract(format!("parameter name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(ioerr)?;
        w.write_all(bytes).map_err(ioerr)?;
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(SpanError::Contract(format!("parameter rank too large: {name}")));
        }
        w.write_all(&[shape.len() as u8]).map_err(ioerr)?;
        for &e in &shape {
            w.write_all(&(e as u32).to_le_bytes()).map_err(ioerr)?;
        }
        tensor.with_data(|d| -> std::io::Result<()> {
            for v in d {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })
        .map_err(ioerr)?;
    }
    w.flush().map_err(ioerr)?;
    Ok(())
}

/// A raw loaded record; callers bind these to model tensors by name.
#[derive(Debug, Clone)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn load(path: &Path) -> Result<Vec<ParamRecord>> {
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| SpanError::io(&pstr, e))?;
    load_reader(BufReader::new(file), &pstr)
}

/// Parse checkpoint bytes already in memory (browser uploads, tests).
pub fn load_bytes(bytes: &[u8], label: &str) -> Result<Vec<ParamRecord>> {
    load_reader(std::io::Cursor::new(bytes), label)
}

fn load_reader(mut r: impl Read, pstr: &str) -> Result<Vec<ParamRecord>> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, pstr, "magic")?;
    if &magic != MAGIC {
        return Err(SpanError::data(pstr, "bad magic, not a SPANCKPT file"));
    }
    let version = read_u32(&mut r, pstr, "version")?;
    if version != VERSION {
        return Err(SpanError::data(
            pstr,
            format!("unsupported checkpoint version {version}"),
        ));
    }

    let mut records = Vec::new();
    loop {
        let mut len_bytes = [0u8; 2];
        match r.read(&mut len_bytes) {
            Ok(0) => break, // clean EOF between records
            Ok(1) => {
                // half a length prefix: torn file
                return Err(SpanError::data(pstr, "truncated record header"));
            }
            Ok(_) => {}
            Err(e) => return Err(SpanError::io(pstr, e)),
        }
        let name_len = u16::from_le_bytes(len_bytes) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, pstr, "parameter name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| SpanError::data(pstr, "parameter name is not UTF-8"))?;
        let mut rank_byte = [0u8; 1];
        read_exact(&mut r, &mut rank_byte, pstr, "rank")?;
        let mut shape = Vec::with_capacity(rank_byte[0] as usize);
        for _ in 0..rank_byte[0] {
            shape.push(read_u32(&mut r, pstr, "extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(SpanError::data(pstr, format!("zero extent in {name}")));
        }
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf, pstr, "value")?;
            data.push(f64::from_le_bytes(buf));
        }
        records.push(ParamRecord { name, shape, data });
    }
    Ok(records)
}

/// Copy loaded records into named model tensors. Every record must match
/// an entry by name and shape, and vice versa.
pub fn apply(records: &[ParamRecord], params: &[(String, Tensor)]) -> Result<()> {
    if records.len() != params.len() {
        return Err(SpanError::Config(format!(
            "checkpoint has {} parameters, model expects {}",
            records.len(),
            params.len()
        )));
    }
    for (name, tensor) in params {
        let rec = records
            .iter()
            .find(|r| &r.name == name)
            .ok_or_else(|| SpanError::Config(format!("checkpoint missing parameter {name}")))?;
        if rec.shape != tensor.shape() {
            return Err(SpanError::Config(format!(
                "checkpoint parameter {name} has shape {:?}, model expects {:?}",
                rec.shape,
                tensor.shape()
            )));
        }
        tensor.set_data(&rec.data)?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &str, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| SpanError::data(path, format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, path: &str, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path, what)?;
    Ok(u32::from_le_bytes(buf))
}

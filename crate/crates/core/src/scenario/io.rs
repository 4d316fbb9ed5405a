//! Field files.
//!
//! A CEXF1 record is a 64-byte ASCII header
//! `CEXF1 <n> <N> x1,y1,...,xn,yn <count>`, padded with spaces and terminated
//! by a newline, followed by `count` little-endian `f64` values in row-major
//! order. A metric bundle is a sequence of records holding the real and then
//! the imaginary part of each upper-triangular entry `g_{i jbar}`, `i <= j`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::HermitianMetricField;
use crate::grid::{ComplexField, GridSpec, ScalarField};

pub const HEADER_LEN: usize = 64;
const MAGIC: &str = "CEXF1";

fn axis_labels(dim: usize) -> String {
    (1..=dim).map(|j| format!("x{j},y{j}")).collect::<Vec<_>>().join(",")
}

fn header(spec: GridSpec) -> Result<[u8; HEADER_LEN]> {
    let text = format!("{MAGIC} {} {} {} {}", spec.dim(), spec.points(), axis_labels(spec.dim()), spec.len());
    if text.len() >= HEADER_LEN {
        return Err(Error::Format(format!("header for n = {} does not fit in {HEADER_LEN} bytes", spec.dim())));
    }
    let mut out = [b' '; HEADER_LEN];
    out[..text.len()].copy_from_slice(text.as_bytes());
    out[HEADER_LEN - 1] = b'\n';
    Ok(out)
}

fn parse_header(raw: &[u8; HEADER_LEN]) -> Result<GridSpec> {
    if raw[HEADER_LEN - 1] != b'\n' {
        return Err(Error::Format("header is not newline-terminated".into()));
    }
    let text = std::str::from_utf8(&raw[..HEADER_LEN - 1]).map_err(|_| Error::Format("header is not ASCII".into()))?;
    let parts: Vec<&str> = text.split_whitespace().collect();
    let [magic, n, pts, axes, count] = parts[..] else {
        return Err(Error::Format(format!("expected 5 header fields, found {}", parts.len())));
    };
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad {what} {s:?}")));
    let spec = GridSpec::new(num(n, "dimension")?, num(pts, "grid size")?).map_err(|e| Error::Format(e.to_string()))?;
    if axes != axis_labels(spec.dim()) {
        return Err(Error::Format(format!("unexpected axis order {axes:?}")));
    }
    if num(count, "count")? != spec.len() {
        return Err(Error::ShapeMismatch);
    }
    Ok(spec)
}

pub fn encode_field<W: Write>(f: &ScalarField, out: &mut W) -> Result<()> {
    out.write_all(&header(f.spec())?)?;
    let mut bytes = Vec::with_capacity(8 * f.values().len());
    for v in f.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Reads one record. Returns `Ok(None)` at a clean end of input.
pub fn decode_field<R: Read>(input: &mut R) -> Result<Option<ScalarField>> {
    let mut raw = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        let k = input.read(&mut raw[filled..])?;
        if k == 0 {
            break;
        }
        filled += k;
    }
    match filled {
        0 => return Ok(None),
        HEADER_LEN => {}
        _ => return Err(Error::Format("truncated header".into())),
    }
    let spec = parse_header(&raw)?;
    let mut bytes = vec![0u8; 8 * spec.len()];
    input.read_exact(&mut bytes).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::ShapeMismatch,
        _ => Error::Io(e),
    })?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    ScalarField::from_values(spec, values).map(Some)
}

pub fn write_field(f: &ScalarField, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_field(f, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Reads a single-record file; trailing bytes are a shape mismatch.
pub fn read_field(path: &Path) -> Result<ScalarField> {
    let mut input = BufReader::new(File::open(path)?);
    let field = decode_field(&mut input)?.ok_or_else(|| Error::Format("empty file".into()))?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::ShapeMismatch);
    }
    Ok(field)
}

/// CSV with header `x1,y1,...,xn,yn,value` and one row per grid point.
pub fn write_csv(f: &ScalarField, path: &Path) -> Result<()> {
    let spec = f.spec();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{},value", axis_labels(spec.dim()))?;
    for (index, v) in f.values().iter().enumerate() {
        for x in spec.coordinates(index) {
            write!(out, "{x},")?;
        }
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metric(g: &HermitianMetricField, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for i in 0..g.dim() {
        for j in i..g.dim() {
            encode_field(&g.entry(i, j).re(), &mut out)?;
            encode_field(&g.entry(i, j).im(), &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_metric(path: &Path) -> Result<HermitianMetricField> {
    let mut input = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    while let Some(f) = decode_field(&mut input)? {
        records.push(f);
    }
    let spec = records.first().ok_or_else(|| Error::Format("empty metric file".into()))?.spec();
    let n = spec.dim();
    if records.len() != n * (n + 1) || records.iter().any(|r| r.spec() != spec) {
        return Err(Error::ShapeMismatch);
    }
    let mut entries = vec![ComplexField::zeros(spec); n * n];
    let mut pairs = records.chunks_exact(2);
    for i in 0..n {
        for j in i..n {
            let pair = pairs.next().expect("count checked");
            let z = ComplexField::from_parts(&pair[0], &pair[1]);
            entries[j * n + i] = z.conj();
            entries[i * n + j] = z;
        }
    }
    HermitianMetricField::new(spec, entries)
}

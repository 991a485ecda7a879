//! Artifact framing shared by every binary file: an 8-byte magic, a
//! little-endian `u32` header length, a UTF-8 `key=value` header, then a
//! payload of little-endian `f64`s. Plus the plain PGM writer.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::voronoi::DensityField;

/// Ordered `key=value` header. Keys keep insertion order on output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn extend(&mut self, other: &Header) -> &mut Self {
        self.entries.extend(other.entries.iter().cloned());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("header is missing `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("header `{key}` = `{raw}` does not parse")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries.iter().cloned().collect()
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// The header as `# key=value` lines for CSV outputs.
    pub fn to_comment(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("# {k}={v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut h = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
            h.push(k.trim(), v.trim());
        }
        Ok(h)
    }
}

pub fn write_header(w: &mut impl Write, magic: &[u8; 8], header: &Header) -> Result<()> {
    let text = header.to_text();
    let len = u32::try_from(text.len())
        .map_err(|_| Error::Format("header longer than 4 GiB".into()))?;
    w.write_all(magic)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_header(r: &mut impl Read, magic: &[u8; 8]) -> Result<Header> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut text = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    Header::from_text(&text)
}

pub fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Writes a density field as plain PGM (P2). Rows run top to bottom, solid
/// material is black (0) and void white (255).
pub fn write_pgm(w: &mut impl Write, field: &DensityField, comment: &Header) -> Result<()> {
    writeln!(w, "P2")?;
    for (k, v) in comment.entries() {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{} {}", field.nx, field.ny)?;
    writeln!(w, "255")?;
    for iy in (0..field.ny).rev() {
        let row: Vec<String> = (0..field.nx)
            .map(|ix| {
                let g = (255.0 * (1.0 - field.get(ix, iy).clamp(0.0, 1.0))).round() as u8;
                g.to_string()
            })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

//! Params file format, version 1:
//!
//! ```text
//! 8 bytes   magic "FIPMPAR\0"
//! u32 LE    format version
//! u32 LE    header length H
//! H bytes   JSON header {"format_version", "layout", "len"}
//! len x f64 little-endian parameter values in layout order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, Params};
use crate::error::{Error, Result};

pub const PARAMS_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FIPMPAR\0";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layout: Layout,
    len: usize,
}

impl Params {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            format_version: PARAMS_FORMAT_VERSION,
            layout: self.layout().clone(),
            len: self.len(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&PARAMS_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MalformedParams("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != PARAMS_FORMAT_VERSION {
            return Err(Error::MalformedParams(format!(
                "unsupported version {version}"
            )));
        }
        r.read_exact(&mut word)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let expected = Layout::new(header.layout.spec.clone(), header.layout.classes())?;
        if expected != header.layout || header.len != header.layout.len {
            return Err(Error::MalformedParams("inconsistent layout header".into()));
        }
        let mut values = Vec::with_capacity(header.len);
        let mut buf = [0u8; 8];
        for _ in 0..header.len {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Params::from_values(header.layout, values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

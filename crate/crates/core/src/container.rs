//! Versioned binary container for trained models.
//!
//! All integers are little-endian.
//!
//! ```text
//! "VENTUSM1"                         8 bytes
//! version: u32                       currently 1
//! kind:    u32 length + UTF-8        "tide", "tide-ensemble", "grid", "bias"
//! count:   u32                       number of sections
//! per section:
//!   name:   u32 length + UTF-8
//!   config: u64 length + UTF-8       TOML echo of the section's configuration
//!   params: u64 count + count * f64  parameter blob
//! ```
//!
//! Trailing bytes after the last section are rejected.

use std::path::Path;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"VENTUSM1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub config: String,
    pub params: Vec<f64>,
}

impl Section {
    pub fn new(name: impl Into<String>, config: impl Into<String>, params: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            config: config.into(),
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub kind: String,
    pub sections: Vec<Section>,
}

impl ModelContainer {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::MissingEntry(format!("model section `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "expected a `{kind}` model, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        put_str32(&mut out, &self.kind);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            put_str32(&mut out, &s.name);
            out.extend_from_slice(&(s.config.len() as u64).to_le_bytes());
            out.extend_from_slice(s.config.as_bytes());
            out.extend_from_slice(&(s.params.len() as u64).to_le_bytes());
            for p in &s.params {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8).unwrap_or(&bytes[..bytes.len().min(8)]);
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(MODEL_MAGIC).into(),
                found: String::from_utf8_lossy(magic).into(),
            });
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model version {version} (expected {MODEL_VERSION})"
            )));
        }
        let kind = r.string(4)?;
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string(4)?;
            let config = r.string(8)?;
            let n = r.u64()? as usize;
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::invalid("parameter count overflows"))?,
            )?;
            let params = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            sections.push(Section {
                name,
                config,
                params,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::PayloadLength {
                expected: r.pos,
                found: bytes.len(),
            });
        }
        Ok(Self { kind, sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| e.context(path.display().to_string()))
    }
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::PayloadLength {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, width: usize) -> Result<String> {
        let n = if width == 4 {
            self.u32()? as usize
        } else {
            self.u64()? as usize
        };
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::invalid("model container string is not UTF-8"))
    }
}

/// Parses a TOML config echo stored in a section.
pub fn parse_config<T: serde::de::DeserializeOwned>(section: &Section) -> Result<T> {
    toml::from_str(&section.config)
        .map_err(|e| Error::Config(format!("section `{}`: {e}", section.name)))
}

pub fn config_echo<T: serde::Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config types serialize to TOML")
}

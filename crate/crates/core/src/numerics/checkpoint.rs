//! Parameter checkpoints.
//!
//! Layout: a text manifest
//!
//! ```text
//! BLASTOSEG-CHECKPOINT 1
//! meta <key> <value>
//! tensor <name> <n> <c> <h> <w> <byte offset>
//! end
//! ```
//!
//! followed by the tensors as little-endian `f32`, offsets relative to the
//! first payload byte.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::{Shape, Tensor4D};
use crate::scalar::Scalar;

pub const MAGIC: &str = "BLASTOSEG-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor4D<T>)>,
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Checkpoint(format!("{kind} {s:?} must be a non-empty token without whitespace")));
    }
    Ok(())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Checkpoint {
            metadata: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor4D<T>> {
        self.tensors.iter().find(|(k, _)| k == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.metadata {
            check_token("metadata key", k)?;
            if v.contains('\n') {
                return Err(Error::Checkpoint(format!("metadata value for {k} contains a newline")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            check_token("tensor name", name)?;
            let s = t.shape();
            header.push_str(&format!("tensor {name} {} {} {} {} {offset}\n", s.n, s.c, s.h, s.w));
            offset += 4 * t.len();
        }
        header.push_str("end\n");
        out.write_all(header.as_bytes())?;
        let mut payload = Vec::with_capacity(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                let f = v.to_f32().unwrap_or(f32::NAN);
                payload.extend_from_slice(&f.to_le_bytes());
            }
        }
        out.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let mut head = line.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("missing checkpoint magic header".into()));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("unreadable checkpoint version".into()))?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version} is not supported (expected {VERSION})"
            )));
        }

        let mut metadata = Vec::new();
        let mut entries: Vec<(String, Shape, usize)> = Vec::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("manifest ends without `end`".into()));
            }
            let text = line.trim_end_matches('\n');
            if text == "end" {
                break;
            }
            if let Some(rest) = text.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                metadata.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = text.strip_prefix("tensor ") {
                let fields: Vec<&str> = rest.split(' ').collect();
                let parsed: Option<Vec<usize>> = fields.get(1..6).map(|f| f.iter().map(|v| v.parse().ok()).collect()).flatten();
                match (fields.len(), parsed) {
                    (6, Some(nums)) => entries.push((
                        fields[0].to_string(),
                        Shape::new(nums[0], nums[1], nums[2], nums[3]),
                        nums[4],
                    )),
                    _ => return Err(Error::Checkpoint(format!("malformed tensor line: {text}"))),
                }
            } else {
                return Err(Error::Checkpoint(format!("unexpected manifest line: {text}")));
            }
        }

        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset) in entries {
            let end = offset + 4 * shape.len();
            let bytes = payload
                .get(offset..end)
                .ok_or_else(|| Error::Checkpoint(format!("payload truncated for tensor {name}")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| T::narrow(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            tensors.push((name, Tensor4D::new(shape, data)?));
        }
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

impl<T: Scalar> Default for Checkpoint<T> {
    fn default() -> Self {
        Self::new()
    }
}

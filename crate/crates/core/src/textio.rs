//! Plain-text artifact files: a `key = value` header followed by named numeric blocks.
//!
//! ```text
//! kind = affine-model
//! ell = 3
//! @block A0 4 4
//! 1e0 0e0 ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Artifact {
    pub meta: BTreeMap<String, String>,
    pub blocks: Vec<(String, DMatrix<f64>)>,
}

impl Artifact {
    pub fn new(kind: &str) -> Self {
        let mut a = Self::default();
        a.set("kind", kind);
        a
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn push(&mut self, name: &str, m: DMatrix<f64>) {
        self.blocks.push((name.to_string(), m));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("artifact lacks key {key}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("artifact key {key} has an invalid value")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        let k = self.get("kind")?;
        if k != kind {
            return Err(Error::Parse(format!("expected a {kind} artifact, found {k}")));
        }
        Ok(())
    }

    pub fn block(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Parse(format!("artifact lacks block {name}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(kind) = self.meta.get("kind") {
            let _ = writeln!(out, "kind = {kind}");
        }
        for (k, v) in self.meta.iter().filter(|(k, _)| *k != "kind") {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (name, m) in &self.blocks {
            let _ = writeln!(out, "@block {name} {} {}", m.nrows(), m.ncols());
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut a = Self::default();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((no, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("@block") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::Parse(format!("line {}: malformed block header", no + 1)));
                }
                let dims = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("line {}: bad block size", no + 1)))
                };
                let (rows, cols) = (dims(parts[1])?, dims(parts[2])?);
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rno, row) = lines
                        .next()
                        .ok_or_else(|| Error::Parse(format!("block {} truncated", parts[0])))?;
                    for f in row.split_whitespace() {
                        data.push(
                            f.parse::<f64>()
                                .map_err(|e| Error::Parse(format!("line {}: {e}", rno + 1)))?,
                        );
                    }
                }
                if data.len() != rows * cols {
                    return Err(Error::Parse(format!("block {} has the wrong size", parts[0])));
                }
                a.blocks.push((parts[0].to_string(), DMatrix::from_row_slice(rows, cols, &data)));
            } else if let Some((k, v)) = line.split_once('=') {
                a.meta.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                return Err(Error::Parse(format!("line {}: unrecognised content", no + 1)));
            }
        }
        Ok(a)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut a = Artifact::new("test");
        a.set("ell", 3);
        a.set("omega", 0.1f64 + 0.2);
        a.push("m", DMatrix::from_fn(2, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 7.0)));
        a.push("empty", DMatrix::zeros(0, 4));
        let b = Artifact::from_text(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.parse::<f64>("omega").unwrap(), 0.1 + 0.2);
        b.expect_kind("test").unwrap();
        assert!(b.expect_kind("other").is_err());
    }
}

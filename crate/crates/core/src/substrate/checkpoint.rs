//! Checkpoint files shared by all learners.
//!
//! Layout: one line of JSON (header: kind, seed, model metadata, named
//! section lengths), a newline, then the concatenated little-endian f64
//! parameter payload in section order. Headers serialize with stable field
//! order so identical states produce identical bytes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub meta: serde_json::Value,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub payload: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Result<&[f64]> {
        self.header
            .sections
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.payload[i].as_slice())
            .ok_or_else(|| Error::Header(format!("missing checkpoint section '{name}'")))
    }
}

pub fn write_checkpoint(
    path: &Path,
    kind: &str,
    seed: u64,
    meta: serde_json::Value,
    sections: &[(&str, &[f64])],
) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        seed,
        meta,
        sections: sections
            .iter()
            .map(|(n, p)| Section {
                name: n.to_string(),
                len: p.len(),
            })
            .collect(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)
        .map_err(|e| Error::Header(format!("header encode: {e}")))?;
    file.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(sections.iter().map(|(_, p)| p.len() * 8).sum());
    for (_, p) in sections {
        for v in *p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Header(format!("header decode: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let body = &bytes[nl + 1..];
    let expected: usize = header.sections.iter().map(|s| s.len * 8).sum();
    if body.len() != expected {
        return Err(Error::Truncated {
            expected,
            got: body.len(),
        });
    }
    let mut payload = Vec::with_capacity(header.sections.len());
    let mut off = 0usize;
    for s in &header.sections {
        let mut v = Vec::with_capacity(s.len);
        for i in 0..s.len {
            let b: [u8; 8] = body[off + i * 8..off + i * 8 + 8].try_into().unwrap();
            v.push(f64::from_le_bytes(b));
        }
        off += s.len * 8;
        payload.push(v);
    }
    Ok(Checkpoint { header, payload })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = vec![1.0, -0.5, 3.25e-300, f64::MIN_POSITIVE];
        let b = vec![42.0; 7];
        write_checkpoint(
            &path,
            "test",
            99,
            serde_json::json!({"arch": [2, 3]}),
            &[("a", &a), ("b", &b)],
        )
        .unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.header.kind, "test");
        assert_eq!(ck.header.seed, 99);
        assert_eq!(ck.section("a").unwrap(), a.as_slice());
        assert_eq!(ck.section("b").unwrap(), b.as_slice());
        assert!(ck.section("c").is_err());
    }

    #[test]
    fn truncated_payload_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, "test", 0, serde_json::Value::Null, &[("a", &[1.0, 2.0])])
            .unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        match read_checkpoint(&path) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn identical_writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let params = vec![0.1, 0.2, 0.3];
        let meta = serde_json::json!({"hidden": [8, 8], "note": "x"});
        write_checkpoint(&p1, "k", 7, meta.clone(), &[("p", &params)]).unwrap();
        write_checkpoint(&p2, "k", 7, meta, &[("p", &params)]).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }
}

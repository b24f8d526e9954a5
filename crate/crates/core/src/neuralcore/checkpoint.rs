//! Parameter persistence. A checkpoint is one JSON header line naming the
//! format version, an arbitrary config echo, and the ordered (name, shape)
//! entry list, then a newline, then every tensor's data concatenated as raw
//! little-endian f64 in header order.

use super::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

const FORMAT: &str = "platefuse-params";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: serde_json::Value,
    entries: Vec<EntryMeta>,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
}

/// A loaded checkpoint: the config the producer echoed plus named tensors in
/// file order.
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &serde_json::Value,
    entries: &[(&str, &Tensor)],
) -> Result<()> {
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        config: config.clone(),
        entries: entries
            .iter()
            .map(|(name, t)| EntryMeta { name: name.to_string(), shape: t.shape.clone() })
            .collect(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(serde_json::to_string(&header)?.as_bytes())?;
    f.write_all(b"\n")?;
    let mut buf = Vec::new();
    for (_, t) in entries {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let payload = &bytes[nl + 1..];
    let total: usize = header.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, header promises {}",
            payload.len(),
            total * 8
        )));
    }
    let mut entries = Vec::with_capacity(header.entries.len());
    let mut off = 0usize;
    for meta in header.entries {
        let n: usize = meta.shape.iter().product();
        let data = payload[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += n * 8;
        entries.push((meta.name, Tensor::from_vec(&meta.shape, data)));
    }
    Ok(Checkpoint { config: header.config, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn roundtrip_preserves_exact_values_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net").join("params.bin");
        let a = Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 1e300]);
        let b = Tensor::from_vec(&[2], vec![0.1, 0.2]);
        let config = json!({"hidden": 8, "classes": 5});
        save_checkpoint(&path, &config, &[("w", &a), ("b", &b)]).unwrap();

        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.config, config);
        assert_eq!(ck.entries.len(), 2);
        assert_eq!(ck.entries[0].0, "w");
        assert_eq!(ck.entries[0].1, a);
        assert_eq!(ck.tensor("b").unwrap(), &b);
        assert!(ck.tensor("nope").is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let a = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        save_checkpoint(&path, &json!({}), &[("w", &a)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn header_is_human_readable_json_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let a = Tensor::from_vec(&[1], vec![7.0]);
        save_checkpoint(&path, &json!({"seed": 42}), &[("w", &a)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["format"], "platefuse-params");
        assert_eq!(header["version"], 1);
        assert_eq!(header["entries"][0]["name"], "w");
        assert_eq!(header["entries"][0]["shape"][0], 1);
    }
}

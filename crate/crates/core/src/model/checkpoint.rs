//! `rt-ckpt-1` container: a plain-text manifest followed by a contiguous
//! little-endian `f32` payload.
//!
//! ```text
//! format=rt-ckpt-1
//! <key>=<value>            (config fields, any order)
//! tensor=<name>;<d0>x<d1>..;<byte offset>;<value count>
//! payload_bytes=<n>
//! end
//! <n bytes of payload>
//! ```

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "rt-ckpt-1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("missing field `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| bad(format!("field `{key}` has invalid value `{raw}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut manifest = format!("format={FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(bad(format!("unencodable field `{k}`")));
            }
            manifest.push_str(&format!("{k}={v}\n"));
        }
        let mut offset = 0usize;
        for (name, shape, data) in &self.tensors {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            manifest.push_str(&format!(
                "tensor={name};{};{offset};{}\n",
                dims.join("x"),
                data.len()
            ));
            offset += data.len() * 4;
        }
        manifest.push_str(&format!("payload_bytes={offset}\nend\n"));
        w.write_all(manifest.as_bytes())?;
        let mut buf = Vec::with_capacity(offset);
        for (_, _, data) in &self.tensors {
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        let mut first = true;
        let mut meta = Vec::new();
        let mut entries = Vec::new();
        let mut payload_bytes = None;
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("truncated manifest"));
            }
            let l = line.trim_end_matches('\n');
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed manifest line `{l}`")))?;
            if first {
                if k != "format" || v != FORMAT_VERSION {
                    return Err(bad(format!(
                        "unsupported format `{v}`, expected {FORMAT_VERSION}"
                    )));
                }
                first = false;
                continue;
            }
            match k {
                "tensor" => {
                    let parts: Vec<&str> = v.split(';').collect();
                    if parts.len() != 4 {
                        return Err(bad(format!("malformed tensor entry `{v}`")));
                    }
                    let shape = parts[1]
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad shape in `{v}`")))?;
                    let offset: usize = parts[2].parse().map_err(|_| bad("bad offset"))?;
                    let count: usize = parts[3].parse().map_err(|_| bad("bad count"))?;
                    if shape.iter().product::<usize>() != count {
                        return Err(bad(format!("shape/count mismatch for `{}`", parts[0])));
                    }
                    entries.push((parts[0].to_string(), shape, offset, count));
                }
                "payload_bytes" => {
                    payload_bytes = Some(v.parse::<usize>().map_err(|_| bad("bad payload size"))?)
                }
                _ => meta.push((k.to_string(), v.to_string())),
            }
        }
        if first {
            return Err(bad("missing format line"));
        }
        let n = payload_bytes.ok_or_else(|| bad("missing payload_bytes"))?;
        let mut payload = vec![0u8; n];
        r.read_exact(&mut payload)
            .map_err(|_| bad("payload shorter than declared"))?;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset, count) in entries {
            let end = offset + count * 4;
            if end > n {
                return Err(bad(format!("tensor `{name}` exceeds payload")));
            }
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((name, shape, data));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

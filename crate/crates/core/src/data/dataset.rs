//! Line-delimited JSON dataset files, one trajectory per line.

use std::io::{BufRead, Write};
use std::path::Path;

use super::Trajectory;
use crate::error::{Error, Result};

pub fn write_dataset<W: Write>(trajs: &[Trajectory], mut w: W) -> Result<()> {
    for t in trajs {
        let line = serde_json::to_string(t).map_err(|e| Error::Contract(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records, skipping blank lines. Errors carry the 1-based line number.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if t.positions.len() < 3 || !(t.dt > 0.0) {
            return Err(Error::Parse {
                line: i + 1,
                msg: "trajectory needs at least 3 positions and positive dt".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn save_dataset(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_dataset(trajs, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// True for the held-out tenth of ids.
pub fn is_test_id(id: u64) -> bool {
    splitmix64(id) % 10 == 0
}

/// 90/10 train/test split by hashed trajectory id.
pub fn split(trajs: &[Trajectory]) -> (Vec<Trajectory>, Vec<Trajectory>) {
    trajs.iter().cloned().partition(|t| !is_test_id(t.id))
}

/// Validation tenth of the training ids, used for model selection so the
/// test split is never looked at during training.
pub fn is_val_id(id: u64) -> bool {
    splitmix64(id) % 10 == 1
}

/// `(train, validation, test)` by hashed id, roughly 80/10/10.
pub fn split_with_validation(trajs: &[Trajectory]) -> (Vec<Trajectory>, Vec<Trajectory>, Vec<Trajectory>) {
    let (rest, test) = split(trajs);
    let (val, train) = rest.into_iter().partition(|t| is_val_id(t.id));
    (train, val, test)
}

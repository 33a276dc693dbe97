//! Checkpoint file: a text manifest followed by flat little-endian `f64`
//! blocks. Round-trips are bit-exact.
//!
//! ```text
//! SGCKPT1
//! meta <n>          # optional: n following lines of opaque metadata
//! <metadata lines>
//! param <name> <d0>x<d1>... <offset> <count>
//! ...
//! DATA
//! <raw little-endian f64 blocks, offsets relative to the byte after DATA\n>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;

const MAGIC: &str = "SGCKPT1";

/// Write every parameter plus an optional metadata string (e.g. the
/// experiment config) to `path`.
pub fn save_checkpoint(store: &ParamStore, meta: Option<&str>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{MAGIC}")?;
    if let Some(meta) = meta {
        let lines: Vec<&str> = meta.lines().collect();
        writeln!(out, "meta {}", lines.len())?;
        for line in lines {
            writeln!(out, "{line}")?;
        }
    }
    let mut offset = 0usize;
    for (name, p) in store.iter() {
        if name.contains(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "parameter name `{name}` contains whitespace"
            )));
        }
        let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
        writeln!(
            out,
            "param {name} {} {offset} {}",
            dims.join("x"),
            p.data.len()
        )?;
        offset += p.data.len() * 8;
    }
    writeln!(out, "DATA")?;
    for (_, p) in store.iter() {
        for v in &p.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a checkpoint back into a fresh store, returning the metadata string
/// when one was saved.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, Option<String>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Parse(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }

    let mut meta: Option<String> = None;
    let mut manifest: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Parse("checkpoint truncated before DATA".into()));
        }
        let trimmed = line.trim_end();
        if trimmed == "DATA" {
            break;
        }
        if let Some(rest) = trimmed.strip_prefix("meta ") {
            let n: usize = rest
                .parse()
                .map_err(|_| Error::Parse(format!("bad meta count: {rest}")))?;
            let mut lines = Vec::with_capacity(n);
            for _ in 0..n {
                let mut m = String::new();
                reader.read_line(&mut m)?;
                lines.push(m.trim_end_matches('\n').to_string());
            }
            meta = Some(lines.join("\n"));
        } else if let Some(rest) = trimmed.strip_prefix("param ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Parse(format!("bad manifest line: {trimmed}")));
            }
            let shape: Vec<usize> = parts[1]
                .split('x')
                .map(|d| {
                    d.parse()
                        .map_err(|_| Error::Parse(format!("bad shape: {}", parts[1])))
                })
                .collect::<Result<_>>()?;
            let offset: usize = parts[2]
                .parse()
                .map_err(|_| Error::Parse(format!("bad offset: {}", parts[2])))?;
            let count: usize = parts[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad count: {}", parts[3])))?;
            manifest.push((parts[0].to_string(), shape, offset, count));
        } else {
            return Err(Error::Parse(format!(
                "unexpected manifest line: {trimmed}"
            )));
        }
    }

    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;

    let mut store = ParamStore::new();
    for (name, shape, offset, count) in manifest {
        let end = offset + count * 8;
        if end > blob.len() {
            return Err(Error::Parse(format!(
                "checkpoint data truncated for `{name}`"
            )));
        }
        let data: Vec<f64> = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.register(&name, shape, data)?;
    }
    Ok((store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.register_normal("a.weight", vec![3, 5], 1.0, &mut rng).unwrap();
        store.register_normal("a.bias", vec![3], 1.0, &mut rng).unwrap();
        store
            .register("odd", vec![4], vec![f64::MIN_POSITIVE, -0.0, 1.0e308, 3.5])
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        save_checkpoint(&store, Some("k = 1\nname = \"x\""), &path).unwrap();
        let (loaded, meta) = load_checkpoint(&path).unwrap();

        assert_eq!(meta.as_deref(), Some("k = 1\nname = \"x\""));
        assert_eq!(loaded.len(), store.len());
        for (name, p) in store.iter() {
            let q = loaded.get(name).unwrap();
            assert_eq!(p.shape, q.shape);
            for (x, y) in p.data.iter().zip(&q.data) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {name}");
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, "not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}

//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"BTWM"
//! u32   format version
//! u32   config length, then that many bytes of `key=value` config text
//! u32   tensor count
//! per tensor, in declaration order:
//!   u32 rank, rank × u64 dims, product(dims) × f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelParams, MoeConfig, Tensors};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BTWM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, out: &mut W) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = params.config().to_kv_text();
    out.write_all(&(cfg.len() as u32).to_le_bytes())?;
    out.write_all(cfg.as_bytes())?;
    let t = params.tensors();
    let shapes = t.shapes();
    out.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for ((_, shape), values) in shapes.iter().zip(t.slices()) {
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in shape {
            out.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_checkpoint(params, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file), path)
}

struct Reader<'a, R> {
    inner: &'a mut R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "truncated checkpoint")
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.bytes::<8>().map(f64::from_le_bytes)
    }
}

/// Reads a checkpoint; `path` is only used in error messages.
pub fn read_checkpoint<R: Read>(input: &mut R, path: &Path) -> Result<ModelParams> {
    let mut r = Reader { inner: input, path };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing BTWM magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.inner
        .read_exact(&mut cfg_bytes)
        .map_err(|_| Error::format(path, "truncated config block"))?;
    let cfg_text = String::from_utf8(cfg_bytes).map_err(|_| Error::format(path, "config block is not UTF-8"))?;
    let config = MoeConfig::from_kv_text(&cfg_text)?;

    let template = ModelParams::zeros(config.clone())?;
    let expected = template.tensors().shapes();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::format(
            path,
            format!("{count} tensors stored, config implies {}", expected.len()),
        ));
    }
    let mut tensors: Tensors = template.tensors().clone();
    for ((name, shape), slot) in expected.iter().zip(tensors.slices_mut()) {
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::format(
                path,
                format!("tensor {name} stored with shape {dims:?}, expected {shape:?}"),
            ));
        }
        for v in slot.iter_mut() {
            *v = r.f64()?;
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(ModelParams::from_parts(config, tensors))
}

#[cfg(test)]
mod tests {
    use super::super::{MoeConfig, Task};
    use super::*;
    use proptest::prelude::*;

    fn config(task: Task) -> MoeConfig {
        let mut c = MoeConfig::desk_scale(vec![3, 2], task);
        c.embed_dim = 4;
        c.expert_hidden = 3;
        c.n_experts = 3;
        c
    }

    #[test]
    fn header_layout() {
        let p = ModelParams::init(config(Task::Regression), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"BTWM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let cfg_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert!(std::str::from_utf8(&buf[12..12 + cfg_len])
            .unwrap()
            .starts_with("input_dims=3,2\n"));
        // first tensor: encoder[0].weight is 4x3
        let at = 12 + cfg_len + 4;
        assert_eq!(u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[at + 4..at + 12].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(buf[at + 12..at + 20].try_into().unwrap()), 3);
        let first = f64::from_le_bytes(buf[at + 20..at + 28].try_into().unwrap());
        assert_eq!(first, p.tensors().encoders[0].weight[0]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = ModelParams::init(config(Task::Regression), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let path = Path::new("mem");

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice(), path).is_err());

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_checkpoint(&mut bad.as_slice(), path).is_err());

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            read_checkpoint(&mut &truncated[..], path),
            Err(Error::Format { .. })
        ));

        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice(), path).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.btwm");
        let p = ModelParams::init(config(Task::Classification { n_classes: 3 }), 4).unwrap();
        save_checkpoint(&p, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.tensors(), p.tensors());
        assert_eq!(back.config(), p.config());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), classes in 2usize..6, layers in 1usize..3) {
            let mut c = config(Task::Classification { n_classes: classes });
            c.n_moe_layers = layers;
            let p = ModelParams::init(c, seed).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&p, &mut buf).unwrap();
            let back = read_checkpoint(&mut buf.as_slice(), Path::new("mem")).unwrap();
            let a: Vec<u64> = p.tensors().slices().concat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.tensors().slices().concat().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.config(), p.config());
        }
    }
}

//! Versioned binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic           8 bytes   "TOXSEQ1\n"
//! header_len      u32
//! header          UTF-8 key=value lines (version, seed, configs)
//! tensor_count    u32
//! per tensor:
//!   name_len      u32
//!   name          UTF-8 bytes
//!   rank          u32
//!   dims          rank × u64
//!   value_count   u64
//!   values        value_count × f64 (IEEE bits)
//! ```
//!
//! Every parameter the model names must appear exactly once; unknown or
//! missing names and any shape disagreement are hard errors. Writes go to a
//! temp file first and land by rename.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::model::Model;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TOXSEQ1\n";
pub const FORMAT_VERSION: u32 = 1;

fn header_text(model: &Model) -> String {
    let e = &model.encoder_config;
    let h = &model.head_config;
    format!(
        "format_version={FORMAT_VERSION}\n\
         seed={}\n\
         vocab_size={}\n\
         encoder.num_layers={}\n\
         encoder.num_heads={}\n\
         encoder.model_dim={}\n\
         encoder.ff_dim={}\n\
         encoder.max_len={}\n\
         encoder.dropout_rate={}\n\
         head.d_a={}\n\
         head.d_h={}\n\
         head.d_fc={}\n\
         head.cell_mode={}\n\
         head.pooling={}\n\
         head.merge={}\n",
        model.seed,
        e.vocab_size,
        e.num_layers,
        e.num_heads,
        e.model_dim,
        e.ff_dim,
        e.max_len,
        e.dropout_rate,
        h.d_a,
        h.d_h,
        h.d_fc,
        h.cell_mode,
        h.pooling,
        h.merge,
    )
}

/// Writes the model atomically (temp file in the same directory, then rename).
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let wrap = |e: std::io::Error| Error::file(&tmp, e);
    let file = File::create(&tmp).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    write_body(model, &mut w).map_err(wrap)?;
    w.flush().map_err(wrap)?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn write_body<W: Write>(model: &Model, w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    let header = header_text(model);
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let tensors = model.named();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&(t.numel() as u64).to_le_bytes())?;
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| Error::Truncated)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64_usize(&mut self) -> Result<usize> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Truncated)
    }

    fn utf8(&mut self, len: usize, what: &str) -> Result<String> {
        let mut buf = vec![0u8; len];
        self.exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::Header(format!("{what} is not UTF-8")))
    }
}

fn parse_header(text: &str) -> Result<(u64, EncoderConfig, HeadConfig)> {
    let mut map: HashMap<&str, &str> = HashMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("malformed header line '{line}'")))?;
        if map.insert(k, v).is_some() {
            return Err(Error::Header(format!("duplicate header key '{k}'")));
        }
    }
    let version: u32 = map
        .get("format_version")
        .ok_or_else(|| Error::Header("missing format_version".into()))?
        .parse()
        .map_err(|_| Error::Header("unreadable format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(version));
    }

    fn take<T: std::str::FromStr>(map: &HashMap<&str, &str>, key: &str) -> Result<T> {
        map.get(key)
            .ok_or_else(|| Error::Header(format!("missing header key '{key}'")))?
            .parse()
            .map_err(|_| Error::Header(format!("unreadable value for '{key}'")))
    }

    const KNOWN: [&str; 15] = [
        "format_version",
        "seed",
        "vocab_size",
        "encoder.num_layers",
        "encoder.num_heads",
        "encoder.model_dim",
        "encoder.ff_dim",
        "encoder.max_len",
        "encoder.dropout_rate",
        "head.d_a",
        "head.d_h",
        "head.d_fc",
        "head.cell_mode",
        "head.pooling",
        "head.merge",
    ];
    for k in map.keys() {
        if !KNOWN.contains(k) {
            return Err(Error::Header(format!("unknown header key '{k}'")));
        }
    }

    let seed: u64 = take(&map, "seed")?;
    let encoder_config = EncoderConfig {
        num_layers: take(&map, "encoder.num_layers")?,
        num_heads: take(&map, "encoder.num_heads")?,
        model_dim: take(&map, "encoder.model_dim")?,
        ff_dim: take(&map, "encoder.ff_dim")?,
        max_len: take(&map, "encoder.max_len")?,
        vocab_size: take(&map, "vocab_size")?,
        dropout_rate: take(&map, "encoder.dropout_rate")?,
    };
    let head_config = HeadConfig {
        d_a: take(&map, "head.d_a")?,
        d_h: take(&map, "head.d_h")?,
        d_fc: take(&map, "head.d_fc")?,
        cell_mode: take(&map, "head.cell_mode")?,
        pooling: take(&map, "head.pooling")?,
        merge: take(&map, "head.merge")?,
    };
    Ok((seed, encoder_config, head_config))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };

    // Garbage where the magic belongs (including a too-short file) means
    // "not a checkpoint", which is a different failure than a checkpoint
    // cut off midway.
    let mut magic = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        match r.inner.read(&mut magic[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) => return Err(Error::file(path, e)),
        }
    }
    if magic[..got] != MAGIC[..] {
        return Err(Error::BadMagic);
    }

    let header_len = r.u32()? as usize;
    let header = r.utf8(header_len, "header")?;
    let (seed, encoder_config, head_config) = parse_header(&header)?;
    encoder_config
        .validate()
        .map_err(|e| Error::Header(format!("bad encoder config: {e}")))?;
    head_config
        .validate()
        .map_err(|e| Error::Header(format!("bad head config: {e}")))?;

    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, Tensor> = HashMap::with_capacity(count);
    let mut order = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.utf8(name_len, "tensor name")?;
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64_usize()?);
        }
        let value_count = r.u64_usize()?;
        if dims.iter().product::<usize>() != value_count {
            return Err(Error::ShapeInconsistency {
                name,
                dims,
                count: value_count as u64,
            });
        }
        let mut values = Vec::with_capacity(value_count);
        let mut b = [0u8; 8];
        for _ in 0..value_count {
            r.exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        if tensors
            .insert(name.clone(), Tensor::new(dims, values))
            .is_some()
        {
            return Err(Error::Header(format!("duplicate tensor '{name}'")));
        }
        order.push(name);
    }
    let mut trailing = [0u8; 1];
    if r.inner
        .read(&mut trailing)
        .map_err(|e| Error::file(path, e))?
        != 0
    {
        return Err(Error::Header("trailing data after tensor block".into()));
    }

    let mut model = Model::zeros(encoder_config, head_config, seed)?;
    let expected: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
    for name in &order {
        if !expected.contains(name) {
            return Err(Error::UnknownTensor(name.clone()));
        }
    }
    for (name, slot) in model.named_mut() {
        let loaded = tensors
            .remove(&name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if loaded.shape() != slot.shape() {
            return Err(Error::ShapeInconsistency {
                name,
                dims: loaded.shape().to_vec(),
                count: slot.numel() as u64,
            });
        }
        slot.data_mut().copy_from_slice(loaded.data());
    }
    Ok(model)
}

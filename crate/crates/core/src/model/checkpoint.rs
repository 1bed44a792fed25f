//! Checkpoint layout (integers little-endian):
//!
//! ```text
//! "CNDM" | u32 version | u32 header_length | JSON header
//! f32 blobs: W_PI, W_PT, W_Q, W_K, W_V, W_O (D×D each),
//!            visual (K_b×D), textual (K×D), virtual (K_n×D)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{HeadConfig, ModelParams};
use super::Model;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::prototypes::PrototypeSet;
use crate::sampling::ClassSplit;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CNDM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    heads: usize,
    tau_t: f64,
    tau_v: f64,
    base_ids: Vec<usize>,
    new_ids: Vec<usize>,
    class_names: Vec<String>,
    use_attention: bool,
    use_virtual: bool,
    mask: super::AttentionMask,
    eval_batch: usize,
}

fn put(buf: &mut Vec<u8>, m: &Mat) {
    for &v in m.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_checkpoint(model: &Model, mut sink: impl Write) -> Result<()> {
    model.params.validate()?;
    model.prototypes.validate()?;
    let p = &model.params;
    let header = Header {
        dim: p.dim(),
        heads: p.heads,
        tau_t: p.tau_t,
        tau_v: p.tau_v,
        base_ids: model.prototypes.split.base_ids.clone(),
        new_ids: model.prototypes.split.new_ids.clone(),
        class_names: model.class_names.clone(),
        use_attention: model.config.use_attention,
        use_virtual: model.config.use_virtual,
        mask: model.config.mask,
        eval_batch: model.eval_batch,
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, m) in p.tensors() {
        put(&mut buf, m);
    }
    put(&mut buf, &model.prototypes.visual);
    put(&mut buf, &model.prototypes.textual);
    put(&mut buf, &model.prototypes.virtual_);
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn read_checkpoint(mut source: impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::format(0, format!("truncated checkpoint: {} bytes", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"CNDM\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let hl = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(12..12 + hl)
        .ok_or_else(|| Error::format(12, "truncated header"))?;
    let h: Header = serde_json::from_slice(header_bytes).map_err(|e| Error::format(12, format!("invalid header: {e}")))?;
    let (d, k) = (h.dim, h.class_names.len());
    let shapes = [
        (d, d),
        (d, d),
        (d, d),
        (d, d),
        (d, d),
        (d, d),
        (h.base_ids.len(), d),
        (k, d),
        (h.new_ids.len(), d),
    ];
    let start = 12 + hl;
    let expected: usize = shapes.iter().map(|(r, c)| r * c * 4).sum();
    if bytes.len() - start != expected {
        return Err(Error::format(
            start as u64,
            format!("payload length mismatch: expected {expected} bytes, found {}", bytes.len() - start),
        ));
    }
    let mut offset = start;
    let mut mats = shapes.iter().map(|&(r, c)| {
        let n = r * c;
        let data = bytes[offset..offset + n * 4]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        offset += n * 4;
        Mat::from_vec(r, c, data)
    });
    let mut next = || mats.next().expect("nine blobs");
    let params = ModelParams {
        proj_image: next(),
        proj_text: next(),
        query: next(),
        key: next(),
        value: next(),
        output: next(),
        tau_t: h.tau_t,
        tau_v: h.tau_v,
        heads: h.heads,
    };
    let prototypes = PrototypeSet {
        visual: next(),
        textual: next(),
        virtual_: next(),
        split: ClassSplit {
            base_ids: h.base_ids,
            new_ids: h.new_ids,
        },
    };
    params.validate()?;
    prototypes.validate()?;
    Ok(Model {
        params,
        prototypes,
        config: HeadConfig {
            use_attention: h.use_attention,
            use_virtual: h.use_virtual,
            mask: h.mask,
        },
        class_names: h.class_names,
        eval_batch: h.eval_batch.max(1),
    })
}

pub fn write_checkpoint_file(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

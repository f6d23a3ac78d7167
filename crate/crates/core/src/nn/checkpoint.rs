//! RBNC checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "RBNC"
//! version  u32
//! hlen     u64      byte length of the JSON header
//! header   hlen bytes of UTF-8 JSON: input_shape, layers, tensors[{name, shape, dtype}], meta
//! payload  every tensor in header order, f32 IEEE-754, row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Layer, LayerDesc, ModelGraph};

pub const MAGIC: [u8; 4] = *b"RBNC";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerDesc>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

pub fn write_checkpoint(model: &ModelGraph, mut w: impl Write) -> Result<()> {
    let params = model.params();
    let header = Header {
        input_shape: model.input_shape.clone(),
        layers: model.layers.iter().map(Layer::desc).collect(),
        tensors: params
            .iter()
            .map(|(layer, role, t)| TensorEntry {
                name: ModelGraph::param_name(*layer, *role),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
            })
            .collect(),
        meta: model.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, t) in params {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ModelGraph> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "header length")?;
    let hlen = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; hlen];
    read_exact(&mut r, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Header(e.to_string()))?;

    let layers = header.layers.iter().map(Layer::from_desc).collect::<Vec<_>>();
    let mut model = {
        // structure first; parameter validity is checked after the payload is in
        let shapes = super::infer_shapes(&header.input_shape, &layers)?;
        let boundaries = super::derive_boundaries(&layers, &shapes)?;
        ModelGraph {
            input_shape: header.input_shape,
            layers,
            shapes,
            boundaries,
            meta: header.meta,
        }
    };
    {
        let mut params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(Error::Header(format!(
                "header lists {} tensors, architecture has {}",
                header.tensors.len(),
                params.len()
            )));
        }
        for (entry, (layer, role, t)) in header.tensors.iter().zip(params.iter_mut()) {
            let expected = ModelGraph::param_name(*layer, *role);
            if entry.name != expected || entry.shape != t.shape() || entry.dtype != "f32" {
                return Err(Error::Header(format!(
                    "tensor {} {:?} {} does not match {} {:?} f32",
                    entry.name,
                    entry.shape,
                    entry.dtype,
                    expected,
                    t.shape()
                )));
            }
        }
        for (entry, (_, _, t)) in header.tensors.iter().zip(params.iter_mut()) {
            let mut buf = vec![0u8; t.len() * 4];
            read_exact(&mut r, &mut buf, &entry.name)?;
            for (v, b) in t.data_mut().iter_mut().zip(buf.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Header("trailing bytes after payload".into()));
    }
    model.check_params()?;
    Ok(model)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("unexpected end of file reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn save_checkpoint(model: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_checkpoint(model, BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let f = File::open(path)?;
    read_checkpoint(BufReader::new(f))
}

impl ModelGraph {
    /// Serialized checkpoint bytes.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(self, &mut out).expect("writing to a Vec cannot fail");
        out
    }
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{FastTextVocab, Model, ModelConfig};
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"QCLZCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    sparse: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    input_dim: usize,
    fasttext: Option<FastTextVocab>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A loaded checkpoint: the model and whatever record was stored beside it.
pub struct Checkpoint<T: Scalar> {
    pub model: Model<T>,
    pub extra: serde_json::Value,
}

/// Layout: magic, version (u32), header length (u64), JSON header, then each
/// tensor's values as little-endian `f32` in header order.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, extra: serde_json::Value, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        input_dim: model.input_dim,
        fasttext: model.fasttext.clone(),
        tensors: model
            .params
            .iter()
            .map(|(id, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                sparse: model.params.is_sparse(id),
            })
            .collect(),
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    for (_, _, t) in model.params.iter() {
        for &v in t.data() {
            w.write_f32::<LittleEndian>(v.to_f32())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let mut json = vec![0u8; usize::try_from(len).map_err(|_| bad("header too large"))?];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json)?;
    header.config.validate()?;
    let mut params = ParamSet::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let mut raw = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut raw)
            .map_err(|_| bad(&format!("truncated tensor {}", e.name)))?;
        let t = Tensor::new(&e.shape, raw.into_iter().map(<T as Scalar>::from_f32).collect())?;
        if e.sparse {
            params.add_sparse(e.name.clone(), t);
        } else {
            params.add(e.name.clone(), t);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    let mut fasttext = header.fasttext;
    if let Some(v) = fasttext.as_mut() {
        v.reindex();
    }
    Ok(Checkpoint {
        model: Model {
            config: header.config,
            params,
            input_dim: header.input_dim,
            fasttext,
        },
        extra: header.extra,
    })
}

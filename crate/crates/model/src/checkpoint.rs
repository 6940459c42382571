//! Checkpoint directories: `config.json` plus a flat parameter archive.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use usersod_tensor::{ParamStore, Real, Tensor};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::model::{UserSal, ESM_PREFIX};
use crate::vocab::Vocabulary;

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.bin";
const MAGIC: &[u8; 8] = b"USPARAM1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    /// Marks a saliency network that later runs must keep frozen.
    pub frozen: bool,
    pub esm_hash: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Little-endian archive of `(name, shape, f32 values)` records in registration order.
pub fn encode_params<T: Real>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend((params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        out.extend((p.name.len() as u32).to_le_bytes());
        out.extend(p.name.as_bytes());
        out.extend((p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend((v.f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_params<T: Real>(bytes: &[u8]) -> std::result::Result<ParamStore<T>, String> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let s = bytes.get(pos..pos + n).ok_or("truncated archive")?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err("not a parameter archive".into());
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let count = u32_at(take(4)?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| "parameter name is not UTF-8")?;
        let rank = u32_at(take(4)?);
        let shape: Vec<usize> = (0..rank).map(|_| take(4).map(u32_at)).collect::<std::result::Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let data = take(4 * n)?
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        if store.id(&name).is_some() {
            return Err(format!("duplicate parameter {name}"));
        }
        store.add(name, Tensor::from_vec(&shape, data), false);
    }
    if pos != bytes.len() {
        return Err("trailing bytes after archive".into());
    }
    Ok(store)
}

pub fn save<T: Real>(model: &UserSal<T>, dir: &Path, frozen: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = CheckpointMeta {
        config: model.config().clone(),
        vocabulary: model.vocab().clone(),
        frozen,
        esm_hash: model.param_hash(ESM_PREFIX),
    };
    let cfg_path = dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("serialisable metadata");
    fs::write(&cfg_path, json + "\n").map_err(io_err(&cfg_path))?;
    let p = dir.join(PARAMS_FILE);
    let mut f = fs::File::create(&p).map_err(io_err(&p))?;
    f.write_all(&encode_params(model.params())).map_err(io_err(&p))?;
    Ok(())
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint {
        path,
        reason: e.to_string(),
    })
}

/// Load a checkpoint; `expected` (if given) must match the stored configuration.
pub fn load<T: Real>(dir: &Path, expected: Option<&ModelConfig>) -> Result<(UserSal<T>, CheckpointMeta)> {
    let meta = load_meta(dir)?;
    if let Some(cfg) = expected {
        if cfg != &meta.config {
            return Err(ModelError::Checkpoint {
                path: dir.to_path_buf(),
                reason: "stored configuration differs from the requested one".into(),
            });
        }
    }
    let path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let params = decode_params::<T>(&bytes).map_err(|reason| ModelError::Checkpoint {
        path: path.clone(),
        reason,
    })?;
    let model = UserSal::from_params(meta.config.clone(), meta.vocabulary.clone(), params).map_err(|e| {
        ModelError::Checkpoint {
            path,
            reason: e.to_string(),
        }
    })?;
    Ok((model, meta))
}

//! Checkpoint container: magic string "INSTCAL1", a little-endian u64
//! manifest byte length, a JSON manifest listing named arrays
//! {name, dtype, shape, trainable} plus model metadata, then the raw
//! little-endian array payloads in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{SegNet, SegNetConfig};
use crate::store::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"INSTCAL1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub model: SegNetConfig,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub arrays: Vec<ArrayMeta>,
}

pub fn save(path: &Path, net: &SegNet) -> Result<()> {
    save_with_hash(path, net, None)
}

pub fn save_with_hash(path: &Path, net: &SegNet, config_hash: Option<&str>) -> Result<()> {
    let manifest = Manifest {
        version: 1,
        model: net.config.clone(),
        config_hash: config_hash.map(|s| s.to_string()),
        arrays: net
            .store
            .iter()
            .map(|p| ArrayMeta {
                name: p.name.clone(),
                dtype: "f64".to_string(),
                shape: p.tensor.shape.clone(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_json)?;
    for p in net.store.iter() {
        for v in &p.tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SegNet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_json = vec![0u8; len];
    r.read_exact(&mut manifest_json)?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_json).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut store = ParamStore::new();
    for a in &manifest.arrays {
        let numel: usize = a.shape.iter().product();
        let data = match a.dtype.as_str() {
            "f64" => {
                let mut buf = vec![0u8; numel * 8];
                r.read_exact(&mut buf)?;
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
            "f32" => {
                let mut buf = vec![0u8; numel * 4];
                r.read_exact(&mut buf)?;
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported dtype {other} for {}",
                    a.name
                )))
            }
        };
        store.insert(&a.name, Tensor::new(a.shape.clone(), data), a.trainable);
    }
    Ok(SegNet {
        config: manifest.model,
        store,
    })
}

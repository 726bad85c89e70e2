//! Model checkpoints: a directory holding `model.json` plus one `EEGT` file
//! per named tensor.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

pub const DESCRIPTOR_FILE: &str = "model.json";

pub fn write_checkpoint<D: Serialize>(
    dir: impl AsRef<Path>,
    descriptor: &D,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (name, t) in tensors {
        t.save(dir.join(format!("{name}.eegt")))?;
    }
    let mut text = serde_json::to_string_pretty(descriptor)?;
    text.push('\n');
    fs::write(dir.join(DESCRIPTOR_FILE), text)?;
    Ok(())
}

pub fn read_descriptor<D: DeserializeOwned>(dir: impl AsRef<Path>) -> Result<D> {
    let path = dir.as_ref().join(DESCRIPTOR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(&path, e.to_string()))
}

pub fn read_tensor(dir: impl AsRef<Path>, name: &str, dims: &[usize]) -> Result<Tensor> {
    let path = dir.as_ref().join(format!("{name}.eegt"));
    let t = Tensor::load(&path)?;
    if t.dims() != dims {
        return Err(Error::load(
            &path,
            format!("expected dims {dims:?}, found {:?}", t.dims()),
        ));
    }
    Ok(t)
}

/// Loads `name` into an existing parameter, checking its shape.
pub(crate) fn load_param(dir: &Path, name: &str, param: &mut Param) -> Result<()> {
    param.value = read_tensor(dir, name, param.value.dims())?;
    param.zero_grad();
    Ok(())
}

/// FNV-1a over the `EEGT` encoding of each parameter value, in order.
pub fn param_checksum<'a>(params: impl IntoIterator<Item = &'a Param>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for byte in p.value.to_eegt_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    hash
}

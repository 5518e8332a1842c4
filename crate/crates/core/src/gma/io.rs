//! `GMAP` parameter sidecar. Dims are `[dim, hidden, outputs]`; values are
//! `attn_v, attn_u, attn_w, head_w, head_b` concatenated.

use std::path::Path;

use super::GmaParams;
use crate::error::{Error, Result};
use crate::optim::Parameters;
use crate::paramfile::{self, ParamBlob};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"GMAP";

pub fn encode<T: Scalar>(p: &GmaParams<T>, label: &str) -> Result<Vec<u8>> {
    p.validate()?;
    let values = p
        .tensors()
        .into_iter()
        .flat_map(|t| t.iter().map(|v| v.to_f64_lossy()))
        .collect();
    paramfile::encode(
        MAGIC,
        &ParamBlob {
            dims: vec![p.dim as u32, p.hidden as u32, p.outputs as u32],
            label: label.to_string(),
            values,
        },
    )
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(GmaParams<T>, String)> {
    let blob = paramfile::decode(MAGIC, bytes)?;
    let [d, h, c] = blob.dims[..] else {
        return Err(Error::Format("GMAP needs three dims".into()));
    };
    let mut p = GmaParams::<T>::zeros(d as usize, h as usize, c as usize);
    let expected = p.num_parameters();
    if blob.values.len() != expected {
        return Err(Error::CorruptFile(format!(
            "expected {expected} values, found {}",
            blob.values.len()
        )));
    }
    let mut it = blob.values.into_iter();
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = T::from_f64_lossy(it.next().unwrap());
        }
    }
    Ok((p, blob.label))
}

pub fn write_params<T: Scalar>(p: &GmaParams<T>, label: &str, path: &Path) -> Result<()> {
    std::fs::write(path, encode(p, label)?)?;
    Ok(())
}

pub fn read_params<T: Scalar>(path: &Path) -> Result<(GmaParams<T>, String)> {
    decode(&std::fs::read(path)?)
}

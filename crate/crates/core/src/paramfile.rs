//! Binary sidecar for trained parameters, following the feature-file header
//! conventions:
//!
//! ```text
//! magic (4) | version u16 = 1 | flags u16 = 0 | n_dims u32 | dims: n_dims × u32
//! | label: u16 len + UTF-8 | zero padding to 64 bytes | values f64, little-endian
//! ```

use crate::error::{Error, Result};

const VERSION: u16 = 1;
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    pub dims: Vec<u32>,
    pub label: String,
    pub values: Vec<f64>,
}

pub fn encode(magic: &[u8; 4], blob: &ParamBlob) -> Result<Vec<u8>> {
    if blob.label.len() > u16::MAX as usize {
        return Err(Error::InvalidInput("label too long".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(blob.dims.len() as u32).to_le_bytes());
    for d in &blob.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&(blob.label.len() as u16).to_le_bytes());
    buf.extend_from_slice(blob.label.as_bytes());
    buf.resize(buf.len().div_ceil(ALIGN) * ALIGN, 0);
    for v in &blob.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<ParamBlob> {
    fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| Error::CorruptFile("truncated parameter header".into()))?;
        *pos += n;
        Ok(s)
    }
    let mut pos = 0;
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    pos += 4;
    let version = u16::from_le_bytes(take(bytes, &mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    take(bytes, &mut pos, 2)?;
    let n_dims = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
    if n_dims > 16 {
        return Err(Error::Format(format!("{n_dims} dims is implausible")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()));
    }
    let len = u16::from_le_bytes(take(bytes, &mut pos, 2)?.try_into().unwrap()) as usize;
    let label = String::from_utf8(take(bytes, &mut pos, len)?.to_vec())
        .map_err(|_| Error::Format("label is not UTF-8".into()))?;
    let padded = pos.div_ceil(ALIGN) * ALIGN;
    let pad = padded - pos;
    take(bytes, &mut pos, pad)?;
    let rest = &bytes[pos..];
    if rest.len() % 8 != 0 {
        return Err(Error::CorruptFile("payload is not a whole number of f64".into()));
    }
    let values: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite parameter".into()));
    }
    Ok(ParamBlob { dims, label, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_errors() {
        let blob = ParamBlob {
            dims: vec![3, 2],
            label: "run".into(),
            values: vec![1.0, -2.0, 0.5],
        };
        let bytes = encode(b"TEST", &blob).unwrap();
        assert_eq!(bytes.len(), 64 + 24);
        assert_eq!(decode(b"TEST", &bytes).unwrap(), blob);
        assert!(matches!(decode(b"GMAP", &bytes), Err(Error::Format(_))));
        assert!(matches!(decode(b"TEST", &bytes[..bytes.len() - 3]), Err(Error::CorruptFile(_))));
        assert!(matches!(decode(b"TEST", &bytes[..20]), Err(Error::CorruptFile(_))));
    }
}

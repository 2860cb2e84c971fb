use std::fs;
use std::path::Path;

use super::{DataError, OrientationVolume};
use crate::tensor::DType;

pub const QVOL_MAGIC: [u8; 4] = *b"QVOL";
pub const QVOL_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 3 * 8 + 3 * 8 + 4;

pub fn volume_to_bytes(vol: &OrientationVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + vol.data().len() * 4);
    out.extend_from_slice(&QVOL_MAGIC);
    out.extend_from_slice(&QVOL_VERSION.to_le_bytes());
    for d in vol.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for p in vol.pitch {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&DType::F32.tag().to_le_bytes());
    for v in vol.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a QVOL image.
///
/// A payload that ends inside a quaternion (or a short header) is reported
/// as truncated; a payload of whole quaternions whose count disagrees with
/// the header is a length mismatch.
pub fn volume_from_bytes(bytes: &[u8]) -> Result<OrientationVolume, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != QVOL_MAGIC {
        return Err(DataError::BadMagic {
            expected: QVOL_MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != QVOL_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let raw_dims = [u64_at(8), u64_at(16), u64_at(24)];
    let pitch = [f64_at(32), f64_at(40), f64_at(48)];
    let tag = u32_at(56);
    if DType::from_tag(tag) != Some(DType::F32) {
        return Err(DataError::UnsupportedDType(tag));
    }
    let mut dims = [0usize; 3];
    for (d, &r) in dims.iter_mut().zip(&raw_dims) {
        *d = usize::try_from(r).map_err(|_| DataError::DimOverflow(raw_dims))?;
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|n| n.checked_mul(16).is_some())
        .ok_or(DataError::DimOverflow(raw_dims))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() % 16 != 0 {
        return Err(DataError::Truncated(format!(
            "payload of {} bytes ends inside a quaternion",
            payload.len()
        )));
    }
    let found = payload.len() / 16;
    if found != expected {
        return Err(DataError::LengthMismatch { expected, found });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    OrientationVolume::new(dims, pitch, data)
}

pub fn write_volume(vol: &OrientationVolume, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, volume_to_bytes(vol)).map_err(|e| DataError::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<OrientationVolume, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    volume_from_bytes(&bytes)
}

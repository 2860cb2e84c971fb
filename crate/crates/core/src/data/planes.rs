use serde::{Deserialize, Serialize};

use super::volume::{to_f32, voxel_ok};
use super::{DataError, OrientationVolume};
use crate::quat::Quat;

/// Axis normal to a family of 2D sections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normal {
    /// yz sections, `map[z, y]`.
    X,
    /// xz sections, `map[z, x]`.
    Y,
    /// xy sections, `map[y, x]`.
    Z,
}

impl Normal {
    pub fn suffix(self) -> &'static str {
        match self {
            Normal::X => "xnormal",
            Normal::Y => "ynormal",
            Normal::Z => "znormal",
        }
    }
}

/// 2D quaternion map stored component-planar, `[4, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuatMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl QuatMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if data.len() != 4 * height * width {
            return Err(DataError::Invalid(format!(
                "map {height}x{width} needs {} values, got {}",
                4 * height * width,
                data.len()
            )));
        }
        Ok(QuatMap { height, width, data })
    }

    pub fn get(&self, r: usize, c: usize) -> [f32; 4] {
        let hw = self.height * self.width;
        let i = r * self.width + c;
        [self.data[i], self.data[hw + i], self.data[2 * hw + i], self.data[3 * hw + i]]
    }

    pub fn quat(&self, r: usize, c: usize) -> Quat {
        let v = self.get(r, c);
        Quat::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64)
    }

    pub fn set(&mut self, r: usize, c: usize, v: [f32; 4]) {
        let hw = self.height * self.width;
        let i = r * self.width + c;
        for (k, x) in v.into_iter().enumerate() {
            self.data[k * hw + i] = x;
        }
    }

    /// Rows `top..top+h`, columns `left..left+w`, keeping every `step`-th row.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize, step: usize) -> QuatMap {
        let rows = h.div_ceil(step);
        let mut out = QuatMap {
            height: rows,
            width: w,
            data: vec![0.0; 4 * rows * w],
        };
        for r in 0..rows {
            for c in 0..w {
                out.set(r, c, self.get(top + r * step, left + c));
            }
        }
        out
    }
}

/// Sections of `vol` perpendicular to `normal`.
pub fn extract_planes(vol: &OrientationVolume, normal: Normal) -> Vec<QuatMap> {
    let [nz, ny, nx] = vol.dims();
    let (count, h, w) = match normal {
        Normal::X => (nx, nz, ny),
        Normal::Y => (ny, nz, nx),
        Normal::Z => (nz, ny, nx),
    };
    (0..count)
        .map(|i| {
            let mut m = QuatMap {
                height: h,
                width: w,
                data: vec![0.0; 4 * h * w],
            };
            for r in 0..h {
                for c in 0..w {
                    let v = match normal {
                        Normal::X => vol.get_raw(r, c, i),
                        Normal::Y => vol.get_raw(r, i, c),
                        Normal::Z => vol.get_raw(i, r, c),
                    };
                    m.set(r, c, v);
                }
            }
            m
        })
        .collect()
}

/// Inverse of [`extract_planes`]. Voxels are renormalised to the volume
/// convention.
pub fn assemble_volume(planes: &[QuatMap], normal: Normal, pitch: [f64; 3]) -> Result<OrientationVolume, DataError> {
    let first = planes
        .first()
        .ok_or_else(|| DataError::Invalid("no planes to assemble".into()))?;
    let (h, w) = (first.height, first.width);
    if planes.iter().any(|p| p.height != h || p.width != w || p.data.len() != 4 * h * w) {
        return Err(DataError::Invalid("planes have inconsistent shapes".into()));
    }
    let n = planes.len();
    let dims = match normal {
        Normal::X => [h, w, n],
        Normal::Y => [h, n, w],
        Normal::Z => [n, h, w],
    };
    let mut data = vec![0.0f32; 4 * dims.iter().product::<usize>()];
    for (i, p) in planes.iter().enumerate() {
        for r in 0..h {
            for c in 0..w {
                let (z, y, x) = match normal {
                    Normal::X => (r, c, i),
                    Normal::Y => (r, i, c),
                    Normal::Z => (i, r, c),
                };
                let raw = p.get(r, c);
                let v = if voxel_ok(&raw) {
                    raw
                } else {
                    let q = Quat::new(raw[0] as f64, raw[1] as f64, raw[2] as f64, raw[3] as f64);
                    to_f32(q.normalize_hemisphere().unwrap_or(Quat::IDENTITY))
                };
                let off = 4 * ((z * dims[1] + y) * dims[2] + x);
                data[off..off + 4].copy_from_slice(&v);
            }
        }
    }
    OrientationVolume::new(dims, pitch, data)
}

/// Keeps z planes `0, s, 2s, ..`.
pub fn sparse_section(vol: &OrientationVolume, stride: usize) -> Result<OrientationVolume, DataError> {
    let [nz, ny, nx] = vol.dims();
    if stride == 0 || nz % stride != 0 {
        return Err(DataError::Invalid(format!("z extent {nz} is not divisible by stride {stride}")));
    }
    let mut data = Vec::with_capacity(vol.data().len() / stride);
    for z in (0..nz).step_by(stride) {
        data.extend_from_slice(vol.z_plane(z));
    }
    let pitch = [vol.pitch[0] * stride as f64, vol.pitch[1], vol.pitch[2]];
    OrientationVolume::new([nz / stride, ny, nx], pitch, data)
}

/// Upsamples along z by repeating each retained plane `scale` times.
pub fn nearest_plane_upsample(lr: &OrientationVolume, scale: usize) -> Result<OrientationVolume, DataError> {
    if scale == 0 {
        return Err(DataError::Invalid("scale must be positive".into()));
    }
    let [nz, ny, nx] = lr.dims();
    let mut data = Vec::with_capacity(lr.data().len() * scale);
    for z in 0..nz * scale {
        data.extend_from_slice(lr.z_plane(z / scale));
    }
    let pitch = [lr.pitch[0] / scale as f64, lr.pitch[1], lr.pitch[2]];
    OrientationVolume::new([nz * scale, ny, nx], pitch, data)
}

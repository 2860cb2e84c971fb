use super::DataError;
use crate::quat::Quat;

/// Allowed deviation of a stored voxel from unit norm.
pub const VOXEL_UNIT_TOLERANCE: f64 = 1e-5;

/// `(z, y, x)` grid of unit quaternions, components innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationVolume {
    dims: [usize; 3],
    /// Voxel pitch in micrometres, `(z, y, x)`.
    pub pitch: [f64; 3],
    data: Vec<f32>,
}

impl OrientationVolume {
    /// Validates unit norm and the hemisphere convention of every voxel.
    pub fn new(dims: [usize; 3], pitch: [f64; 3], data: Vec<f32>) -> Result<Self, DataError> {
        let n = checked_voxels(dims)?;
        if data.len() != 4 * n {
            return Err(DataError::LengthMismatch {
                expected: n,
                found: data.len() / 4,
            });
        }
        for (index, q) in data.chunks_exact(4).enumerate() {
            if !voxel_ok(q) {
                return Err(DataError::NotUnit {
                    index,
                    value: [q[0], q[1], q[2], q[3]],
                });
            }
        }
        Ok(OrientationVolume { dims, pitch, data })
    }

    /// Builds a volume from arbitrary nonzero quaternions, normalising each
    /// voxel and fixing its hemisphere.
    pub fn from_fn(dims: [usize; 3], pitch: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> Quat) -> Result<Self, DataError> {
        let n = checked_voxels(dims)?;
        let mut data = Vec::with_capacity(4 * n);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let q = f(z, y, x)
                        .normalize_hemisphere()
                        .map_err(|e| DataError::Invalid(format!("voxel ({z},{y},{x}): {e}")))?;
                    data.extend(to_f32(q));
                }
            }
        }
        Ok(OrientationVolume { dims, pitch, data })
    }

    pub fn constant(dims: [usize; 3], q: Quat) -> Result<Self, DataError> {
        Self::from_fn(dims, [1.0; 3], |_, _, _| q)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> Quat {
        let i = 4 * self.index(z, y, x);
        let d = &self.data[i..i + 4];
        Quat::new(d[0] as f64, d[1] as f64, d[2] as f64, d[3] as f64)
    }

    pub fn get_raw(&self, z: usize, y: usize, x: usize) -> [f32; 4] {
        let i = 4 * self.index(z, y, x);
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    /// Sets a voxel, normalising and fixing the hemisphere.
    pub fn set(&mut self, z: usize, y: usize, x: usize, q: Quat) -> Result<(), DataError> {
        let q = q
            .normalize_hemisphere()
            .map_err(|e| DataError::Invalid(format!("voxel ({z},{y},{x}): {e}")))?;
        let i = 4 * self.index(z, y, x);
        self.data[i..i + 4].copy_from_slice(&to_f32(q));
        Ok(())
    }

    /// Raw values of plane `z`, `(y, x)` row-major, components innermost.
    pub fn z_plane(&self, z: usize) -> &[f32] {
        let n = 4 * self.dims[1] * self.dims[2];
        &self.data[z * n..(z + 1) * n]
    }
}

fn checked_voxels(dims: [usize; 3]) -> Result<usize, DataError> {
    if dims.contains(&0) {
        return Err(DataError::InvalidDims(dims.to_vec()));
    }
    dims.iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .map(|n| n / 4)
        .ok_or(DataError::DimOverflow(dims.map(|d| d as u64)))
}

pub(crate) fn voxel_ok(q: &[f32]) -> bool {
    let q = Quat::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
    let n = q.norm();
    n.is_finite() && (n - 1.0).abs() <= VOXEL_UNIT_TOLERANCE && q.hemisphere() == q
}

pub(crate) fn to_f32(q: Quat) -> [f32; 4] {
    let v = [q.q0 as f32, q.q1 as f32, q.q2 as f32, q.q3 as f32];
    // rounding can flip a tiny leading component's sign to -0.0; keep the convention
    let lead = v.iter().copied().find(|c| *c != 0.0).unwrap_or(0.0);
    if lead < 0.0 {
        v.map(|c| -c)
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_voxels() {
        assert!(OrientationVolume::new([1, 1, 1], [1.0; 3], vec![1.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(matches!(
            OrientationVolume::new([1, 1, 1], [1.0; 3], vec![-1.0, 0.0, 0.0, 0.0]),
            Err(DataError::NotUnit { index: 0, .. })
        ));
        assert!(matches!(
            OrientationVolume::new([1, 1, 2], [1.0; 3], vec![1.0, 0.0, 0.0, 0.0]),
            Err(DataError::LengthMismatch { expected: 2, found: 1 })
        ));
        assert!(OrientationVolume::new([0, 1, 1], [1.0; 3], vec![]).is_err());
    }

    #[test]
    fn from_fn_normalises() {
        let v = OrientationVolume::from_fn([2, 2, 2], [1.0; 3], |z, _, _| Quat::new(-2.0, z as f64, 0.0, 0.0)).unwrap();
        let q = v.get(1, 0, 0);
        assert!((q.norm() - 1.0).abs() < 1e-6 && q.q0 > 0.0 && q.q1 < 0.0);
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, QuatMap};
use crate::tensor::{Real, Tensor};

/// Patch sizes used over successive fractions of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSchedule {
    pub sizes: Vec<usize>,
    /// Fractions of total epochs at which the next size takes over.
    pub epoch_boundaries: Vec<f64>,
}

impl Default for PatchSchedule {
    fn default() -> Self {
        PatchSchedule {
            sizes: vec![16, 32, 64, 100],
            epoch_boundaries: vec![0.25, 0.5, 0.75],
        }
    }
}

impl PatchSchedule {
    /// One size for the whole run.
    pub fn fixed(size: usize) -> Self {
        PatchSchedule {
            sizes: vec![size],
            epoch_boundaries: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let inc = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        let sizes: Vec<f64> = self.sizes.iter().map(|&s| s as f64).collect();
        if self.sizes.is_empty() || self.sizes[0] == 0 || !inc(&sizes) {
            return Err(DataError::Invalid(format!("patch sizes {:?} must be positive and strictly increasing", self.sizes)));
        }
        if self.epoch_boundaries.len() + 1 != self.sizes.len()
            || !inc(&self.epoch_boundaries)
            || self.epoch_boundaries.iter().any(|&b| b <= 0.0 || b >= 1.0)
        {
            return Err(DataError::Invalid(format!(
                "need {} strictly increasing boundaries in (0, 1), got {:?}",
                self.sizes.len() - 1,
                self.epoch_boundaries
            )));
        }
        Ok(())
    }

    pub fn size_at(&self, epoch: usize, total_epochs: usize) -> usize {
        let frac = epoch as f64 / total_epochs.max(1) as f64;
        let k = self.epoch_boundaries.iter().filter(|&&b| frac >= b).count();
        self.sizes[k.min(self.sizes.len() - 1)]
    }
}

/// Draws `batch` HR patches and their z-strided LR counterparts.
///
/// Returns `(lr [B, 4, p/scale, p], hr [B, 4, p, p])`. Planes smaller than
/// the scheduled size are skipped.
#[allow(clippy::too_many_arguments)]
pub fn sample_patches<T: Real, R: Rng + ?Sized>(
    planes: &[QuatMap],
    epoch: usize,
    total_epochs: usize,
    schedule: &PatchSchedule,
    scale: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>), DataError> {
    let p = schedule.size_at(epoch, total_epochs);
    if scale == 0 || p % scale != 0 {
        return Err(DataError::Invalid(format!("patch size {p} is not divisible by scale {scale}")));
    }
    let fits: Vec<&QuatMap> = planes.iter().filter(|m| m.height >= p && m.width >= p).collect();
    if fits.is_empty() {
        return Err(DataError::Invalid(format!("no plane can hold a {p}x{p} patch")));
    }
    let mut lr = Vec::with_capacity(batch);
    let mut hr = Vec::with_capacity(batch);
    for _ in 0..batch {
        let m = fits[rng.random_range(0..fits.len())];
        let top = scale * rng.random_range(0..=(m.height - p) / scale);
        let left = rng.random_range(0..=m.width - p);
        hr.push(m.crop(top, left, p, p, 1));
        lr.push(m.crop(top, left, p, p, scale));
    }
    Ok((maps_to_tensor(&lr)?, maps_to_tensor(&hr)?))
}

/// Stacks equally shaped maps into `[N, 4, H, W]`.
pub fn maps_to_tensor<T: Real>(maps: &[QuatMap]) -> Result<Tensor<T>, DataError> {
    let first = maps
        .first()
        .ok_or_else(|| DataError::Invalid("no maps to stack".into()))?;
    let (h, w) = (first.height, first.width);
    if maps.iter().any(|m| m.height != h || m.width != w) {
        return Err(DataError::Invalid("maps have inconsistent shapes".into()));
    }
    let data = maps
        .iter()
        .flat_map(|m| m.data.iter().map(|&v| T::of(v as f64)))
        .collect();
    Tensor::new([maps.len(), 4, h, w], data).map_err(|e| DataError::Invalid(e.to_string()))
}

/// Splits `[N, 4, H, W]` back into maps.
pub fn tensor_to_maps<T: Real>(t: &Tensor<T>) -> Result<Vec<QuatMap>, DataError> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 4 {
        return Err(DataError::Invalid(format!("expected [N, 4, H, W], got {s:?}")));
    }
    let per = 4 * s[2] * s[3];
    Ok(t.data()
        .chunks_exact(per)
        .map(|c| QuatMap {
            height: s[2],
            width: s[3],
            data: c.iter().map(|v| v.f64() as f32).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_quarters() {
        let s = PatchSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.size_at(0, 2000), 16);
        assert_eq!(s.size_at(499, 2000), 16);
        assert_eq!(s.size_at(500, 2000), 32);
        assert_eq!(s.size_at(1000, 2000), 64);
        assert_eq!(s.size_at(1999, 2000), 100);
        let bad = PatchSchedule {
            sizes: vec![32, 16],
            epoch_boundaries: vec![0.5],
        };
        assert!(bad.validate().is_err());
    }
}

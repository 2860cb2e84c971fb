use serde::{Deserialize, Serialize};

use super::{DataError, OrientationVolume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitAxis {
    #[default]
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub axis: SplitAxis,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.65,
            val: 0.15,
            test: 0.20,
            axis: SplitAxis::X,
        }
    }
}

/// Block sizes by largest-remainder rounding; equal remainders favour the
/// earlier block.
pub fn split_sizes(extent: usize, spec: &SplitSpec) -> Result<[usize; 3], DataError> {
    let fr = [spec.train, spec.val, spec.test];
    if fr.iter().any(|&f| !(f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!("split fractions {fr:?} must be non-negative and sum to 1")));
    }
    if extent < 20 {
        return Err(DataError::Invalid(format!("split axis extent {extent} is below 20")));
    }
    let quotas = fr.map(|f| f * extent as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let left = extent - sizes.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Contiguous train / validation / test blocks along the split axis.
pub fn split_dataset(vol: &OrientationVolume, spec: &SplitSpec) -> Result<[OrientationVolume; 3], DataError> {
    let [nz, ny, nx] = vol.dims();
    let extent = match spec.axis {
        SplitAxis::X => nx,
        SplitAxis::Y => ny,
    };
    let sizes = split_sizes(extent, spec)?;
    if sizes.contains(&0) {
        return Err(DataError::Invalid(format!("split of {extent} gives an empty block {sizes:?}")));
    }
    let mut start = 0;
    let mut parts = Vec::with_capacity(3);
    for len in sizes {
        let dims = match spec.axis {
            SplitAxis::X => [nz, ny, len],
            SplitAxis::Y => [nz, len, nx],
        };
        let mut data = Vec::with_capacity(4 * dims.iter().product::<usize>());
        for z in 0..nz {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let (sy, sx) = match spec.axis {
                        SplitAxis::X => (y, start + x),
                        SplitAxis::Y => (start + y, x),
                    };
                    data.extend(vol.get_raw(z, sy, sx));
                }
            }
        }
        parts.push(OrientationVolume::new(dims, vol.pitch, data)?);
        start += len;
    }
    Ok(parts.try_into().expect("three parts"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        let s = SplitSpec::default();
        assert_eq!(split_sizes(100, &s).unwrap(), [65, 15, 20]);
        assert_eq!(split_sizes(101, &s).unwrap(), [66, 15, 20]);
        assert!(split_sizes(19, &s).is_err());
        let bad = SplitSpec {
            train: 0.5,
            ..SplitSpec::default()
        };
        assert!(split_sizes(100, &bad).is_err());
    }
}

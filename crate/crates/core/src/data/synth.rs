use rand::Rng;
use rand_distr::{Distribution, Normal as Gaussian};

use super::{DataError, OrientationVolume};
use crate::quat::Quat;

/// Voronoi polycrystal: `n_grains` uniform seeds, each voxel (at its
/// centre) takes the orientation of the nearest seed, ties to the lower
/// seed index. `noise_deg > 0` adds an independent small rotation per voxel
/// with normally distributed angle of that standard deviation.
pub fn synth_voronoi<R: Rng + ?Sized>(
    dims: [usize; 3],
    n_grains: usize,
    rng: &mut R,
    noise_deg: f64,
) -> Result<OrientationVolume, DataError> {
    if n_grains == 0 {
        return Err(DataError::Invalid("n_grains must be at least 1".into()));
    }
    if !(noise_deg >= 0.0) {
        return Err(DataError::Invalid(format!("orientation noise {noise_deg} must be non-negative")));
    }
    let seeds: Vec<[f64; 3]> = (0..n_grains)
        .map(|_| dims.map(|d| rng.random::<f64>() * d as f64))
        .collect();
    let oris: Vec<Quat> = (0..n_grains).map(|_| Quat::random(rng).hemisphere()).collect();
    let noise = Gaussian::new(0.0, noise_deg.to_radians()).map_err(|e| DataError::Invalid(e.to_string()))?;
    OrientationVolume::from_fn(dims, [1.0; 3], |z, y, x| {
        let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
        let mut best = (f64::INFINITY, 0);
        for (i, s) in seeds.iter().enumerate() {
            let d = (0..3).map(|k| (p[k] - s[k]).powi(2)).sum::<f64>();
            if d < best.0 {
                best = (d, i);
            }
        }
        let q = oris[best.1];
        if noise_deg > 0.0 {
            let axis = Quat::random(rng);
            let dq = Quat::from_axis_angle([axis.q1, axis.q2, axis.q3 + 1e-12], noise.sample(rng));
            dq * q
        } else {
            q
        }
    })
}

use rayon::prelude::*;

use crate::data::{assemble_volume, extract_planes, maps_to_tensor, tensor_to_maps, Normal, OrientationVolume, QuatMap};
use crate::net::Network;
use crate::tensor::Real;
use crate::{Error, Result};

/// Columns shared by neighbouring tiles when a plane is split along W.
pub const TILE_OVERLAP: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct InferOptions {
    /// Widest plane processed in one pass; wider planes are split along W
    /// with [`TILE_OVERLAP`] columns of context on each inner edge.
    pub max_tile_width: Option<usize>,
    /// Put the input rows back on the retained planes instead of the
    /// network's reconstruction of them.
    pub copy_retained: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            max_tile_width: None,
            copy_retained: false,
        }
    }
}

fn predict_map<T: Real>(net: &Network<T>, map: &QuatMap) -> Result<QuatMap> {
    let x = maps_to_tensor::<T>(std::slice::from_ref(map))?;
    let y = net.predict(&x)?;
    Ok(tensor_to_maps(&y)?.remove(0))
}

fn column_slice(map: &QuatMap, start: usize, end: usize) -> QuatMap {
    map.crop(0, start, map.height, end - start, 1)
}

/// Super-resolves one plane along its first axis.
fn super_resolve_map<T: Real>(net: &Network<T>, map: &QuatMap, opts: &InferOptions) -> Result<QuatMap> {
    let scale = net.config.scale;
    let w = map.width;
    let mut out = match opts.max_tile_width {
        Some(tw) if tw < w => {
            if tw <= 2 * TILE_OVERLAP {
                return Err(Error::Config(format!("tile width {tw} must exceed twice the overlap {TILE_OVERLAP}")));
            }
            let core = tw - 2 * TILE_OVERLAP;
            let mut out = QuatMap {
                height: map.height * scale,
                width: w,
                data: vec![0.0; 4 * map.height * scale * w],
            };
            for start in (0..w).step_by(core) {
                let end = (start + core).min(w);
                let lo = start.saturating_sub(TILE_OVERLAP);
                let hi = (end + TILE_OVERLAP).min(w);
                let tile = predict_map(net, &column_slice(map, lo, hi))?;
                for r in 0..out.height {
                    for c in start..end {
                        out.set(r, c, tile.get(r, c - lo));
                    }
                }
            }
            out
        }
        _ => predict_map(net, map)?,
    };
    if opts.copy_retained {
        for r in 0..map.height {
            for c in 0..w {
                out.set(r * scale, c, map.get(r, c));
            }
        }
    }
    Ok(out)
}

/// Extracts planes along `normal` (x or y), super-resolves each along z
/// and reassembles the volume. Planes run in parallel.
pub fn super_resolve<T: Real>(net: &Network<T>, lr: &OrientationVolume, normal: Normal, opts: &InferOptions) -> Result<OrientationVolume> {
    if normal == Normal::Z {
        return Err(Error::Config("super-resolution runs on x- or y-normal planes".into()));
    }
    let planes = extract_planes(lr, normal);
    let sr: Vec<QuatMap> = planes
        .par_iter()
        .map(|m| super_resolve_map(net, m, opts))
        .collect::<Result<_>>()?;
    let scale = net.config.scale as f64;
    let pitch = [lr.pitch[0] / scale, lr.pitch[1], lr.pitch[2]];
    Ok(assemble_volume(&sr, normal, pitch)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sparse_section;
    use crate::net::{NetworkConfig, Variant};
    use crate::quat::Quat;

    fn tiny_with(variant: Variant) -> Network<f64> {
        let cfg = NetworkConfig {
            feature_channels: 8,
            n_qrsa_blocks: 1,
            scale: 2,
            variant,
            ..NetworkConfig::default()
        };
        Network::build(&cfg, 1).unwrap()
    }

    fn tiny() -> Network<f64> {
        tiny_with(Variant::Qrbsa)
    }

    fn lr_volume() -> OrientationVolume {
        OrientationVolume::from_fn([4, 3, 40], [2.0, 1.0, 1.0], |z, y, x| {
            Quat::from_axis_angle([0.3, 0.5, 1.0], 0.05 * (z + y) as f64 + 0.02 * x as f64)
        })
        .unwrap()
    }

    #[test]
    fn output_shape_and_pitch() {
        let net = tiny();
        let sr = super_resolve(&net, &lr_volume(), Normal::Y, &InferOptions::default()).unwrap();
        assert_eq!(sr.dims(), [8, 3, 40]);
        assert_eq!(sr.pitch, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn tiled_matches_whole_away_from_seams() {
        // without channel attention the receptive field is below the
        // overlap, so the stitched result equals the whole-plane pass
        let net = tiny_with(Variant::Qedsr);
        let lr = lr_volume();
        let whole = super_resolve(&net, &lr, Normal::Y, &InferOptions::default()).unwrap();
        let opts = InferOptions {
            max_tile_width: Some(24),
            ..InferOptions::default()
        };
        let tiled = super_resolve(&net, &lr, Normal::Y, &opts).unwrap();
        let diff = whole
            .data()
            .iter()
            .zip(tiled.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn copy_retained_restores_input_planes() {
        let net = tiny();
        let lr = lr_volume();
        let opts = InferOptions {
            copy_retained: true,
            ..InferOptions::default()
        };
        let sr = super_resolve(&net, &lr, Normal::X, &opts).unwrap();
        assert_eq!(sparse_section(&sr, 2).unwrap().data(), lr.data());
    }
}

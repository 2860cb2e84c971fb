//! Image-space (IPF) and orientation-space quality metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{OrientationVolume, QuatMap};
use crate::quat::{ipf_color, misorientation, Quat, SymmetrySet};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")]
    TooSmall(usize, usize),
    #[error("invalid orientation: {0}")]
    Orientation(String),
}

/// 8-bit RGB image, row-major, channels innermost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            data: vec![0; 3 * height * width],
        }
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.height, self.width, 3]
    }
}

/// IPF rendering of a quaternion map for one sample direction.
pub fn ipf_image(map: &QuatMap, sample_dir: [f64; 3]) -> RgbImage {
    let mut img = RgbImage::new(map.height, map.width);
    for r in 0..map.height {
        for c in 0..map.width {
            let rgb = ipf_color(map.quat(r, c), sample_dir).to_rgb8();
            let o = 3 * (r * map.width + c);
            img.data[o..o + 3].copy_from_slice(&rgb);
        }
    }
    img
}

/// IPF rendering of the xy section at `z` with the sample z direction.
pub fn ipf_z_plane(vol: &OrientationVolume, z: usize) -> RgbImage {
    let [_, ny, nx] = vol.dims();
    let mut img = RgbImage::new(ny, nx);
    for y in 0..ny {
        for x in 0..nx {
            let rgb = ipf_color(vol.get(z, y, x), [0.0, 0.0, 1.0]).to_rgb8();
            let o = 3 * (y * nx + x);
            img.data[o..o + 3].copy_from_slice(&rgb);
        }
    }
    img
}

/// Per-channel absolute difference.
pub fn difference_image(a: &RgbImage, b: &RgbImage) -> Result<RgbImage, MetricsError> {
    same_shape(a, b)?;
    Ok(RgbImage {
        height: a.height,
        width: a.width,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x.abs_diff(*y)).collect(),
    })
}

fn same_shape(a: &RgbImage, b: &RgbImage) -> Result<(), MetricsError> {
    if a.height != b.height || a.width != b.width || a.data.len() != b.data.len() {
        return Err(MetricsError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

/// `10 log10(255² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode Gaussian filter of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..SSIM_WINDOW).map(|k| win[k] * x[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| win[k] * tmp[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Single-scale SSIM (Gaussian window, valid region), averaged over the
/// three channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(h, w));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let plane = |img: &RgbImage| -> Vec<f64> { img.data.iter().skip(ch).step_by(3).map(|&v| v as f64).collect() };
        let (x, y) = (plane(a), plane(b));
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mx = filter_valid(&x, h, w, &win);
        let my = filter_valid(&y, h, w, &win);
        let mxx = filter_valid(&prod(&x, &x), h, w, &win);
        let myy = filter_valid(&prod(&y, &y), h, w, &win);
        let mxy = filter_valid(&prod(&x, &y), h, w, &win);
        let mut s = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / mx.len() as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneMetrics {
    pub z: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mean_misorientation_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mean_misorientation_deg: f64,
    pub per_plane: Vec<PlaneMetrics>,
}

/// Mean symmetry-reduced misorientation in degrees over all voxels.
pub fn mean_misorientation_deg(pred: &OrientationVolume, truth: &OrientationVolume, sym: &SymmetrySet) -> Result<f64, MetricsError> {
    check_dims(pred, truth)?;
    let n = pred.voxels();
    let sum = plane_misorientation_sums(pred, truth, sym)?.iter().sum::<f64>();
    Ok(sum / n as f64)
}

fn check_dims(a: &OrientationVolume, b: &OrientationVolume) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::ShapeMismatch(a.dims().to_vec(), b.dims().to_vec()));
    }
    Ok(())
}

fn quat_of(v: &[f32]) -> Quat {
    Quat::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64)
}

fn plane_misorientation_sums(pred: &OrientationVolume, truth: &OrientationVolume, sym: &SymmetrySet) -> Result<Vec<f64>, MetricsError> {
    (0..pred.dims()[0])
        .into_par_iter()
        .map(|z| {
            pred.z_plane(z)
                .chunks_exact(4)
                .zip(truth.z_plane(z).chunks_exact(4))
                .map(|(p, t)| {
                    misorientation(quat_of(p), quat_of(t), sym)
                        .map(f64::to_degrees)
                        .map_err(|e| MetricsError::Orientation(e.to_string()))
                })
                .sum::<Result<f64, _>>()
        })
        .collect()
}

/// Plane-averaged IPF PSNR/SSIM (xy sections, sample z) and mean voxel
/// misorientation, plus per-plane entries.
pub fn evaluate_volume(pred: &OrientationVolume, truth: &OrientationVolume, sym: &SymmetrySet) -> Result<MetricReport, MetricsError> {
    Ok(evaluate_volume_with_maps(pred, truth, sym)?.0)
}

/// As [`evaluate_volume`], also returning per-plane IPF difference images.
pub fn evaluate_volume_with_maps(
    pred: &OrientationVolume,
    truth: &OrientationVolume,
    sym: &SymmetrySet,
) -> Result<(MetricReport, Vec<RgbImage>), MetricsError> {
    check_dims(pred, truth)?;
    let [nz, ny, nx] = pred.dims();
    let mis = plane_misorientation_sums(pred, truth, sym)?;
    let planes: Vec<(PlaneMetrics, RgbImage)> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let (a, b) = (ipf_z_plane(pred, z), ipf_z_plane(truth, z));
            let m = PlaneMetrics {
                z,
                psnr_db: psnr(&a, &b)?,
                ssim: ssim(&a, &b)?,
                mean_misorientation_deg: mis[z] / (ny * nx) as f64,
            };
            Ok((m, difference_image(&a, &b)?))
        })
        .collect::<Result<_, MetricsError>>()?;
    let n = nz as f64;
    let (per_plane, maps): (Vec<_>, Vec<_>) = planes.into_iter().unzip();
    let report = MetricReport {
        psnr_db: per_plane.iter().map(|p| p.psnr_db).sum::<f64>() / n,
        ssim: per_plane.iter().map(|p| p.ssim).sum::<f64>() / n,
        mean_misorientation_deg: mis.iter().sum::<f64>() / pred.voxels() as f64,
        per_plane,
    };
    Ok((report, maps))
}

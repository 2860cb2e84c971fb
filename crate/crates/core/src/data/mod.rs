//! Orientation volumes, their on-disk format, and the plane/patch views
//! the network trains on.

mod planes;
mod png;
mod qvol;
mod sampling;
mod split;
mod synth;
mod volume;

use std::path::PathBuf;

use thiserror::Error;

pub use planes::{assemble_volume, extract_planes, nearest_plane_upsample, sparse_section, Normal, QuatMap};
pub use png::{read_png, write_png};
pub use qvol::{read_volume, volume_from_bytes, volume_to_bytes, write_volume, QVOL_MAGIC, QVOL_VERSION};
pub use sampling::{maps_to_tensor, sample_patches, tensor_to_maps, PatchSchedule};
pub use split::{split_dataset, split_sizes, SplitAxis, SplitSpec};
pub use synth::synth_voronoi;
pub use volume::{OrientationVolume, VOXEL_UNIT_TOLERANCE};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDType(u32),
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("length mismatch: header declares {expected} quaternions, payload holds {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("dimensions {0:?} overflow the addressable size")]
    DimOverflow([u64; 3]),
    #[error("invalid dimensions {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("voxel {index} is not a unit upper-hemisphere quaternion: {value:?}")]
    NotUnit { index: usize, value: [f32; 4] },
    #[error("{0}")]
    Invalid(String),
    #[error("png: {0}")]
    Png(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

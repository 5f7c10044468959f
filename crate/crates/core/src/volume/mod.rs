//! 3D volume handling: NIfTI-1 parsing, RAS reorientation, intensity
//! windowing, and multi-planar reconstruction.

mod frames;
mod mpr;
mod nifti;
mod orient;
mod window;

pub use frames::{extract_frames, in_plane_flips, OrientationMode, RenderFrame, SliceDirection};
pub use mpr::{resample_mpr, trilinear_sample};
pub use nifti::{load_label_map, parse_nifti, write_nifti, NiftiData, NiftiError};
pub use orient::{reorient_label_map_to_ras, reorient_to_ras, AxisTransform};
pub use window::{apply_window, WindowSpec};

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dims must all be >= 1, got {0:?}")]
    BadDims([usize; 3]),
    #[error("affine bottom row must be [0,0,0,1]")]
    BadAffineBottomRow,
    #[error("affine upper-left 3x3 is singular")]
    SingularAffine,
    #[error("voxel count {got} does not match dims {dims:?}")]
    VoxelCountMismatch { got: usize, dims: [usize; 3] },
    #[error("affine is oblique beyond the 45-degree reorientation tolerance; resample first")]
    ObliqueAffine,
    #[error("label map geometry does not match its companion volume")]
    GeometryMismatch,
    #[error("spacing must be positive, got {0:?}")]
    BadSpacing([f64; 3]),
}

/// 3D scalar grid with a voxel-to-world affine (RAS+ millimetres). Data is
/// stored in NIfTI order: the first axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub affine: [[f64; 4]; 4],
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        affine: [[f64; 4]; 4],
        voxels: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::BadDims(dims));
        }
        if affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(VolumeError::BadAffineBottomRow);
        }
        if det3(&affine).abs() < 1e-12 {
            return Err(VolumeError::SingularAffine);
        }
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(VolumeError::VoxelCountMismatch {
                got: voxels.len(),
                dims,
            });
        }
        Ok(Self {
            dims,
            affine,
            voxels,
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.voxels[self.index(i, j, k)]
    }

    /// Voxel index to world coordinates.
    pub fn to_world(&self, idx: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        [
            a[0][0] * idx[0] + a[0][1] * idx[1] + a[0][2] * idx[2] + a[0][3],
            a[1][0] * idx[0] + a[1][1] * idx[1] + a[1][2] * idx[2] + a[1][3],
            a[2][0] * idx[0] + a[2][1] * idx[1] + a[2][2] * idx[2] + a[2][3],
        ]
    }
}

/// Integer-labeled structure masks sharing a companion volume's geometry.
/// Label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub dims: [usize; 3],
    pub affine: [[f64; 4]; 4],
    pub labels: Vec<u32>,
    pub names: BTreeMap<u32, String>,
}

impl LabelMap {
    pub fn check_geometry(&self, v: &Volume) -> Result<(), VolumeError> {
        let affine_close = self
            .affine
            .iter()
            .flatten()
            .zip(v.affine.iter().flatten())
            .all(|(a, b)| (a - b).abs() < 1e-6);
        if self.dims != v.dims || !affine_close {
            return Err(VolumeError::GeometryMismatch);
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> u32 {
        self.labels[self.index(i, j, k)]
    }
}

pub(crate) fn det3(a: &[[f64; 4]; 4]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse of an affine voxel-to-world matrix (bottom row [0,0,0,1]).
pub(crate) fn invert_affine(a: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let d = det3(a);
    let inv = 1.0 / d;
    let m = [
        [
            (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv,
            (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv,
            (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv,
        ],
        [
            (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv,
            (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv,
            (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv,
        ],
        [
            (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv,
            (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv,
            (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv,
        ],
    ];
    let t = [a[0][3], a[1][3], a[2][3]];
    let mut out = [[0.0; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = m[r][c];
        }
        out[r][3] = -(m[r][0] * t[0] + m[r][1] * t[1] + m[r][2] * t[2]);
    }
    out[3] = [0.0, 0.0, 0.0, 1.0];
    out
}

pub const IDENTITY_AFFINE: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_inverse_round_trips() {
        let a = [
            [0.0, -2.0, 0.0, 5.0],
            [1.5, 0.0, 0.0, -3.0],
            [0.0, 0.0, 1.0, 7.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let inv = invert_affine(&a);
        // a * inv should be identity
        for r in 0..4 {
            for c in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a[r][k] * inv[k][c];
                }
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-9, "({r},{c}) = {s}");
            }
        }
    }

    #[test]
    fn volume_invariants_enforced() {
        assert!(Volume::new([0, 1, 1], IDENTITY_AFFINE, vec![]).is_err());
        let mut bad = IDENTITY_AFFINE;
        bad[3][0] = 1.0;
        assert!(Volume::new([1, 1, 1], bad, vec![0.0]).is_err());
        let mut sing = IDENTITY_AFFINE;
        sing[0][0] = 0.0;
        assert!(Volume::new([1, 1, 1], sing, vec![0.0]).is_err());
        assert!(Volume::new([2, 1, 1], IDENTITY_AFFINE, vec![0.0]).is_err());
        assert!(Volume::new([2, 1, 1], IDENTITY_AFFINE, vec![0.0, 1.0]).is_ok());
    }
}

//! Reorientation of near-axis-aligned volumes to RAS voxel axes by axis
//! permutation and flips. No resampling happens here; oblique volumes must
//! go through MPR first.

use super::{LabelMap, Volume, VolumeError};

/// Axis permutation plus flips: destination axis `a` reads source axis
/// `perm[a]`, reversed when `flip[a]` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisTransform {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

impl AxisTransform {
    pub const IDENTITY: AxisTransform = AxisTransform {
        perm: [0, 1, 2],
        flip: [false, false, false],
    };
}

/// Determine the transform that aligns voxel axes with +R, +A, +S. Each
/// affine column must be within 45 degrees of one world axis.
fn ras_axis_transform(affine: &[[f64; 4]; 4]) -> Result<AxisTransform, VolumeError> {
    let mut perm = [usize::MAX; 3];
    let mut flip = [false; 3];
    let mut claimed = [false; 3];
    for col in 0..3 {
        let v = [affine[0][col], affine[1][col], affine[2][col]];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm == 0.0 {
            return Err(VolumeError::SingularAffine);
        }
        let mut world = 0;
        for w in 1..3 {
            if v[w].abs() > v[world].abs() {
                world = w;
            }
        }
        // within 45 degrees of the dominant axis
        if v[world].abs() / norm < std::f64::consts::FRAC_1_SQRT_2 - 1e-9 {
            return Err(VolumeError::ObliqueAffine);
        }
        if claimed[world] {
            return Err(VolumeError::ObliqueAffine);
        }
        claimed[world] = true;
        perm[world] = col;
        flip[world] = v[world] < 0.0;
    }
    Ok(AxisTransform { perm, flip })
}

fn permute_data<T: Copy>(
    dims: [usize; 3],
    data: &[T],
    t: &AxisTransform,
) -> ([usize; 3], Vec<T>) {
    let new_dims = [dims[t.perm[0]], dims[t.perm[1]], dims[t.perm[2]]];
    let mut out = Vec::with_capacity(data.len());
    let src_index = |idx: [usize; 3]| idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]);
    for k in 0..new_dims[2] {
        for j in 0..new_dims[1] {
            for i in 0..new_dims[0] {
                let dst = [i, j, k];
                let mut src = [0usize; 3];
                for a in 0..3 {
                    let n = new_dims[a];
                    let pos = if t.flip[a] { n - 1 - dst[a] } else { dst[a] };
                    src[t.perm[a]] = pos;
                }
                out.push(data[src_index(src)]);
            }
        }
    }
    (new_dims, out)
}

fn transformed_affine(
    dims: [usize; 3],
    affine: &[[f64; 4]; 4],
    t: &AxisTransform,
) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    out[3] = [0.0, 0.0, 0.0, 1.0];
    for r in 0..3 {
        out[r][3] = affine[r][3];
    }
    for a in 0..3 {
        let src_col = t.perm[a];
        let n = dims[src_col];
        for r in 0..3 {
            if t.flip[a] {
                out[r][a] = -affine[r][src_col];
                out[r][3] += affine[r][src_col] * (n as f64 - 1.0);
            } else {
                out[r][a] = affine[r][src_col];
            }
        }
    }
    out
}

pub fn apply_axis_transform(v: &Volume, t: &AxisTransform) -> Volume {
    let (dims, voxels) = permute_data(v.dims, &v.voxels, t);
    let affine = transformed_affine(v.dims, &v.affine, t);
    Volume {
        dims,
        affine,
        voxels,
    }
}

/// Reorient so voxel axes align with +R, +A, +S. With `ras_most_origin`
/// all three axes are additionally reversed, putting the RAS-most corner
/// at index [0,0,0]. Returns the applied transform so a companion label
/// map can be moved identically.
pub fn reorient_to_ras(
    v: &Volume,
    ras_most_origin: bool,
) -> Result<(Volume, AxisTransform), VolumeError> {
    let mut t = ras_axis_transform(&v.affine)?;
    if ras_most_origin {
        for f in &mut t.flip {
            *f = !*f;
        }
    }
    Ok((apply_axis_transform(v, &t), t))
}

pub fn reorient_label_map_to_ras(lm: &LabelMap, t: &AxisTransform) -> LabelMap {
    let (dims, labels) = permute_data(lm.dims, &lm.labels, t);
    let affine = transformed_affine(lm.dims, &lm.affine, t);
    LabelMap {
        dims,
        affine,
        labels,
        names: lm.names.clone(),
    }
}

//! Multi-planar reconstruction: resample a volume onto an axis-aligned
//! world grid for a requested slice direction, values by trilinear
//! interpolation of the 8 enclosing voxels.

use super::frames::SliceDirection;
use super::{invert_affine, Volume, VolumeError};

/// Trilinear interpolation at fractional voxel coordinates. Points outside
/// the source grid return 0.
pub fn trilinear_sample(v: &Volume, x: f64, y: f64, z: f64) -> f32 {
    let max = [
        v.dims[0] as f64 - 1.0,
        v.dims[1] as f64 - 1.0,
        v.dims[2] as f64 - 1.0,
    ];
    if x < 0.0 || y < 0.0 || z < 0.0 || x > max[0] || y > max[1] || z > max[2] {
        return 0.0;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let z0 = z.floor() as usize;
    let x1 = (x0 + 1).min(v.dims[0] - 1);
    let y1 = (y0 + 1).min(v.dims[1] - 1);
    let z1 = (z0 + 1).min(v.dims[2] - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let fz = z - z0 as f64;

    let c000 = v.at(x0, y0, z0) as f64;
    let c100 = v.at(x1, y0, z0) as f64;
    let c010 = v.at(x0, y1, z0) as f64;
    let c110 = v.at(x1, y1, z0) as f64;
    let c001 = v.at(x0, y0, z1) as f64;
    let c101 = v.at(x1, y0, z1) as f64;
    let c011 = v.at(x0, y1, z1) as f64;
    let c111 = v.at(x1, y1, z1) as f64;

    let c00 = c000 * (1.0 - fx) + c100 * fx;
    let c10 = c010 * (1.0 - fx) + c110 * fx;
    let c01 = c001 * (1.0 - fx) + c101 * fx;
    let c11 = c011 * (1.0 - fx) + c111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    (c0 * (1.0 - fz) + c1 * fz) as f32
}

/// World-axis order of the output grid per slice direction; the third
/// entry is the slice normal.
fn axis_order(dir: SliceDirection) -> [usize; 3] {
    match dir {
        SliceDirection::Axial => [0, 1, 2],    // R, A, slice along S
        SliceDirection::Coronal => [0, 2, 1],  // R, S, slice along A
        SliceDirection::Sagittal => [1, 2, 0], // A, S, slice along R
    }
}

/// Resample onto a world-axis-aligned grid with the given spacing (mm per
/// output axis), covering the source volume's world bounding box. Sample
/// points outside the source grid become 0.
pub fn resample_mpr(
    v: &Volume,
    dir: SliceDirection,
    spacing: [f64; 3],
) -> Result<Volume, VolumeError> {
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(VolumeError::BadSpacing(spacing));
    }
    // world bounding box over the 8 voxel-grid corners
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for ci in 0..8 {
        let idx = [
            if ci & 1 == 0 { 0.0 } else { v.dims[0] as f64 - 1.0 },
            if ci & 2 == 0 { 0.0 } else { v.dims[1] as f64 - 1.0 },
            if ci & 4 == 0 { 0.0 } else { v.dims[2] as f64 - 1.0 },
        ];
        let w = v.to_world(idx);
        for a in 0..3 {
            lo[a] = lo[a].min(w[a]);
            hi[a] = hi[a].max(w[a]);
        }
    }

    let order = axis_order(dir);
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let extent = hi[order[a]] - lo[order[a]];
        dims[a] = (extent / spacing[a]).floor() as usize + 1;
    }

    let mut affine = [[0.0f64; 4]; 4];
    affine[3] = [0.0, 0.0, 0.0, 1.0];
    for a in 0..3 {
        affine[order[a]][a] = spacing[a];
        affine[order[a]][3] = lo[order[a]];
    }

    let inv = invert_affine(&v.affine);
    let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let mut world = [0.0f64; 3];
                world[order[0]] = lo[order[0]] + i as f64 * spacing[0];
                world[order[1]] = lo[order[1]] + j as f64 * spacing[1];
                world[order[2]] = lo[order[2]] + k as f64 * spacing[2];
                let vx = inv[0][0] * world[0] + inv[0][1] * world[1] + inv[0][2] * world[2]
                    + inv[0][3];
                let vy = inv[1][0] * world[0] + inv[1][1] * world[1] + inv[1][2] * world[2]
                    + inv[1][3];
                let vz = inv[2][0] * world[0] + inv[2][1] * world[1] + inv[2][2] * world[2]
                    + inv[2][3];
                voxels.push(trilinear_sample(v, vx, vy, vz));
            }
        }
    }
    Volume::new(dims, affine, voxels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::IDENTITY_AFFINE;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let n = dims[0] * dims[1] * dims[2];
        Volume::new(
            dims,
            IDENTITY_AFFINE,
            (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect(),
        )
        .unwrap()
    }

    /// Independent 8-corner oracle: explicit weighted sum over the cube
    /// corners, written without reference to the implementation.
    fn corner_oracle(v: &Volume, p: [f64; 3]) -> f64 {
        let base = [p[0].floor(), p[1].floor(), p[2].floor()];
        let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
        let mut acc = 0.0;
        for corner in 0..8usize {
            let mut weight = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx[a] = (base[a] as usize + bit).min(v.dims[a] - 1);
            }
            acc += weight * v.at(idx[0], idx[1], idx[2]) as f64;
        }
        acc
    }

    #[test]
    fn exact_at_grid_nodes() {
        let v = random_volume([5, 4, 3], 1);
        for k in 0..3 {
            for j in 0..4 {
                for i in 0..5 {
                    let s = trilinear_sample(&v, i as f64, j as f64, k as f64);
                    assert_eq!(s, v.at(i, j, k));
                }
            }
        }
    }

    #[test]
    fn midpoint_is_average() {
        let v = Volume::new([2, 1, 1], IDENTITY_AFFINE, vec![10.0, 20.0]).unwrap();
        assert!((trilinear_sample(&v, 0.5, 0.0, 0.0) - 15.0).abs() < 1e-6);
    }

    #[test]
    fn matches_corner_oracle_at_random_points() {
        let v = random_volume([7, 6, 5], 2);
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        for _ in 0..500 {
            let p = [
                rng.gen_range(0.0..6.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..4.0),
            ];
            let got = trilinear_sample(&v, p[0], p[1], p[2]) as f64;
            let want = corner_oracle(&v, p);
            assert!((got - want).abs() < 1e-5, "{p:?}: {got} vs {want}");
        }
    }

    #[test]
    fn outside_points_are_zero() {
        let v = random_volume([3, 3, 3], 4);
        assert_eq!(trilinear_sample(&v, -0.01, 1.0, 1.0), 0.0);
        assert_eq!(trilinear_sample(&v, 1.0, 2.01, 1.0), 0.0);
    }

    #[test]
    fn interpolation_is_linear_in_values() {
        let dims = [4, 4, 4];
        let v1 = random_volume(dims, 5);
        let v2 = random_volume(dims, 6);
        let (alpha, beta) = (0.3f32, 1.7f32);
        let mix = Volume::new(
            dims,
            IDENTITY_AFFINE,
            v1.voxels
                .iter()
                .zip(&v2.voxels)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        )
        .unwrap();
        let p = [1.3, 2.7, 0.4];
        let got = trilinear_sample(&mix, p[0], p[1], p[2]);
        let want = alpha * trilinear_sample(&v1, p[0], p[1], p[2])
            + beta * trilinear_sample(&v2, p[0], p[1], p[2]);
        assert!((got - want).abs() < 1e-3);
    }

    #[test]
    fn identity_resample_reproduces_source() {
        let v = random_volume([6, 5, 4], 7);
        let out = resample_mpr(&v, SliceDirection::Axial, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.dims, v.dims);
        for (a, b) in out.voxels.iter().zip(&v.voxels) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn coronal_resample_reorders_slice_axis() {
        let v = random_volume([4, 5, 6], 8);
        let out = resample_mpr(&v, SliceDirection::Coronal, [1.0, 1.0, 1.0]).unwrap();
        // output axes: R, S, slice along A
        assert_eq!(out.dims, [4, 6, 5]);
        for k in 0..5 {
            for j in 0..6 {
                for i in 0..4 {
                    assert_eq!(out.at(i, j, k), v.at(i, k, j));
                }
            }
        }
    }

    #[test]
    fn non_positive_spacing_rejected() {
        let v = random_volume([2, 2, 2], 9);
        assert!(resample_mpr(&v, SliceDirection::Axial, [1.0, 0.0, 1.0]).is_err());
    }
}

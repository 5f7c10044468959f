//! Extraction of 2D display frames from a RAS-aligned volume.
//!
//! `RasStorage` emits raw array order. `StandardView` applies the
//! radiological in-plane transform table: axial shows patient-A at the
//! image top and patient-R at the image left; coronal shows S at top, R at
//! left; sagittal shows S at top, A at left.

use serde::{Deserialize, Serialize};

use super::window::apply_window;
use super::{Volume, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum SliceDirection {
    Axial,
    Coronal,
    Sagittal,
}

impl SliceDirection {
    pub const ALL: [SliceDirection; 3] = [
        SliceDirection::Axial,
        SliceDirection::Coronal,
        SliceDirection::Sagittal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SliceDirection::Axial => "axial",
            SliceDirection::Coronal => "coronal",
            SliceDirection::Sagittal => "sagittal",
        }
    }

    /// Voxel axis perpendicular to the slice plane in a RAS volume.
    pub fn slice_axis(&self) -> usize {
        match self {
            SliceDirection::Axial => 2,
            SliceDirection::Coronal => 1,
            SliceDirection::Sagittal => 0,
        }
    }

    /// In-plane voxel axes (image x source, image y source) in a RAS volume.
    pub fn plane_axes(&self) -> [usize; 2] {
        match self {
            SliceDirection::Axial => [0, 1],
            SliceDirection::Coronal => [0, 2],
            SliceDirection::Sagittal => [1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMode {
    RasStorage,
    StandardView,
}

impl OrientationMode {
    pub const ALL: [OrientationMode; 2] =
        [OrientationMode::RasStorage, OrientationMode::StandardView];

    pub fn name(&self) -> &'static str {
        match self {
            OrientationMode::RasStorage => "ras_storage",
            OrientationMode::StandardView => "standard_view",
        }
    }
}

/// Whether the image x and y axes run against the corresponding voxel axes
/// for this (direction, mode) pair.
pub fn in_plane_flips(mode: OrientationMode, _dir: SliceDirection) -> [bool; 2] {
    match mode {
        OrientationMode::RasStorage => [false, false],
        // Standard view negates both in-plane patient axes for every plane:
        // axial x=-R y=-A, coronal x=-R y=-S, sagittal x=-A y=-S.
        OrientationMode::StandardView => [true, true],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderFrame {
    pub slice_direction: SliceDirection,
    pub orientation_mode: OrientationMode,
    pub slice_index: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RenderFrame {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Window the volume and emit one grayscale frame per slice along the
/// requested direction. The volume must already be RAS-aligned.
pub fn extract_frames(
    v: &Volume,
    mode: OrientationMode,
    dir: SliceDirection,
    w: &WindowSpec,
) -> Vec<RenderFrame> {
    let gray = apply_window(v, w);
    let s_axis = dir.slice_axis();
    let [ux, uy] = dir.plane_axes();
    let width = v.dims[ux];
    let height = v.dims[uy];
    let n_slices = v.dims[s_axis];
    let flips = in_plane_flips(mode, dir);

    let mut frames = Vec::with_capacity(n_slices);
    for s in 0..n_slices {
        let mut pixels = vec![0u8; width * height];
        for y in 0..height {
            for x in 0..width {
                let sx = if flips[0] { width - 1 - x } else { x };
                let sy = if flips[1] { height - 1 - y } else { y };
                let mut idx = [0usize; 3];
                idx[ux] = sx;
                idx[uy] = sy;
                idx[s_axis] = s;
                pixels[y * width + x] = gray[v.index(idx[0], idx[1], idx[2])];
            }
        }
        frames.push(RenderFrame {
            slice_direction: dir,
            orientation_mode: mode,
            slice_index: s,
            width,
            height,
            pixels,
        });
    }
    frames
}

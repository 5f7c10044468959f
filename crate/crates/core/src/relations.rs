//! Ground-truth spatial relations between annotated structures, in both
//! the patient frame (anatomical terms) and the image frame (colloquial
//! terms). All comparisons are centroid-based with a separation margin;
//! pairs closer than the margin are indeterminate.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::volume::{LabelMap, OrientationMode, SliceDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Mask,
    Bbox,
}

/// One labeled structure: tight bounding box (inclusive) and mask centroid
/// in voxel coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureAnnotation {
    pub label: u32,
    pub name: String,
    pub bbox: [[usize; 2]; 3],
    pub centroid: [f64; 3],
    pub source: AnnotationSource,
}

/// Patient axes of a RAS-aligned volume, by voxel axis index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientAxis {
    Right,
    Anterior,
    Superior,
}

impl PatientAxis {
    pub const ALL: [PatientAxis; 3] =
        [PatientAxis::Right, PatientAxis::Anterior, PatientAxis::Superior];

    pub fn index(&self) -> usize {
        match self {
            PatientAxis::Right => 0,
            PatientAxis::Anterior => 1,
            PatientAxis::Superior => 2,
        }
    }

    pub fn from_index(i: usize) -> PatientAxis {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum AnatomicalTerm {
    Superior,
    Inferior,
    Anterior,
    Posterior,
    Left,
    Right,
}

impl AnatomicalTerm {
    pub fn opposite(&self) -> AnatomicalTerm {
        match self {
            AnatomicalTerm::Superior => AnatomicalTerm::Inferior,
            AnatomicalTerm::Inferior => AnatomicalTerm::Superior,
            AnatomicalTerm::Anterior => AnatomicalTerm::Posterior,
            AnatomicalTerm::Posterior => AnatomicalTerm::Anterior,
            AnatomicalTerm::Left => AnatomicalTerm::Right,
            AnatomicalTerm::Right => AnatomicalTerm::Left,
        }
    }

    pub fn phrase(&self) -> &'static str {
        match self {
            AnatomicalTerm::Superior => "superior to",
            AnatomicalTerm::Inferior => "inferior to",
            AnatomicalTerm::Anterior => "anterior to",
            AnatomicalTerm::Posterior => "posterior to",
            AnatomicalTerm::Left => "to the patient's left of",
            AnatomicalTerm::Right => "to the patient's right of",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            AnatomicalTerm::Superior => "superior",
            AnatomicalTerm::Inferior => "inferior",
            AnatomicalTerm::Anterior => "anterior",
            AnatomicalTerm::Posterior => "posterior",
            AnatomicalTerm::Left => "left",
            AnatomicalTerm::Right => "right",
        }
    }
}

/// Viewer-frame terms. The cross-slice pair is phrased by sequence position
/// for 3D media.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ColloquialTerm {
    Above,
    Below,
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
}

impl ColloquialTerm {
    pub fn opposite(&self) -> ColloquialTerm {
        match self {
            ColloquialTerm::Above => ColloquialTerm::Below,
            ColloquialTerm::Below => ColloquialTerm::Above,
            ColloquialTerm::LeftOf => ColloquialTerm::RightOf,
            ColloquialTerm::RightOf => ColloquialTerm::LeftOf,
            ColloquialTerm::InFrontOf => ColloquialTerm::Behind,
            ColloquialTerm::Behind => ColloquialTerm::InFrontOf,
        }
    }

    pub fn phrase(&self) -> &'static str {
        match self {
            ColloquialTerm::Above => "above",
            ColloquialTerm::Below => "below",
            ColloquialTerm::LeftOf => "to the left of",
            ColloquialTerm::RightOf => "to the right of",
            ColloquialTerm::InFrontOf => "earlier in the slice sequence than",
            ColloquialTerm::Behind => "later in the slice sequence than",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            ColloquialTerm::Above => "above",
            ColloquialTerm::Below => "below",
            ColloquialTerm::LeftOf => "left-of",
            ColloquialTerm::RightOf => "right-of",
            ColloquialTerm::InFrontOf => "in-front-of",
            ColloquialTerm::Behind => "behind",
        }
    }
}

/// Image axes: x grows rightward, y grows downward, slice grows with
/// sequence position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageAxis {
    X,
    Y,
    Slice,
}

impl ImageAxis {
    pub const ALL: [ImageAxis; 3] = [ImageAxis::X, ImageAxis::Y, ImageAxis::Slice];

    pub fn index(&self) -> usize {
        match self {
            ImageAxis::X => 0,
            ImageAxis::Y => 1,
            ImageAxis::Slice => 2,
        }
    }
}

/// Signed permutation from patient axes (R, A, S) to image axes
/// (x-right, y-down, slice index). Rows are image axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMapping {
    pub m: [[i8; 3]; 3],
}

impl FrameMapping {
    pub fn for_view(dir: SliceDirection, mode: OrientationMode) -> FrameMapping {
        // Storage mode reads the voxel array directly; standard view
        // negates both in-plane axes (see volume::frames).
        let s: i8 = match mode {
            OrientationMode::RasStorage => 1,
            OrientationMode::StandardView => -1,
        };
        let m = match dir {
            SliceDirection::Axial => [[s, 0, 0], [0, s, 0], [0, 0, 1]],
            SliceDirection::Coronal => [[s, 0, 0], [0, 0, s], [0, 1, 0]],
            SliceDirection::Sagittal => [[0, s, 0], [0, 0, s], [1, 0, 0]],
        };
        FrameMapping { m }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, row) in self.m.iter().enumerate() {
            for (c, &e) in row.iter().enumerate() {
                out[r] += e as f64 * p[c];
            }
        }
        out
    }

    /// The patient axis feeding a given image axis, with its sign.
    pub fn preimage(&self, axis: ImageAxis) -> (PatientAxis, i8) {
        let row = self.m[axis.index()];
        for (c, &e) in row.iter().enumerate() {
            if e != 0 {
                return (PatientAxis::from_index(c), e);
            }
        }
        unreachable!("signed permutation row has a nonzero entry")
    }

    pub fn validate(&self) {
        for r in 0..3 {
            assert_eq!(self.m[r].iter().filter(|e| **e != 0).count(), 1);
            let col_nonzero = (0..3).filter(|&c| self.m[c][r] != 0).count();
            assert_eq!(col_nonzero, 1);
        }
    }
}

/// One annotation per nonzero label present: mask centroid = mean voxel
/// index, bbox = tight axis-aligned box.
pub fn annotate_structures(lm: &LabelMap) -> Vec<StructureAnnotation> {
    use std::collections::BTreeMap;
    struct Acc {
        bbox: [[usize; 2]; 3],
        sum: [f64; 3],
        count: u64,
    }
    let mut accs: BTreeMap<u32, Acc> = BTreeMap::new();
    for k in 0..lm.dims[2] {
        for j in 0..lm.dims[1] {
            for i in 0..lm.dims[0] {
                let label = lm.at(i, j, k);
                if label == 0 {
                    continue;
                }
                let acc = accs.entry(label).or_insert(Acc {
                    bbox: [[i, i], [j, j], [k, k]],
                    sum: [0.0; 3],
                    count: 0,
                });
                let idx = [i, j, k];
                for a in 0..3 {
                    acc.bbox[a][0] = acc.bbox[a][0].min(idx[a]);
                    acc.bbox[a][1] = acc.bbox[a][1].max(idx[a]);
                    acc.sum[a] += idx[a] as f64;
                }
                acc.count += 1;
            }
        }
    }
    accs.into_iter()
        .map(|(label, acc)| StructureAnnotation {
            label,
            name: lm
                .names
                .get(&label)
                .cloned()
                .unwrap_or_else(|| format!("structure {label}")),
            bbox: acc.bbox,
            centroid: [
                acc.sum[0] / acc.count as f64,
                acc.sum[1] / acc.count as f64,
                acc.sum[2] / acc.count as f64,
            ],
            source: AnnotationSource::Mask,
        })
        .collect()
}

/// Patient-frame relation of `a` relative to `b` along one axis, or `None`
/// when the centroid separation is below the margin.
pub fn anatomical_relation(
    a: &StructureAnnotation,
    b: &StructureAnnotation,
    axis: PatientAxis,
    margin: f64,
) -> Option<AnatomicalTerm> {
    let d = a.centroid[axis.index()] - b.centroid[axis.index()];
    if d.abs() < margin {
        return None;
    }
    let positive = match axis {
        PatientAxis::Right => AnatomicalTerm::Right,
        PatientAxis::Anterior => AnatomicalTerm::Anterior,
        PatientAxis::Superior => AnatomicalTerm::Superior,
    };
    Some(if d > 0.0 { positive } else { positive.opposite() })
}

/// Viewer-frame relation of `a` relative to `b` along one image axis under
/// the given mapping. Smaller y is above; smaller slice index is earlier.
pub fn colloquial_relation(
    a: &StructureAnnotation,
    b: &StructureAnnotation,
    mapping: &FrameMapping,
    axis: ImageAxis,
    margin: f64,
) -> Option<ColloquialTerm> {
    let ca = mapping.apply(a.centroid);
    let cb = mapping.apply(b.centroid);
    let d = ca[axis.index()] - cb[axis.index()];
    if d.abs() < margin {
        return None;
    }
    let negative = match axis {
        ImageAxis::X => ColloquialTerm::LeftOf,
        ImageAxis::Y => ColloquialTerm::Above,
        ImageAxis::Slice => ColloquialTerm::InFrontOf,
    };
    Some(if d < 0.0 { negative } else { negative.opposite() })
}

/// Term tables and the default frame mappings, exportable for audit.
pub fn conventions_json() -> serde_json::Value {
    let mut mappings = Vec::new();
    for dir in SliceDirection::ALL {
        for mode in OrientationMode::ALL {
            let fm = FrameMapping::for_view(dir, mode);
            mappings.push(json!({
                "slice_direction": dir.name(),
                "orientation_mode": mode.name(),
                "patient_to_image": fm.m,
            }));
        }
    }
    json!({
        "patient_axes": ["right", "anterior", "superior"],
        "image_axes": ["x_right", "y_down", "slice_index"],
        "anatomical_terms": {
            "superior": "inferior", "anterior": "posterior", "left": "right",
        },
        "colloquial_terms": {
            "above": "below", "left-of": "right-of", "in-front-of": "behind",
        },
        "frame_mappings": mappings,
    })
}

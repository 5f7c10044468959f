//! Question generation over the full parameter grid: media kind, slice
//! direction, orientation mode, visual prompt kind, text reference mode,
//! target type, and question type, plus the text-only and blank-background
//! ablations.
//!
//! Generation is deterministic: each parameter cell draws from its own RNG
//! seeded by the global seed and a hash of the cell key, so cells are
//! independent and output never depends on iteration schedule.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overlay::{
    render_frame, write_png, Background, OverlayGeometry, OverlaySpec, RenderError, RenderStyle,
    LETTERS,
};
use crate::relations::{
    anatomical_relation, annotate_structures, colloquial_relation, AnatomicalTerm, ColloquialTerm,
    FrameMapping, ImageAxis, PatientAxis, StructureAnnotation,
};
use crate::volume::{
    extract_frames, in_plane_flips, LabelMap, OrientationMode, SliceDirection, Volume, VolumeError,
    WindowSpec,
};

pub const COLOR_NAMES: [&str; 6] = ["red", "green", "blue", "yellow", "magenta", "cyan"];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing template: {0}")]
    MissingTemplate(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// --- Parameter enums -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Volume3d,
    Slice2d,
}

impl MediaKind {
    pub fn name(&self) -> &'static str {
        match self {
            MediaKind::Volume3d => "volume_3d",
            MediaKind::Slice2d => "slice_2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum VisualPromptKind {
    None,
    Point,
    Bbox,
    Mask,
}

impl VisualPromptKind {
    pub fn name(&self) -> &'static str {
        match self {
            VisualPromptKind::None => "none",
            VisualPromptKind::Point => "point",
            VisualPromptKind::Bbox => "bbox",
            VisualPromptKind::Mask => "mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TextRefMode {
    Name,
    Color,
    Letter,
}

impl TextRefMode {
    pub fn name(&self) -> &'static str {
        match self {
            TextRefMode::Name => "name",
            TextRefMode::Color => "color",
            TextRefMode::Letter => "letter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TargetType {
    StructureName,
    Label,
    RelationAnatomical,
    RelationColloquial,
    SliceDirection,
}

impl TargetType {
    pub fn name(&self) -> &'static str {
        match self {
            TargetType::StructureName => "structure_name",
            TargetType::Label => "label",
            TargetType::RelationAnatomical => "relation_anatomical",
            TargetType::RelationColloquial => "relation_colloquial",
            TargetType::SliceDirection => "slice_direction",
        }
    }

    pub fn is_relation(&self) -> bool {
        matches!(
            self,
            TargetType::RelationAnatomical | TargetType::RelationColloquial
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Open,
    ClosedTrue,
    ClosedInverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    TextOnly,
    BlankBackground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum Tag {
    RQ1,
    RQ2,
    RQ3,
    AB1,
    AB2,
}

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tag::RQ1 => "RQ1",
            Tag::RQ2 => "RQ2",
            Tag::RQ3 => "RQ3",
            Tag::AB1 => "AB1",
            Tag::AB2 => "AB2",
        };
        f.write_str(s)
    }
}

// --- Config and templates ------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub media: Vec<MediaKind>,
    pub slice_directions: Vec<SliceDirection>,
    pub orientation_modes: Vec<OrientationMode>,
    pub visual_prompt_kinds: Vec<VisualPromptKind>,
    pub text_ref_modes: Vec<TextRefMode>,
    pub target_types: Vec<TargetType>,
    pub question_types: Vec<QuestionType>,
    pub ablations: Vec<AblationKind>,
    pub pairs_per_cell: usize,
    pub seed: u64,
    /// Minimum centroid separation, in voxels, for a determinate relation.
    pub margin: f64,
    pub window: WindowSpec,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            media: vec![MediaKind::Volume3d, MediaKind::Slice2d],
            slice_directions: SliceDirection::ALL.to_vec(),
            orientation_modes: OrientationMode::ALL.to_vec(),
            visual_prompt_kinds: vec![
                VisualPromptKind::None,
                VisualPromptKind::Point,
                VisualPromptKind::Bbox,
                VisualPromptKind::Mask,
            ],
            text_ref_modes: vec![TextRefMode::Name, TextRefMode::Color, TextRefMode::Letter],
            target_types: vec![
                TargetType::StructureName,
                TargetType::Label,
                TargetType::RelationAnatomical,
                TargetType::RelationColloquial,
                TargetType::SliceDirection,
            ],
            question_types: vec![
                QuestionType::Open,
                QuestionType::ClosedTrue,
                QuestionType::ClosedInverted,
            ],
            ablations: vec![AblationKind::TextOnly, AblationKind::BlankBackground],
            pairs_per_cell: 2,
            seed: 0,
            margin: 3.0,
            window: WindowSpec::default_percentile(),
        }
    }
}

impl GenConfig {
    pub fn from_toml(s: &str) -> Result<Self, GenError> {
        let cfg: GenConfig =
            toml::from_str(s).map_err(|e| GenError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let checks: [(&str, bool); 8] = [
            ("media", self.media.is_empty()),
            ("slice_directions", self.slice_directions.is_empty()),
            ("orientation_modes", self.orientation_modes.is_empty()),
            ("visual_prompt_kinds", self.visual_prompt_kinds.is_empty()),
            ("text_ref_modes", self.text_ref_modes.is_empty()),
            ("target_types", self.target_types.is_empty()),
            ("question_types", self.question_types.is_empty()),
            ("pairs_per_cell", self.pairs_per_cell == 0),
        ];
        for (name, bad) in checks {
            if bad {
                return Err(GenError::InvalidConfig(format!("empty selection: {name}")));
            }
        }
        if !(self.margin > 0.0) {
            return Err(GenError::InvalidConfig("margin must be positive".into()));
        }
        Ok(())
    }
}

/// Question wording, loaded from TOML; templates are data, not code.
#[derive(Debug, Clone, Deserialize)]
pub struct Templates {
    strings: BTreeMap<String, String>,
}

impl Templates {
    pub fn builtin() -> Templates {
        toml::from_str(include_str!("../assets/templates.toml")).expect("builtin templates parse")
    }

    pub fn from_toml(s: &str) -> Result<Templates, GenError> {
        toml::from_str(s).map_err(|e| GenError::InvalidConfig(e.to_string()))
    }

    fn get(&self, key: &str) -> Result<&str, GenError> {
        self.strings
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| GenError::MissingTemplate(key.to_string()))
    }
}

fn subst(tpl: &str, vars: &[(&str, &str)]) -> String {
    let mut out = tpl.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

// --- Items ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamRecord {
    pub media: MediaKind,
    pub slice_direction: SliceDirection,
    pub orientation_mode: OrientationMode,
    pub visual_prompt_kind: VisualPromptKind,
    pub text_ref_mode: TextRefMode,
    pub structure_a: Option<u32>,
    pub structure_b: Option<u32>,
    /// Anatomical: "right" | "anterior" | "superior". Colloquial: "x" | "y" | "slice".
    pub relation_axis: Option<String>,
    /// Term key asserted by the closed statement, when closed.
    pub asserted_term: Option<String>,
    pub margin: f64,
    pub slice_index: Option<usize>,
    pub ablation: Option<AblationKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PromptRecord {
    pub structure: u32,
    pub kind: VisualPromptKind,
    pub color_index: usize,
    pub letter: char,
    /// In-frame geometry; for mask prompts this is the projected extent box.
    pub geometry: OverlayGeometry,
    /// Inclusive slice range over which the prompt is drawn.
    pub frame_range: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QAItem {
    pub id: String,
    pub media_ref: Option<String>,
    pub question: String,
    pub question_type: QuestionType,
    pub target_type: TargetType,
    pub answer_key: String,
    pub category_tags: Vec<Tag>,
    pub params: ParamRecord,
    pub prompt_records: Vec<PromptRecord>,
    /// Well-formed wrong answers, for the stub responder.
    pub distractors: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellCoverage {
    pub cell: String,
    pub requested: usize,
    pub emitted: usize,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipRecord {
    pub item_id: String,
    pub ablation: AblationKind,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CoverageReport {
    pub cells: Vec<CellCoverage>,
    pub ablation_skips: Vec<SkipRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct GenOutput {
    pub items: Vec<QAItem>,
    pub coverage: CoverageReport,
    /// media_ref -> ordered frame files, relative to the output directory.
    pub media_manifest: BTreeMap<String, Vec<String>>,
}

// --- Geometry projection -------------------------------------------------

fn project_point(
    c: [f64; 3],
    dir: SliceDirection,
    mode: OrientationMode,
    dims: [usize; 3],
) -> (i64, i64) {
    let [ux, uy] = dir.plane_axes();
    let flips = in_plane_flips(mode, dir);
    let fx = if flips[0] {
        (dims[ux] - 1) as f64 - c[ux]
    } else {
        c[ux]
    };
    let fy = if flips[1] {
        (dims[uy] - 1) as f64 - c[uy]
    } else {
        c[uy]
    };
    ((fx + 0.5).floor() as i64, (fy + 0.5).floor() as i64)
}

fn project_bbox(
    bbox: [[usize; 2]; 3],
    dir: SliceDirection,
    mode: OrientationMode,
    dims: [usize; 3],
) -> ([i64; 2], [i64; 2]) {
    let [ux, uy] = dir.plane_axes();
    let flips = in_plane_flips(mode, dir);
    let span = |axis: usize, flip: bool| -> [i64; 2] {
        let [lo, hi] = bbox[axis];
        if flip {
            let n = dims[axis] as i64;
            [n - 1 - hi as i64, n - 1 - lo as i64]
        } else {
            [lo as i64, hi as i64]
        }
    };
    let xs = span(ux, flips[0]);
    let ys = span(uy, flips[1]);
    ([xs[0], ys[0]], [xs[1], ys[1]])
}

fn mask_bits_for_slice(
    labels: &LabelMap,
    label: u32,
    dir: SliceDirection,
    mode: OrientationMode,
    slice: usize,
) -> (usize, usize, Vec<bool>) {
    let [ux, uy] = dir.plane_axes();
    let s_axis = dir.slice_axis();
    let w = labels.dims[ux];
    let h = labels.dims[uy];
    let flips = in_plane_flips(mode, dir);
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let sx = if flips[0] { w - 1 - x } else { x };
            let sy = if flips[1] { h - 1 - y } else { y };
            let mut idx = [0usize; 3];
            idx[ux] = sx;
            idx[uy] = sy;
            idx[s_axis] = slice;
            bits[y * w + x] = labels.at(idx[0], idx[1], idx[2]) == label;
        }
    }
    (w, h, bits)
}

// --- Media rendering -----------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct PromptDraw {
    label: u32,
    kind: VisualPromptKind,
    color_index: usize,
    letter: char,
}

struct MediaCtx<'a> {
    volume: &'a Volume,
    labels: &'a LabelMap,
    window: &'a WindowSpec,
    ann_by_label: BTreeMap<u32, &'a StructureAnnotation>,
    out_dir: Option<&'a Path>,
    style: RenderStyle,
    cache: BTreeMap<String, String>,
    manifest: BTreeMap<String, Vec<String>>,
    next_id: usize,
}

impl<'a> MediaCtx<'a> {
    fn overlays_for_slice(
        &self,
        prompts: &[PromptDraw],
        dir: SliceDirection,
        mode: OrientationMode,
        slice: usize,
    ) -> Vec<OverlaySpec> {
        let mut out = Vec::new();
        for p in prompts {
            let Some(ann) = self.ann_by_label.get(&p.label) else {
                continue;
            };
            let [lo, hi] = ann.bbox[dir.slice_axis()];
            if slice < lo || slice > hi {
                continue;
            }
            let geometry = match p.kind {
                VisualPromptKind::None => continue,
                VisualPromptKind::Point => {
                    let (x, y) = project_point(ann.centroid, dir, mode, self.volume.dims);
                    OverlayGeometry::Point { x, y }
                }
                VisualPromptKind::Bbox => {
                    let (min, max) = project_bbox(ann.bbox, dir, mode, self.volume.dims);
                    OverlayGeometry::Bbox { min, max }
                }
                VisualPromptKind::Mask => {
                    let (width, height, bits) =
                        mask_bits_for_slice(self.labels, p.label, dir, mode, slice);
                    if !bits.iter().any(|&b| b) {
                        continue;
                    }
                    OverlayGeometry::Mask {
                        width,
                        height,
                        bits,
                    }
                }
            };
            out.push(OverlaySpec {
                color_index: p.color_index,
                letter: Some(p.letter),
                geometry,
            });
        }
        out
    }

    /// Render (or reuse) the media for one item and return its media_ref.
    #[allow(clippy::too_many_arguments)]
    fn media_for(
        &mut self,
        media: MediaKind,
        dir: SliceDirection,
        mode: OrientationMode,
        background: Background,
        slice_index: Option<usize>,
        prompts: &[PromptDraw],
    ) -> Result<String, GenError> {
        let mut key = format!(
            "{}/{}/{}/{:?}/{:?}",
            media.name(),
            dir.name(),
            mode.name(),
            background,
            slice_index
        );
        for p in prompts {
            key.push_str(&format!(
                "|{}:{}:{}:{}",
                p.label,
                p.kind.name(),
                p.color_index,
                p.letter
            ));
        }
        if let Some(r) = self.cache.get(&key) {
            return Ok(r.clone());
        }
        let id = self.next_id;
        self.next_id += 1;
        let (media_ref, frame_files) = match media {
            MediaKind::Volume3d => {
                let media_ref = format!("media/m{id:04}");
                let frames = extract_frames(self.volume, mode, dir, self.window);
                let mut files = Vec::with_capacity(frames.len());
                for frame in &frames {
                    let rel = format!("{media_ref}/frame_{:03}.png", frame.slice_index);
                    if let Some(out_dir) = self.out_dir {
                        let overlays =
                            self.overlays_for_slice(prompts, dir, mode, frame.slice_index);
                        let img = render_frame(frame, &overlays, background, &self.style);
                        let path: PathBuf = out_dir.join(&rel);
                        std::fs::create_dir_all(path.parent().unwrap())?;
                        write_png(&img, &path)?;
                    }
                    files.push(rel);
                }
                (media_ref, files)
            }
            MediaKind::Slice2d => {
                let slice = slice_index.unwrap_or(self.volume.dims[dir.slice_axis()] / 2);
                let media_ref = format!("media/m{id:04}.png");
                if let Some(out_dir) = self.out_dir {
                    let frames = extract_frames(self.volume, mode, dir, self.window);
                    let overlays = self.overlays_for_slice(prompts, dir, mode, slice);
                    let img = render_frame(&frames[slice], &overlays, background, &self.style);
                    let path = out_dir.join(&media_ref);
                    std::fs::create_dir_all(path.parent().unwrap())?;
                    write_png(&img, &path)?;
                }
                (media_ref.clone(), vec![media_ref])
            }
        };
        self.cache.insert(key, media_ref.clone());
        self.manifest.insert(media_ref.clone(), frame_files);
        Ok(media_ref)
    }
}

// --- Cell enumeration and sampling ---------------------------------------

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    media: MediaKind,
    dir: SliceDirection,
    mode: OrientationMode,
    prompt: VisualPromptKind,
    text_ref: TextRefMode,
    target: TargetType,
}

impl Cell {
    fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}/{}",
            self.media.name(),
            self.dir.name(),
            self.mode.name(),
            self.prompt.name(),
            self.text_ref.name(),
            self.target.name()
        )
    }

    /// `Some(reason)` when the parameter combination is not askable.
    fn invalid_reason(&self) -> Option<&'static str> {
        if self.prompt == VisualPromptKind::None && self.text_ref != TextRefMode::Name {
            return Some("color/letter references require a visual prompt");
        }
        match self.target {
            TargetType::StructureName if self.text_ref == TextRefMode::Name => {
                Some("name reference would state the answer")
            }
            TargetType::Label if self.text_ref != TextRefMode::Name => {
                Some("label questions refer to structures by name")
            }
            TargetType::Label if self.prompt == VisualPromptKind::None => {
                Some("label questions need a visual prompt to label")
            }
            TargetType::SliceDirection if self.text_ref != TextRefMode::Name => {
                Some("slice-direction questions reference no structure")
            }
            _ => None,
        }
    }
}

/// One sampled instance inside a cell.
struct Sample {
    a: usize,
    b: Option<usize>,
    axis: Option<RelationAxis>,
}

#[derive(Debug, Clone, Copy)]
enum RelationAxis {
    Patient(PatientAxis),
    Image(ImageAxis),
}

impl RelationAxis {
    fn param_name(&self) -> &'static str {
        match self {
            RelationAxis::Patient(PatientAxis::Right) => "right",
            RelationAxis::Patient(PatientAxis::Anterior) => "anterior",
            RelationAxis::Patient(PatientAxis::Superior) => "superior",
            RelationAxis::Image(ImageAxis::X) => "x",
            RelationAxis::Image(ImageAxis::Y) => "y",
            RelationAxis::Image(ImageAxis::Slice) => "slice",
        }
    }
}

/// Term pair (actual, opposite) as (key, phrase) tuples.
struct RelationTerms {
    key: String,
    phrase: String,
    opp_key: String,
    opp_phrase: String,
    vocab: Vec<&'static str>,
}

const ANATOMICAL_KEYS: [&str; 6] = ["superior", "inferior", "anterior", "posterior", "left", "right"];
const COLLOQUIAL_KEYS: [&str; 6] = ["above", "below", "left-of", "right-of", "in-front-of", "behind"];

fn anatomical_terms(t: AnatomicalTerm) -> RelationTerms {
    RelationTerms {
        key: t.key().into(),
        phrase: t.phrase().into(),
        opp_key: t.opposite().key().into(),
        opp_phrase: t.opposite().phrase().into(),
        vocab: ANATOMICAL_KEYS.to_vec(),
    }
}

fn colloquial_terms(t: ColloquialTerm) -> RelationTerms {
    RelationTerms {
        key: t.key().into(),
        phrase: t.phrase().into(),
        opp_key: t.opposite().key().into(),
        opp_phrase: t.opposite().phrase().into(),
        vocab: COLLOQUIAL_KEYS.to_vec(),
    }
}

/// Relation axes admissible for a cell: everything for 3D media, in-plane
/// only for a single 2D slice.
fn allowed_axes(cell: &Cell) -> Vec<RelationAxis> {
    match cell.target {
        TargetType::RelationAnatomical => {
            let idxs: Vec<usize> = match cell.media {
                MediaKind::Volume3d => vec![0, 1, 2],
                MediaKind::Slice2d => cell.dir.plane_axes().to_vec(),
            };
            idxs.into_iter()
                .map(|i| RelationAxis::Patient(PatientAxis::from_index(i)))
                .collect()
        }
        TargetType::RelationColloquial => {
            let axes = match cell.media {
                MediaKind::Volume3d => ImageAxis::ALL.to_vec(),
                MediaKind::Slice2d => vec![ImageAxis::X, ImageAxis::Y],
            };
            axes.into_iter().map(RelationAxis::Image).collect()
        }
        _ => Vec::new(),
    }
}

fn relation_of(
    anns: &[StructureAnnotation],
    s: &Sample,
    cell: &Cell,
    margin: f64,
) -> Option<RelationTerms> {
    let a = &anns[s.a];
    let b = &anns[s.b?];
    match s.axis? {
        RelationAxis::Patient(ax) => {
            anatomical_relation(a, b, ax, margin).map(anatomical_terms)
        }
        RelationAxis::Image(ax) => {
            let fm = FrameMapping::for_view(cell.dir, cell.mode);
            colloquial_relation(a, b, &fm, ax, margin).map(colloquial_terms)
        }
    }
}

fn sample_cell(
    cell: &Cell,
    anns: &[StructureAnnotation],
    cfg: &GenConfig,
    rng: &mut Xoshiro256StarStar,
) -> Vec<Sample> {
    let mut out = Vec::new();
    if cell.target.is_relation() {
        let mut pairs: Vec<(usize, usize)> = (0..anns.len())
            .flat_map(|i| (0..anns.len()).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        pairs.shuffle(rng);
        let axes = allowed_axes(cell);
        for (i, j) in pairs {
            if out.len() >= cfg.pairs_per_cell {
                break;
            }
            let mut order = axes.clone();
            order.shuffle(rng);
            let cand = order.into_iter().find(|&axis| {
                relation_of(
                    anns,
                    &Sample {
                        a: i,
                        b: Some(j),
                        axis: Some(axis),
                    },
                    cell,
                    cfg.margin,
                )
                .is_some()
            });
            if let Some(axis) = cand {
                out.push(Sample {
                    a: i,
                    b: Some(j),
                    axis: Some(axis),
                });
            }
        }
    } else if cell.target == TargetType::SliceDirection {
        // one item per cell; a structure is only needed to host a prompt
        if cell.prompt == VisualPromptKind::None || !anns.is_empty() {
            let a = if anns.is_empty() {
                usize::MAX
            } else {
                rng.gen_range(0..anns.len())
            };
            out.push(Sample {
                a,
                b: None,
                axis: None,
            });
        }
    } else {
        let mut idxs: Vec<usize> = (0..anns.len()).collect();
        idxs.shuffle(rng);
        for i in idxs.into_iter().take(cfg.pairs_per_cell) {
            out.push(Sample {
                a: i,
                b: None,
                axis: None,
            });
        }
    }
    out
}

// --- Generation ----------------------------------------------------------

fn text_ref(mode: TextRefMode, name: &str, color_index: usize, letter: char) -> String {
    match mode {
        TextRefMode::Name => format!("the {name}"),
        TextRefMode::Color => format!(
            "the structure highlighted in {}",
            COLOR_NAMES[color_index % COLOR_NAMES.len()]
        ),
        TextRefMode::Letter => format!("the structure labeled {letter}"),
    }
}

fn prompt_record(
    ann: &StructureAnnotation,
    kind: VisualPromptKind,
    color_index: usize,
    letter: char,
    cell: &Cell,
    dims: [usize; 3],
    slice_index: Option<usize>,
) -> PromptRecord {
    let geometry = match kind {
        VisualPromptKind::Point => {
            let (x, y) = project_point(ann.centroid, cell.dir, cell.mode, dims);
            OverlayGeometry::Point { x, y }
        }
        // mask records its projected extent box
        _ => {
            let (min, max) = project_bbox(ann.bbox, cell.dir, cell.mode, dims);
            OverlayGeometry::Bbox { min, max }
        }
    };
    let frame_range = match slice_index {
        Some(s) => [s, s],
        None => ann.bbox[cell.dir.slice_axis()],
    };
    PromptRecord {
        structure: ann.label,
        kind,
        color_index,
        letter,
        geometry,
        frame_range,
    }
}

fn tags_for(cell: &Cell, axis: Option<RelationAxis>) -> Vec<Tag> {
    let mut tags = Vec::new();
    let cross_slice = match axis {
        Some(RelationAxis::Image(ImageAxis::Slice)) => true,
        Some(RelationAxis::Patient(p)) => p.index() == cell.dir.slice_axis(),
        _ => false,
    };
    if cell.target == TargetType::SliceDirection
        || (cell.target.is_relation() && cell.media == MediaKind::Volume3d && cross_slice)
    {
        tags.push(Tag::RQ1);
    }
    if cell.target.is_relation() {
        tags.push(Tag::RQ2);
    }
    if cell.prompt != VisualPromptKind::None {
        tags.push(Tag::RQ3);
    }
    tags
}

/// Generate the full item set (base grid plus ablations) for one scan.
/// The volume must already be RAS-aligned and geometry-matched with the
/// label map. Pass `out_dir` to render media; with `None` the same refs are
/// assigned but nothing is written.
pub fn generate(
    volume: &Volume,
    labels: &LabelMap,
    cfg: &GenConfig,
    templates: &Templates,
    out_dir: Option<&Path>,
) -> Result<GenOutput, GenError> {
    cfg.validate()?;
    labels.check_geometry(volume)?;
    let anns = annotate_structures(labels);
    let mut coverage = CoverageReport::default();
    if anns.is_empty() {
        coverage
            .warnings
            .push("label map has no nonzero labels".into());
    }

    let mut ctx = MediaCtx {
        volume,
        labels,
        window: &cfg.window,
        ann_by_label: anns.iter().map(|a| (a.label, a)).collect(),
        out_dir,
        style: RenderStyle::default(),
        cache: BTreeMap::new(),
        manifest: BTreeMap::new(),
        next_id: 0,
    };

    let mut items = Vec::new();
    let mut n_relation_pairs = 0usize;
    let mut counter = 0usize;

    for &media in &cfg.media {
        for &dir in &cfg.slice_directions {
            for &mode in &cfg.orientation_modes {
                for &prompt in &cfg.visual_prompt_kinds {
                    for &tref in &cfg.text_ref_modes {
                        for &target in &cfg.target_types {
                            let cell = Cell {
                                media,
                                dir,
                                mode,
                                prompt,
                                text_ref: tref,
                                target,
                            };
                            if let Some(reason) = cell.invalid_reason() {
                                coverage.cells.push(CellCoverage {
                                    cell: cell.key(),
                                    requested: 0,
                                    emitted: 0,
                                    skip_reason: Some(reason.into()),
                                });
                                continue;
                            }
                            let mut rng = Xoshiro256StarStar::seed_from_u64(
                                cfg.seed ^ fnv1a(&cell.key()),
                            );
                            let samples = sample_cell(&cell, &anns, cfg, &mut rng);
                            let requested = if cell.target == TargetType::SliceDirection {
                                1
                            } else {
                                cfg.pairs_per_cell
                            };
                            let mut emitted = 0usize;
                            for s in &samples {
                                if cell.target.is_relation() {
                                    n_relation_pairs += 1;
                                }
                                emitted += emit_item_group(
                                    &cell,
                                    s,
                                    &anns,
                                    cfg,
                                    templates,
                                    &mut ctx,
                                    &mut rng,
                                    &mut counter,
                                    &mut items,
                                )?;
                            }
                            coverage.cells.push(CellCoverage {
                                cell: cell.key(),
                                requested,
                                emitted,
                                skip_reason: None,
                            });
                        }
                    }
                }
            }
        }
    }

    if cfg
        .target_types
        .iter()
        .any(|t| t.is_relation())
        && n_relation_pairs == 0
    {
        coverage
            .warnings
            .push("no determinate structure pairs at the configured margin".into());
    }

    let (ablated, skips) = make_ablation_items(&items, cfg, &mut ctx)?;
    coverage.ablation_skips = skips;
    items.extend(ablated);

    Ok(GenOutput {
        items,
        coverage,
        media_manifest: ctx.manifest,
    })
}

/// Emit every configured question type for one sampled instance; returns
/// how many pair-level emissions happened (0 when the sample produced no
/// question at all).
#[allow(clippy::too_many_arguments)]
fn emit_item_group(
    cell: &Cell,
    s: &Sample,
    anns: &[StructureAnnotation],
    cfg: &GenConfig,
    templates: &Templates,
    ctx: &mut MediaCtx<'_>,
    rng: &mut Xoshiro256StarStar,
    counter: &mut usize,
    items: &mut Vec<QAItem>,
) -> Result<usize, GenError> {
    let ann_a = (s.a != usize::MAX).then(|| &anns[s.a]);
    let ann_b = s.b.map(|j| &anns[j]);
    let terms = if cell.target.is_relation() {
        Some(relation_of(anns, s, cell, cfg.margin).expect("sampled pair is determinate"))
    } else {
        None
    };

    // 2D media shows the slice through the structure(s) of interest
    let s_axis = cell.dir.slice_axis();
    let slice_index = (cell.media == MediaKind::Slice2d).then(|| {
        let c = match (ann_a, ann_b) {
            (Some(a), Some(b)) => (a.centroid[s_axis] + b.centroid[s_axis]) / 2.0,
            (Some(a), None) => a.centroid[s_axis],
            _ => ctx.volume.dims[s_axis] as f64 / 2.0,
        };
        ((c + 0.5).floor() as usize).min(ctx.volume.dims[s_axis] - 1)
    });

    // letters and colors are assigned per structure, never repeated in-item
    let mut prompts = Vec::new();
    let mut records = Vec::new();
    if cell.prompt != VisualPromptKind::None {
        for (slot, ann) in [ann_a, ann_b].into_iter().flatten().enumerate() {
            prompts.push(PromptDraw {
                label: ann.label,
                kind: cell.prompt,
                color_index: slot,
                letter: LETTERS[slot],
            });
            records.push(prompt_record(
                ann,
                cell.prompt,
                slot,
                LETTERS[slot],
                cell,
                ctx.volume.dims,
                slice_index,
            ));
        }
    }
    let media_ref = ctx.media_for(
        cell.media,
        cell.dir,
        cell.mode,
        Background::Image,
        slice_index,
        &prompts,
    )?;

    let media_desc = subst(
        templates.get(match cell.media {
            MediaKind::Volume3d => "media_volume_3d",
            MediaKind::Slice2d => "media_slice_2d",
        })?,
        &[("direction", cell.dir.name())],
    );
    let ref_of = |slot: usize, ann: &StructureAnnotation| {
        text_ref(cell.text_ref, &ann.name, slot, LETTERS[slot])
    };

    let mut emitted = 0usize;
    for &qt in &cfg.question_types {
        let built = build_question(
            cell, qt, ann_a, ann_b, terms.as_ref(), anns, templates, &media_desc, &ref_of, rng,
        )?;
        let Some((question, answer_key, asserted, distractors)) = built else {
            continue;
        };
        let tags = tags_for(cell, s.axis);
        let params = ParamRecord {
            media: cell.media,
            slice_direction: cell.dir,
            orientation_mode: cell.mode,
            visual_prompt_kind: cell.prompt,
            text_ref_mode: cell.text_ref,
            structure_a: ann_a.map(|a| a.label),
            structure_b: ann_b.map(|b| b.label),
            relation_axis: s.axis.map(|a| a.param_name().to_string()),
            asserted_term: asserted,
            margin: cfg.margin,
            slice_index,
            ablation: None,
        };
        let instruction = templates.get("answer_instruction")?;
        items.push(QAItem {
            id: format!("q{:05}", *counter),
            media_ref: Some(media_ref.clone()),
            question: format!("{question} {instruction}"),
            question_type: qt,
            target_type: cell.target,
            answer_key,
            category_tags: tags,
            params,
            prompt_records: records.clone(),
            distractors,
        });
        *counter += 1;
        emitted += 1;
    }
    Ok(if emitted > 0 { 1 } else { 0 })
}

type Built = Option<(String, String, Option<String>, Vec<String>)>;

/// Question text, answer key, asserted term (closed only), and distractors.
#[allow(clippy::too_many_arguments)]
fn build_question(
    cell: &Cell,
    qt: QuestionType,
    ann_a: Option<&StructureAnnotation>,
    ann_b: Option<&StructureAnnotation>,
    terms: Option<&RelationTerms>,
    anns: &[StructureAnnotation],
    templates: &Templates,
    media_desc: &str,
    ref_of: &dyn Fn(usize, &StructureAnnotation) -> String,
    rng: &mut Xoshiro256StarStar,
) -> Result<Built, GenError> {
    match cell.target {
        TargetType::RelationAnatomical | TargetType::RelationColloquial => {
            let (a, b, t) = (
                ann_a.expect("relation has a"),
                ann_b.expect("relation has b"),
                terms.expect("relation has terms"),
            );
            let ra = ref_of(0, a);
            let rb = ref_of(1, b);
            match qt {
                QuestionType::Open => {
                    let vocab = t.vocab.join(", ");
                    let q = subst(
                        templates.get("relation_open")?,
                        &[
                            ("media", media_desc),
                            ("ref_a", &ra),
                            ("ref_b", &rb),
                            ("vocab", &vocab),
                        ],
                    );
                    let distractors = t
                        .vocab
                        .iter()
                        .filter(|&&k| k != t.key)
                        .map(|k| k.to_string())
                        .collect();
                    Ok(Some((q, t.key.clone(), None, distractors)))
                }
                QuestionType::ClosedTrue | QuestionType::ClosedInverted {} => {
                    let (phrase, key, asserted) = if qt == QuestionType::ClosedTrue {
                        (&t.phrase, "True", t.key.clone())
                    } else {
                        (&t.opp_phrase, "False", t.opp_key.clone())
                    };
                    let q = subst(
                        templates.get("relation_closed")?,
                        &[
                            ("media", media_desc),
                            ("ref_a_cap", &capitalize(&ra)),
                            ("phrase", phrase),
                            ("ref_b", &rb),
                        ],
                    );
                    let other = if key == "True" { "False" } else { "True" };
                    Ok(Some((q, key.into(), Some(asserted), vec![other.into()])))
                }
            }
        }
        TargetType::StructureName => {
            let a = ann_a.expect("structure target has a");
            let ra = ref_of(0, a);
            let others: Vec<String> = anns
                .iter()
                .filter(|o| o.label != a.label && o.name != a.name)
                .map(|o| o.name.clone())
                .collect();
            match qt {
                QuestionType::Open => {
                    let q = subst(
                        templates.get("structure_name_open")?,
                        &[("media", media_desc), ("ref_a", &ra)],
                    );
                    let distractors = if others.is_empty() {
                        vec!["unknown".to_string()]
                    } else {
                        others
                    };
                    Ok(Some((q, a.name.clone(), None, distractors)))
                }
                QuestionType::ClosedTrue => {
                    let q = subst(
                        templates.get("structure_name_closed")?,
                        &[
                            ("media", media_desc),
                            ("ref_a_cap", &capitalize(&ra)),
                            ("name", &a.name),
                        ],
                    );
                    Ok(Some((q, "True".into(), Some(a.name.clone()), vec!["False".into()])))
                }
                QuestionType::ClosedInverted => {
                    // needs a second name to assert falsely
                    if others.is_empty() {
                        return Ok(None);
                    }
                    let wrong = others[rng.gen_range(0..others.len())].clone();
                    let q = subst(
                        templates.get("structure_name_closed")?,
                        &[
                            ("media", media_desc),
                            ("ref_a_cap", &capitalize(&ra)),
                            ("name", &wrong),
                        ],
                    );
                    Ok(Some((q, "False".into(), Some(wrong), vec!["True".into()])))
                }
            }
        }
        TargetType::Label => {
            let a = ann_a.expect("label target has a");
            let letter = LETTERS[0].to_string();
            match qt {
                QuestionType::Open => {
                    let q = subst(
                        templates.get("label_open")?,
                        &[("media", media_desc), ("name", &a.name)],
                    );
                    let distractors = LETTERS
                        .iter()
                        .filter(|&&l| l.to_string() != letter)
                        .map(|l| l.to_string())
                        .collect();
                    Ok(Some((q, letter, None, distractors)))
                }
                QuestionType::ClosedTrue | QuestionType::ClosedInverted => {
                    let (asserted, key) = if qt == QuestionType::ClosedTrue {
                        (letter.clone(), "True")
                    } else {
                        let wrong: Vec<char> =
                            LETTERS.iter().copied().filter(|&l| l != LETTERS[0]).collect();
                        (wrong[rng.gen_range(0..wrong.len())].to_string(), "False")
                    };
                    let q = subst(
                        templates.get("label_closed")?,
                        &[
                            ("media", media_desc),
                            ("name", &a.name),
                            ("letter", &asserted),
                        ],
                    );
                    let other = if key == "True" { "False" } else { "True" };
                    Ok(Some((q, key.into(), Some(asserted), vec![other.into()])))
                }
            }
        }
        TargetType::SliceDirection => {
            let actual = cell.dir.name();
            match qt {
                QuestionType::Open => {
                    let q = templates.get("slice_direction_open")?.to_string();
                    let distractors = SliceDirection::ALL
                        .iter()
                        .map(|d| d.name().to_string())
                        .filter(|n| n != actual)
                        .collect();
                    Ok(Some((q, actual.into(), None, distractors)))
                }
                QuestionType::ClosedTrue | QuestionType::ClosedInverted => {
                    let (asserted, key) = if qt == QuestionType::ClosedTrue {
                        (actual.to_string(), "True")
                    } else {
                        let wrong: Vec<&str> = SliceDirection::ALL
                            .iter()
                            .map(|d| d.name())
                            .filter(|&n| n != actual)
                            .collect();
                        (wrong[rng.gen_range(0..wrong.len())].to_string(), "False")
                    };
                    let q = subst(
                        templates.get("slice_direction_closed")?,
                        &[("direction", &asserted)],
                    );
                    let other = if key == "True" { "False" } else { "True" };
                    Ok(Some((q, key.into(), Some(asserted), vec![other.into()])))
                }
            }
        }
    }
}

/// Derive text-only (AB1) and blank-background (AB2) twins from base items.
fn make_ablation_items(
    items: &[QAItem],
    cfg: &GenConfig,
    ctx: &mut MediaCtx<'_>,
) -> Result<(Vec<QAItem>, Vec<SkipRecord>), GenError> {
    let mut out = Vec::new();
    let mut skips = Vec::new();
    for item in items {
        if cfg.ablations.contains(&AblationKind::TextOnly) {
            if item.target_type.is_relation() && item.params.text_ref_mode == TextRefMode::Name {
                let mut twin = item.clone();
                twin.id = format!("{}-ab1", item.id);
                twin.media_ref = None;
                twin.prompt_records.clear();
                twin.params.ablation = Some(AblationKind::TextOnly);
                twin.category_tags.push(Tag::AB1);
                out.push(twin);
            } else if item.target_type.is_relation() {
                skips.push(SkipRecord {
                    item_id: item.id.clone(),
                    ablation: AblationKind::TextOnly,
                    reason: "colors and letters are unseeable without an image".into(),
                });
            }
        }
        if cfg.ablations.contains(&AblationKind::BlankBackground) {
            if item.params.visual_prompt_kind == VisualPromptKind::None {
                skips.push(SkipRecord {
                    item_id: item.id.clone(),
                    ablation: AblationKind::BlankBackground,
                    reason: "no visual prompt to keep on a blank background".into(),
                });
                continue;
            }
            let prompts: Vec<PromptDraw> = item
                .prompt_records
                .iter()
                .map(|r| PromptDraw {
                    label: r.structure,
                    kind: r.kind,
                    color_index: r.color_index,
                    letter: r.letter,
                })
                .collect();
            let media_ref = ctx.media_for(
                item.params.media,
                item.params.slice_direction,
                item.params.orientation_mode,
                Background::White,
                item.params.slice_index,
                &prompts,
            )?;
            let mut twin = item.clone();
            twin.id = format!("{}-ab2", item.id);
            twin.media_ref = Some(media_ref);
            twin.params.ablation = Some(AblationKind::BlankBackground);
            twin.category_tags.push(Tag::AB2);
            out.push(twin);
        }
    }
    Ok((out, skips))
}

// --- Serialization -------------------------------------------------------

/// One canonical JSON object per line; field order is declaration order, so
/// reruns are byte-identical.
pub fn serialize_jsonl(items: &[QAItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("item serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(s: &str) -> Result<Vec<QAItem>, serde_json::Error> {
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

// --- Independent answer re-derivation ------------------------------------

/// Recompute the answer key from the label map and the item's parameter
/// record alone, without the generator's sampling state. `None` means the
/// key could not be reproduced.
pub fn rederive_answer_key(labels: &LabelMap, item: &QAItem) -> Option<String> {
    let anns = annotate_structures(labels);
    let find = |l: Option<u32>| l.and_then(|l| anns.iter().find(|a| a.label == l));
    let p = &item.params;
    let closed = |actual: &str| -> Option<String> {
        let asserted = p.asserted_term.as_deref()?;
        match item.question_type {
            QuestionType::Open => Some(actual.to_string()),
            QuestionType::ClosedTrue => (asserted == actual).then(|| "True".to_string()),
            QuestionType::ClosedInverted => (asserted != actual).then(|| "False".to_string()),
        }
    };
    match item.target_type {
        TargetType::SliceDirection => {
            let actual = p.slice_direction.name();
            if item.question_type == QuestionType::Open {
                Some(actual.to_string())
            } else {
                closed(actual)
            }
        }
        TargetType::StructureName => {
            let a = find(p.structure_a)?;
            if item.question_type == QuestionType::Open {
                Some(a.name.clone())
            } else {
                closed(&a.name)
            }
        }
        TargetType::Label => {
            let a = find(p.structure_a)?;
            let rec = item.prompt_records.iter().find(|r| r.structure == a.label)?;
            let actual = rec.letter.to_string();
            if item.question_type == QuestionType::Open {
                Some(actual)
            } else {
                closed(&actual)
            }
        }
        TargetType::RelationAnatomical => {
            let a = find(p.structure_a)?;
            let b = find(p.structure_b)?;
            let axis = match p.relation_axis.as_deref()? {
                "right" => PatientAxis::Right,
                "anterior" => PatientAxis::Anterior,
                "superior" => PatientAxis::Superior,
                _ => return None,
            };
            let term = anatomical_relation(a, b, axis, p.margin)?;
            if item.question_type == QuestionType::Open {
                Some(term.key().to_string())
            } else {
                closed(term.key())
            }
        }
        TargetType::RelationColloquial => {
            let a = find(p.structure_a)?;
            let b = find(p.structure_b)?;
            let axis = match p.relation_axis.as_deref()? {
                "x" => ImageAxis::X,
                "y" => ImageAxis::Y,
                "slice" => ImageAxis::Slice,
                _ => return None,
            };
            let fm = FrameMapping::for_view(p.slice_direction, p.orientation_mode);
            let term = colloquial_relation(a, b, &fm, axis, p.margin)?;
            if item.question_type == QuestionType::Open {
                Some(term.key().to_string())
            } else {
                closed(term.key())
            }
        }
    }
}

#[cfg(test)]
pub(crate) fn test_item(key: &str) -> QAItem {
    QAItem {
        id: "q00000".into(),
        media_ref: None,
        question: "test?".into(),
        question_type: QuestionType::Open,
        target_type: TargetType::RelationColloquial,
        answer_key: key.into(),
        category_tags: vec![Tag::RQ2],
        params: ParamRecord {
            media: MediaKind::Slice2d,
            slice_direction: SliceDirection::Axial,
            orientation_mode: OrientationMode::StandardView,
            visual_prompt_kind: VisualPromptKind::None,
            text_ref_mode: TextRefMode::Name,
            structure_a: None,
            structure_b: None,
            relation_axis: None,
            asserted_term: None,
            margin: 3.0,
            slice_index: None,
            ablation: None,
        },
        prompt_records: Vec::new(),
        distractors: Vec::new(),
    }
}

//! Intensity windowing: clip a scalar range (by sample percentiles or a
//! Hounsfield level/width pair) and map it linearly to display gray levels.

use serde::{Deserialize, Serialize};

use super::Volume;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowSpec {
    /// Clip at the given sample percentiles (0..=100), then map to 0..=255.
    Percentile { low: f64, high: f64 },
    /// Clip to [level - width/2, level + width/2] HU, then map to 0..=255.
    HuWindow { level: f64, width: f64 },
}

impl WindowSpec {
    /// Percentile defaults for MR intensity distributions.
    pub fn default_percentile() -> Self {
        WindowSpec::Percentile {
            low: 0.5,
            high: 99.5,
        }
    }

    /// Standard soft-tissue CT window.
    pub fn default_soft_tissue() -> Self {
        WindowSpec::HuWindow {
            level: 40.0,
            width: 400.0,
        }
    }
}

/// Linearly interpolated sample percentile over a sorted slice.
fn percentile_of_sorted(sorted: &[f32], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi.min(n - 1)] as f64 * frac
}

/// Window a volume to 8-bit gray, round-half-up. Constant volumes map to 0.
pub fn apply_window(v: &Volume, w: &WindowSpec) -> Vec<u8> {
    let (lo, hi) = match *w {
        WindowSpec::Percentile { low, high } => {
            let mut sorted = v.voxels.clone();
            sorted.sort_by(f32::total_cmp);
            (
                percentile_of_sorted(&sorted, low),
                percentile_of_sorted(&sorted, high),
            )
        }
        WindowSpec::HuWindow { level, width } => (level - width / 2.0, level + width / 2.0),
    };
    map_to_u8(&v.voxels, lo, hi)
}

pub(crate) fn map_to_u8(values: &[f32], lo: f64, hi: f64) -> Vec<u8> {
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let span = hi - lo;
    values
        .iter()
        .map(|&x| {
            // normalize before scaling so exact midpoints stay exact
            let t = ((x as f64 - lo) / span * 255.0 + 0.5).floor();
            t.clamp(0.0, 255.0) as u8
        })
        .collect()
}

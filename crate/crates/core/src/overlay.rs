//! Rendering of visual prompts (points, boxes, mask tints, letter labels)
//! onto grayscale frames, and deterministic PNG output.
//!
//! Text uses an embedded 5x7 bitmap font so output is identical across
//! platforms.

use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::RenderFrame;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("png encode error: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Six maximally-distinct sRGB colors, paired one-to-one with letters A-F.
pub const PALETTE: [[u8; 3]; 6] = [
    [230, 25, 75],   // red
    [60, 180, 75],   // green
    [0, 130, 200],   // blue
    [255, 225, 25],  // yellow
    [240, 50, 230],  // magenta
    [70, 240, 240],  // cyan
];

pub const LETTERS: [char; 6] = ['A', 'B', 'C', 'D', 'E', 'F'];

/// 5x7 glyphs for A-F, one row per byte, MSB = leftmost column.
const FONT: [[u8; 7]; 6] = [
    [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001], // A
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110], // B
    [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110], // C
    [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110], // D
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111], // E
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000], // F
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OverlayGeometry {
    Point { x: i64, y: i64 },
    Bbox { min: [i64; 2], max: [i64; 2] },
    Mask { width: usize, height: usize, bits: Vec<bool> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OverlaySpec {
    pub color_index: usize,
    pub letter: Option<char>,
    pub geometry: OverlayGeometry,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Image,
    White,
}

/// Stroke, radius, font scale, and tint alpha; the defaults match the
/// rendered fixtures.
#[derive(Debug, Clone, Copy)]
pub struct RenderStyle {
    pub point_radius: i64,
    pub stroke: i64,
    pub font_scale: i64,
    pub alpha: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            point_radius: 4,
            stroke: 2,
            font_scale: 3,
            alpha: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn solid(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn px(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    fn blend(&mut self, x: i64, y: i64, tint: [u8; 3], alpha: f64) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        for c in 0..3 {
            let v = self.data[i + c] as f64 * (1.0 - alpha) + tint[c] as f64 * alpha;
            self.data[i + c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
}

fn draw_glyph(img: &mut RgbImage, letter: char, x0: i64, y0: i64, scale: i64, rgb: [u8; 3]) {
    let idx = LETTERS.iter().position(|&l| l == letter);
    let Some(idx) = idx else { return };
    // clamp so the whole glyph stays inside the frame
    let gw = 5 * scale;
    let gh = 7 * scale;
    let x0 = x0.min(img.width as i64 - gw).max(0);
    let y0 = y0.min(img.height as i64 - gh).max(0);
    for (row, bits) in FONT[idx].iter().enumerate() {
        for col in 0..5 {
            if bits & (0b10000 >> col) != 0 {
                for dy in 0..scale {
                    for dx in 0..scale {
                        img.set(
                            x0 + col as i64 * scale + dx,
                            y0 + row as i64 * scale + dy,
                            rgb,
                        );
                    }
                }
            }
        }
    }
}

/// Render a grayscale frame with overlays to RGB. `Background::White`
/// replaces the medical image with white pixels but keeps every overlay
/// in place.
pub fn render_frame(
    frame: &RenderFrame,
    overlays: &[OverlaySpec],
    background: Background,
    style: &RenderStyle,
) -> RgbImage {
    let mut img = match background {
        Background::White => RgbImage::solid(frame.width, frame.height, [255, 255, 255]),
        Background::Image => {
            let mut data = Vec::with_capacity(frame.width * frame.height * 3);
            for &g in &frame.pixels {
                data.extend_from_slice(&[g, g, g]);
            }
            RgbImage {
                width: frame.width,
                height: frame.height,
                data,
            }
        }
    };

    for ov in overlays {
        let rgb = PALETTE[ov.color_index % PALETTE.len()];
        let label_anchor: (i64, i64);
        match &ov.geometry {
            OverlayGeometry::Point { x, y } => {
                let r = style.point_radius;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy <= r * r {
                            img.set(x + dx, y + dy, rgb);
                        }
                    }
                }
                label_anchor = (x + r + 2, y - r);
            }
            OverlayGeometry::Bbox { min, max } => {
                let w = style.stroke;
                for t in 0..w {
                    for x in min[0]..=max[0] {
                        img.set(x, min[1] + t, rgb);
                        img.set(x, max[1] - t, rgb);
                    }
                    for y in min[1]..=max[1] {
                        img.set(min[0] + t, y, rgb);
                        img.set(max[0] - t, y, rgb);
                    }
                }
                label_anchor = (max[0] + 2, min[1]);
            }
            OverlayGeometry::Mask {
                width,
                height,
                bits,
            } => {
                let mut min_x = i64::MAX;
                let mut min_y = i64::MAX;
                for y in 0..*height.min(&frame.height) {
                    for x in 0..*width.min(&frame.width) {
                        if bits[y * width + x] {
                            img.blend(x as i64, y as i64, rgb, style.alpha);
                            min_x = min_x.min(x as i64);
                            min_y = min_y.min(y as i64);
                        }
                    }
                }
                label_anchor = if min_x == i64::MAX {
                    (0, 0)
                } else {
                    (min_x, min_y - 7 * style.font_scale - 1)
                };
            }
        }
        if let Some(letter) = ov.letter {
            draw_glyph(&mut img, letter, label_anchor.0, label_anchor.1, style.font_scale, rgb);
        }
    }
    img
}

/// 8-bit RGB PNG, no interlacing; identical input yields identical bytes.
pub fn write_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), RenderError> {
    let file = std::fs::File::create(path)?;
    let w = BufWriter::new(file);
    let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&img.data)?;
    Ok(())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage, RenderError> {
    let file = std::fs::File::open(path)?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(std::io::Error::other)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(std::io::Error::other)?;
    buf.truncate(info.buffer_size());
    Ok(RgbImage {
        width: info.width as usize,
        height: info.height as usize,
        data: buf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{OrientationMode, SliceDirection};

    fn gray_frame(width: usize, height: usize, value: u8) -> RenderFrame {
        RenderFrame {
            slice_direction: SliceDirection::Axial,
            orientation_mode: OrientationMode::RasStorage,
            slice_index: 0,
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    #[test]
    fn no_overlays_replicates_grayscale() {
        let f = gray_frame(3, 2, 77);
        let img = render_frame(&f, &[], Background::Image, &RenderStyle::default());
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(img.px(x, y), [77, 77, 77]);
            }
        }
    }

    #[test]
    fn bbox_on_white_touches_only_outline() {
        let f = gray_frame(20, 20, 0);
        let ov = OverlaySpec {
            color_index: 0,
            letter: None,
            geometry: OverlayGeometry::Bbox {
                min: [4, 5],
                max: [12, 15],
            },
        };
        let style = RenderStyle {
            stroke: 1,
            ..Default::default()
        };
        let img = render_frame(&f, &[ov], Background::White, &style);
        for y in 0..20i64 {
            for x in 0..20i64 {
                let on_outline = (4..=12).contains(&x)
                    && (5..=15).contains(&y)
                    && (x == 4 || x == 12 || y == 5 || y == 15);
                let px = img.px(x as usize, y as usize);
                if on_outline {
                    assert_eq!(px, PALETTE[0], "({x},{y})");
                } else {
                    assert_eq!(px, [255, 255, 255], "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn mask_tint_alpha_blend_arithmetic() {
        let f = gray_frame(2, 1, 100);
        let ov = OverlaySpec {
            color_index: 0,
            letter: None,
            geometry: OverlayGeometry::Mask {
                width: 2,
                height: 1,
                bits: vec![true, false],
            },
        };
        let img = render_frame(&f, &[ov], Background::Image, &RenderStyle::default());
        // pure-red-channel check: 100 * 0.6 + 230 * 0.4 = 152
        let expect_r = (100.0 * 0.6 + PALETTE[0][0] as f64 * 0.4 + 0.5).floor() as u8;
        assert_eq!(img.px(0, 0)[0], expect_r);
        assert_eq!(img.px(1, 0), [100, 100, 100]);
    }

    #[test]
    fn blend_rounds_half_up() {
        // gray 100 under a full-red tint: red channel 100*0.6 + 255*0.4 = 162
        let mut img = RgbImage::solid(1, 1, [100, 100, 100]);
        img.blend(0, 0, [255, 0, 0], 0.4);
        assert_eq!(img.px(0, 0)[0], 162);
    }

    #[test]
    fn blank_background_has_no_source_pixels() {
        let f = gray_frame(10, 10, 33);
        let ov = OverlaySpec {
            color_index: 1,
            letter: Some('B'),
            geometry: OverlayGeometry::Point { x: 5, y: 5 },
        };
        let img = render_frame(&f, &[ov], Background::White, &RenderStyle::default());
        for y in 0..10 {
            for x in 0..10 {
                let px = img.px(x, y);
                assert!(px == [255, 255, 255] || px == PALETTE[1]);
            }
        }
    }

    #[test]
    fn png_round_trip_and_determinism() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256StarStar::seed_from_u64(31);
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage {
            width: 7,
            height: 5,
            data: (0..7 * 5 * 3).map(|_| rng.gen()).collect(),
        };
        let p1 = dir.path().join("a.png");
        let p2 = dir.path().join("b.png");
        write_png(&img, &p1).unwrap();
        write_png(&img, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = read_png(&p1).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn one_by_one_red_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::solid(1, 1, [255, 0, 0]);
        let p = dir.path().join("red.png");
        write_png(&img, &p).unwrap();
        assert_eq!(read_png(&p).unwrap().px(0, 0), [255, 0, 0]);
    }

    #[test]
    fn letter_glyph_lands_inside_frame() {
        let f = gray_frame(30, 30, 0);
        let ov = OverlaySpec {
            color_index: 2,
            letter: Some('A'),
            geometry: OverlayGeometry::Point { x: 28, y: 2 },
        };
        let img = render_frame(&f, &[ov], Background::White, &RenderStyle::default());
        // some glyph pixels must exist even though the anchor was clamped
        let n = (0..30)
            .flat_map(|y| (0..30).map(move |x| (x, y)))
            .filter(|&(x, y)| img.px(x, y) == PALETTE[2])
            .count();
        assert!(n > 15 * 9, "glyph missing, {n} colored pixels");
    }
}

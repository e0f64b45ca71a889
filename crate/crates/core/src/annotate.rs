//! Deterministic frame annotation: box outlines, label bands in a 5x7
//! bitmap font and per-face score strips.

use crate::emotion::{EmotionLabel, EmotionScores};
use crate::image::{luma, GrayImage, Rect, RgbImage};

/// Outline thickness in pixels, drawn inside the box.
pub const OUTLINE: usize = 2;
pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Label band height: glyph plus one pixel above and below.
pub const BAND_H: usize = GLYPH_H + 2;
pub const BAR_W: usize = 3;
pub const BAR_GAP: usize = 1;
pub const BAR_MAX_H: usize = 12;
/// Score strip: 7 bars inside a one-pixel frame.
pub const STRIP_W: usize = 7 * BAR_W + 6 * BAR_GAP + 2;
pub const STRIP_H: usize = BAR_MAX_H + 2;
const STRIP_BG: [u8; 3] = [32, 32, 32];

pub fn class_color(label: EmotionLabel) -> [u8; 3] {
    match label {
        EmotionLabel::Anger => [220, 40, 40],
        EmotionLabel::Disgust => [60, 160, 60],
        EmotionLabel::Fear => [150, 70, 200],
        EmotionLabel::Happiness => [250, 210, 40],
        EmotionLabel::Sadness => [50, 100, 220],
        EmotionLabel::Surprise => [250, 140, 30],
        EmotionLabel::Neutrality => [40, 190, 190],
    }
}

/// Uppercase A-Z, one row per entry, bit 4 is the leftmost column.
const GLYPHS: [[u8; GLYPH_H]; 26] = [
    [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
    [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
    [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
    [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
    [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
    [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
    [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
    [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
    [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
    [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
    [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
    [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
    [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
    [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
    [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
];

/// Glyph rows for `c`; characters outside A-Z (after uppercasing) are blank.
pub fn glyph(c: char) -> [u8; GLYPH_H] {
    let c = c.to_ascii_uppercase();
    if c.is_ascii_uppercase() {
        GLYPHS[(c as u8 - b'A') as usize]
    } else {
        [0; GLYPH_H]
    }
}

/// Width in pixels of `text` with one blank column between glyphs.
pub fn text_width(text: &str) -> usize {
    let n = text.chars().count();
    if n == 0 {
        0
    } else {
        n * (GLYPH_W + 1) - 1
    }
}

pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        let gx = x + (i * (GLYPH_W + 1)) as i64;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    img.put(gx + col as i64, y + r as i64, color);
                }
            }
        }
    }
}

fn fill(img: &mut RgbImage, x: i64, y: i64, w: usize, h: usize, color: [u8; 3]) {
    for dy in 0..h as i64 {
        for dx in 0..w as i64 {
            img.put(x + dx, y + dy, color);
        }
    }
}

/// Recolors the `OUTLINE`-pixel border just inside `r`.
pub fn draw_outline(img: &mut RgbImage, r: Rect, color: [u8; 3]) {
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            let edge = x - r.x < OUTLINE || r.right() - 1 - x < OUTLINE || y - r.y < OUTLINE || r.bottom() - 1 - y < OUTLINE;
            if edge {
                img.put(x as i64, y as i64, color);
            }
        }
    }
}

/// Which decorations [`annotate_frame`] draws besides the outline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotateStyle {
    pub label_band: bool,
    pub score_strip: bool,
}

impl AnnotateStyle {
    pub const FULL: AnnotateStyle = AnnotateStyle {
        label_band: true,
        score_strip: true,
    };
    pub const OUTLINE_ONLY: AnnotateStyle = AnnotateStyle {
        label_band: false,
        score_strip: false,
    };
}

impl Default for AnnotateStyle {
    fn default() -> Self {
        Self::FULL
    }
}

/// One face to draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceMark {
    pub rect: Rect,
    pub label: EmotionLabel,
    pub scores: EmotionScores,
}

/// Lifts `img` to RGB and draws every face in order.
///
/// The label band sits directly above the box (inside its top edge when
/// there is no room) and the score strip directly below, clipped at the
/// image border. Bars follow canonical label order, each `round(p·12)`
/// pixels tall.
pub fn annotate_frame(img: &GrayImage, faces: &[FaceMark], style: AnnotateStyle) -> RgbImage {
    let mut out = RgbImage::from(img);
    for face in faces {
        let color = class_color(face.label);
        let r = face.rect;
        draw_outline(&mut out, r, color);
        if style.label_band {
            let text = face.label.name().to_ascii_uppercase();
            let top = if r.y >= BAND_H { (r.y - BAND_H) as i64 } else { r.y as i64 };
            fill(&mut out, r.x as i64, top, text_width(&text) + 2, BAND_H, color);
            let [cr, cg, cb] = color;
            let ink = if luma(cr, cg, cb) > 128 { [0, 0, 0] } else { [255, 255, 255] };
            draw_text(&mut out, r.x as i64 + 1, top + 1, &text, ink);
        }
        if style.score_strip {
            let (sx, sy) = (r.x as i64, r.bottom() as i64);
            fill(&mut out, sx, sy, STRIP_W, STRIP_H, STRIP_BG);
            for (i, (label, p)) in face.scores.iter().enumerate() {
                let h = ((p as f64).clamp(0.0, 1.0) * BAR_MAX_H as f64).round() as usize;
                let bx = sx + 1 + (i * (BAR_W + BAR_GAP)) as i64;
                fill(&mut out, bx, sy + 1 + (BAR_MAX_H - h) as i64, BAR_W, h, class_color(label));
            }
        }
    }
    out
}

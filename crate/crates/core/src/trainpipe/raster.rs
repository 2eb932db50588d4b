//! Minimal RGBA canvas: lines, rectangles and 8×8 bitmap text.

use font8x8::{UnicodeFonts, BASIC_FONTS};

pub type Rgba = [u8; 4];

pub const BLACK: Rgba = [0, 0, 0, 255];
pub const WHITE: Rgba = [255, 255, 255, 255];
pub const GRAY: Rgba = [200, 200, 200, 255];
pub const RED: Rgba = [220, 20, 20, 255];
pub const BLUE: Rgba = [20, 60, 220, 255];

/// Series colors for line plots, cycled.
pub const PALETTE: [Rgba; 4] = [[31, 119, 180, 255], [255, 127, 14, 255], [44, 160, 44, 255], [148, 103, 189, 255]];

#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: Rgba) -> Self {
        Canvas { width, height, pixels: fill.iter().copied().cycle().take(width * height * 4).collect() }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgba {
        let i = (y * self.width + x) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    /// Out-of-bounds writes are dropped.
    pub fn set(&mut self, x: i64, y: i64, c: Rgba) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 4;
        self.pixels[i..i + 4].copy_from_slice(&c);
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgba) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    /// Bresenham line, `thickness` pixels square brush.
    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgba, thickness: i64) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        let off = thickness / 2;
        loop {
            self.fill_rect(x - off, y - off, thickness, thickness, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Draws `text` with its top-left corner at `(x, y)`; each glyph cell is
    /// `8·scale` pixels square. Unknown characters render as blanks.
    pub fn text(&mut self, x: i64, y: i64, text: &str, c: Rgba, scale: i64) {
        for (k, ch) in text.chars().enumerate() {
            let Some(glyph) = BASIC_FONTS.get(ch) else { continue };
            let gx = x + k as i64 * 8 * scale;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits & (1 << col) != 0 {
                        self.fill_rect(gx + col * scale, y + row as i64 * scale, scale, scale, c);
                    }
                }
            }
        }
    }

    /// Pastes another image with its top-left corner at `(x, y)`.
    pub fn blit(&mut self, x: i64, y: i64, pixels: &[u8], width: usize) {
        for (p, px) in pixels.chunks_exact(4).enumerate() {
            self.set(x + (p % width) as i64, y + (p / width) as i64, [px[0], px[1], px[2], px[3]]);
        }
    }
}

pub fn text_width(text: &str, scale: i64) -> i64 {
    text.chars().count() as i64 * 8 * scale
}

use image::{Rgb, RgbImage};

use crate::data::raster::Raster;
use crate::error::Result;
use crate::evaluation::metrics::{confusion, dice_from_jaccard};

pub const BACKGROUND: Rgb<u8> = Rgb([0, 139, 139]);
pub const GROUND_TRUTH: Rgb<u8> = Rgb([144, 238, 144]);
pub const PREDICTION: Rgb<u8> = Rgb([255, 255, 0]);
pub const CONTOUR: Rgb<u8> = Rgb([255, 0, 0]);
pub const CAPTION: Rgb<u8> = Rgb([255, 255, 255]);

/// Caption for one image, Dice derived from the Jaccard index.
pub fn caption(jaccard: Option<f64>) -> String {
    match jaccard {
        Some(j) => format!("JI {:.1}% DC {:.1}%", 100.0 * j, 100.0 * dice_from_jaccard(j)),
        None => "JI n/a DC n/a".to_string(),
    }
}

/// Foreground pixels with at least one background pixel among their eight
/// neighbours; positions outside the raster count as background.
pub fn contour(mask: &Raster) -> Raster {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let on = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as usize, y as usize) >= 0.5;
    Raster::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        if !on(x, y) {
            return 0.0;
        }
        for dy in -1..=1 {
            for dx in -1..=1 {
                if !on(x + dx, y + dy) {
                    return 1.0;
                }
            }
        }
        0.0
    })
}

/// Colour overlay of a prediction against its ground truth: background,
/// ground truth the prediction missed, predicted region, and the ground
/// truth contour drawn last.
pub fn overlay_colors(gt: &Raster, pred: &Raster) -> Result<RgbImage> {
    gt.same_dims(pred)?;
    let edge = contour(gt);
    Ok(RgbImage::from_fn(gt.width() as u32, gt.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if edge.get(x, y) == 1.0 {
            CONTOUR
        } else if pred.get(x, y) >= 0.5 {
            PREDICTION
        } else if gt.get(x, y) >= 0.5 {
            GROUND_TRUTH
        } else {
            BACKGROUND
        }
    }))
}

/// Overlay plus the per-image caption in the top-left corner. The image
/// raster only fixes the canvas size; the palette carries no gray levels.
pub fn render_overlay(image: &Raster, gt: &Raster, pred: &Raster) -> Result<RgbImage> {
    image.same_dims(gt)?;
    let mut out = overlay_colors(gt, pred)?;
    let j = confusion(pred, gt)?.jaccard();
    let scale = (image.width() / 160).max(1) as u32;
    draw_text(&mut out, &caption(j), 2 * scale, 2 * scale, scale, CAPTION);
    Ok(out)
}

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;

/// 5×7 bitmaps, one row per byte, most significant of the low five bits on
/// the left.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        '/' => [0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'a' => [0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        _ => [0; 7],
    }
}

/// Draws `text` with the built-in font, clipped to the image.
pub fn draw_text(img: &mut RgbImage, text: &str, x0: u32, y0: u32, scale: u32, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    for (i, c) in text.chars().enumerate() {
        let gx = x0 + i as u32 * (GLYPH_W + 1) * scale;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - col) & 1 == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let (x, y) = (gx + col * scale + sx, y0 + row as u32 * scale + sy);
                        if x < w && y < h {
                            img.put_pixel(x, y, color);
                        }
                    }
                }
            }
        }
    }
}

/// Width in pixels of `text` at `scale`.
pub fn text_width(text: &str, scale: u32) -> u32 {
    text.chars().count() as u32 * (GLYPH_W + 1) * scale
}

pub fn text_height(scale: u32) -> u32 {
    GLYPH_H * scale
}

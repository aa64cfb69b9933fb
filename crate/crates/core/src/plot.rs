//! Minimal line-chart rasterizer writing PNG files.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::{Error, Result};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const GRID: Rgb<u8> = Rgb([225, 225, 225]);
/// Series colors, cycled.
pub const PALETTE: [Rgb<u8>; 5] = [
    Rgb([31, 119, 180]),
    Rgb([214, 39, 40]),
    Rgb([44, 160, 44]),
    Rgb([148, 103, 189]),
    Rgb([255, 127, 14]),
];

/// 5×7 glyphs, one byte per row, low five bits used (bit 4 = leftmost).
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
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
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '/' => [0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0; 7],
    }
}

const GLYPH_ADVANCE: u32 = 6;

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Draws `text` with its top-left corner at `(x, y)`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..5 {
                if row & (0x10 >> dx) != 0 {
                    put(
                        img,
                        x + i as i64 * GLYPH_ADVANCE as i64 + dx,
                        y + dy as i64,
                        color,
                    );
                }
            }
        }
    }
}

/// Text drawn bottom-to-top, for y-axis titles.
fn draw_text_vertical(img: &mut RgbImage, x: i64, y_bottom: i64, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..5 {
                if row & (0x10 >> dx) != 0 {
                    put(
                        img,
                        x + dy as i64,
                        y_bottom - i as i64 * GLYPH_ADVANCE as i64 - dx,
                        color,
                    );
                }
            }
        }
    }
}

fn text_width(text: &str) -> i64 {
    text.chars().count() as i64 * GLYPH_ADVANCE as i64
}

/// Bresenham line, `thick` pixels wide (square brush).
fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>, thick: i64) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for ox in 0..thick {
            for oy in 0..thick {
                put(img, x + ox - thick / 2, y + oy - thick / 2, c);
            }
        }
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

/// Compact tick label.
fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// One named polyline.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
}

const W: u32 = 640;
const H: u32 = 420;
const LEFT: i64 = 70;
const RIGHT: i64 = 20;
const TOP: i64 = 30;
const BOTTOM: i64 = 50;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Renders a line chart. Non-finite points are skipped.
pub fn render(chart: &Chart) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, WHITE);
    let pts = || chart.series.iter().flat_map(|s| s.points.iter().copied());
    let (x_lo, x_hi) = bounds(pts().map(|p| p.0));
    let (y_lo, y_hi) = bounds(pts().map(|p| p.1));
    let (pw, ph) = (W as i64 - LEFT - RIGHT, H as i64 - TOP - BOTTOM);
    let to_px = |x: f64, y: f64| {
        (
            LEFT + ((x - x_lo) / (x_hi - x_lo) * pw as f64).round() as i64,
            TOP + ph - ((y - y_lo) / (y_hi - y_lo) * ph as f64).round() as i64,
        )
    };

    for i in 0..=4 {
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let (_, py) = to_px(x_lo, fy);
        line(&mut img, (LEFT, py), (LEFT + pw, py), GRID, 1);
        let label = fmt_tick(fy);
        draw_text(
            &mut img,
            LEFT - 6 - text_width(&label),
            py - 3,
            &label,
            BLACK,
        );
        let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let (px, _) = to_px(fx, y_lo);
        line(&mut img, (px, TOP + ph), (px, TOP + ph + 4), BLACK, 1);
        let label = fmt_tick(fx);
        draw_text(
            &mut img,
            px - text_width(&label) / 2,
            TOP + ph + 8,
            &label,
            BLACK,
        );
    }
    line(&mut img, (LEFT, TOP), (LEFT, TOP + ph), BLACK, 1);
    line(&mut img, (LEFT, TOP + ph), (LEFT + pw, TOP + ph), BLACK, 1);
    draw_text(
        &mut img,
        LEFT + pw / 2 - text_width(chart.x_label) / 2,
        H as i64 - 18,
        chart.x_label,
        BLACK,
    );
    draw_text_vertical(
        &mut img,
        8,
        TOP + ph / 2 + text_width(chart.y_label) / 2,
        chart.y_label,
        BLACK,
    );
    draw_text(
        &mut img,
        LEFT + pw / 2 - text_width(chart.title) / 2,
        10,
        chart.title,
        BLACK,
    );

    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite: Vec<_> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        if finite.len() == 1 {
            let p = to_px(finite[0].0, finite[0].1);
            line(&mut img, (LEFT, p.1), (LEFT + pw, p.1), color, 2);
        }
        for w in finite.windows(2) {
            line(
                &mut img,
                to_px(w[0].0, w[0].1),
                to_px(w[1].0, w[1].1),
                color,
                2,
            );
        }
        // Legend in the top-right corner of the plot area.
        let ly = TOP + 6 + i as i64 * 12;
        let lx = LEFT + pw - 10 - text_width(s.name) - 20;
        line(&mut img, (lx, ly + 3), (lx + 14, ly + 3), color, 2);
        draw_text(&mut img, lx + 18, ly, s.name, BLACK);
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

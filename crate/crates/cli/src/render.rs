//! Static layout pictures: one PNG per frame with labeled boxes and a
//! background-motion arrow in the top-right corner.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::Context;
use flowzero_core::dss::{BoundingBox, Direction, DynamicSceneSyntax};
use image::{Rgb, RgbImage};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([30, 30, 30]);
const DASH: i64 = 6;

const PALETTE: [[u8; 3]; 10] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
    [188, 189, 34],
    [127, 127, 127],
];

/// Stable per-name color (FNV-1a over the name).
pub fn color_for(name: &str) -> Rgb<u8> {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Rgb(PALETTE[(h % PALETTE.len() as u64) as usize])
}

/// 5x7 glyphs, one row per byte, bit 4 is the leftmost column.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
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
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '-' | '_' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '?' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
        _ => [0; 7],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: i64, c: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let ox = x + i as i64 * 6 * scale;
        for (ry, row) in rows.iter().enumerate() {
            for rx in 0..5 {
                if row & (0x10 >> rx) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            put(img, ox + rx * scale + dx, y + ry as i64 * scale + dy, c);
                        }
                    }
                }
            }
        }
    }
}

fn draw_line(
    img: &mut RgbImage,
    (x0, y0): (i64, i64),
    (x1, y1): (i64, i64),
    c: Rgb<u8>,
    dashed: bool,
) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err, mut step) = (x0, y0, dx + dy, 0i64);
    loop {
        if !dashed || (step / DASH) % 2 == 0 {
            put(img, x, y, c);
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
        step += 1;
    }
}

/// Box outline clipped to the canvas. Edges that fall outside are drawn
/// dashed along the canvas border they were clipped to.
fn draw_box(img: &mut RgbImage, b: &BoundingBox, c: Rgb<u8>, label: &str) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (max_x, max_y) = (img.width() as i64 - 1, img.height() as i64 - 1);
    let px = |v: f64| (v * w).round() as i64;
    let py = |v: f64| (v * h).round() as i64;
    let (bx1, by1, bx2, by2) = (px(b.x1()), py(b.y1()), px(b.x2()) - 1, py(b.y2()) - 1);
    let (x1, y1, x2, y2) = (bx1.max(0), by1.max(0), bx2.min(max_x), by2.min(max_y));
    if x1 > x2 || y1 > y2 {
        return;
    }
    // Light fill.
    for y in y1..=y2 {
        for x in x1..=x2 {
            let p = img.get_pixel(x as u32, y as u32).0;
            let mix = |a: u8, b: u8| ((a as u16 * 4 + b as u16) / 5) as u8;
            img.put_pixel(
                x as u32,
                y as u32,
                Rgb([mix(p[0], c[0]), mix(p[1], c[1]), mix(p[2], c[2])]),
            );
        }
    }
    let edges = [
        ((x1, y1), (x2, y1), by1 < 0, (0, 1)),
        ((x1, y2), (x2, y2), by2 > max_y, (0, -1)),
        ((x1, y1), (x1, y2), bx1 < 0, (1, 0)),
        ((x2, y1), (x2, y2), bx2 > max_x, (-1, 0)),
    ];
    for (a, z, clipped, (nx, ny)) in edges {
        for t in 0..2 {
            draw_line(
                img,
                (a.0 + nx * t, a.1 + ny * t),
                (z.0 + nx * t, z.1 + ny * t),
                c,
                clipped,
            );
        }
    }
    draw_text(img, x1 + 4, y1 + 4, label, 2, c);
}

/// Arrow pointing the way the background moves; a question mark in a
/// ring for random motion.
fn draw_motion(img: &mut RgbImage, direction: Direction, speed: f64) {
    let r = 28.0;
    let (cx, cy) = (img.width() as f64 - r - 8.0, r + 8.0);
    let ring = |img: &mut RgbImage| {
        for k in 0..180 {
            let a = k as f64 * 2.0 * PI / 180.0;
            put(
                img,
                (cx + r * a.cos()).round() as i64,
                (cy + r * a.sin()).round() as i64,
                INK,
            );
        }
    };
    ring(img);
    let (dx, dy): (f64, f64) = match direction {
        Direction::Left => (-1.0, 0.0),
        Direction::Right => (1.0, 0.0),
        Direction::Up => (0.0, -1.0),
        Direction::Down => (0.0, 1.0),
        Direction::LeftUp => (-1.0, -1.0),
        Direction::LeftDown => (-1.0, 1.0),
        Direction::RightUp => (1.0, -1.0),
        Direction::RightDown => (1.0, 1.0),
        Direction::Random => {
            draw_text(img, cx as i64 - 5, cy as i64 - 7, "?", 2, INK);
            return;
        }
    };
    let n = dx.hypot(dy);
    let (ux, uy) = (dx / n, dy / n);
    let len = (r - 4.0) * (0.35 + 0.65 * speed);
    let tip = (cx + ux * len, cy + uy * len);
    let tail = (cx - ux * len, cy - uy * len);
    let to_i = |p: (f64, f64)| (p.0.round() as i64, p.1.round() as i64);
    for off in [-1.0, 0.0, 1.0] {
        let (ox, oy) = (-uy * off, ux * off);
        draw_line(
            img,
            to_i((tail.0 + ox, tail.1 + oy)),
            to_i((tip.0 + ox, tip.1 + oy)),
            INK,
            false,
        );
    }
    for side in [-1.0, 1.0] {
        let a = uy.atan2(ux) + PI + side * PI / 6.0;
        let wing = (tip.0 + 10.0 * a.cos(), tip.1 + 10.0 * a.sin());
        draw_line(img, to_i(tip), to_i(wing), INK, false);
    }
}

pub fn render_frame(dss: &DynamicSceneSyntax, index: usize, canvas: (u32, u32)) -> RgbImage {
    let mut img = RgbImage::from_pixel(canvas.0, canvas.1, WHITE);
    let frame = &dss.frames()[index];
    for entry in &frame.layout {
        draw_box(
            &mut img,
            &entry.bbox,
            color_for(&entry.object),
            &entry.object,
        );
    }
    draw_motion(&mut img, frame.background.direction, frame.background.speed);
    let tag = format!("{}/{}", index + 1, dss.num_frames());
    draw_text(&mut img, 8, canvas.1 as i64 - 22, &tag, 2, INK);
    img
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:03}.png")
}

/// Write one PNG per frame into `out`.
pub fn render_all(
    dss: &DynamicSceneSyntax,
    out: &Path,
    canvas: (u32, u32),
) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    (0..dss.num_frames())
        .map(|i| {
            let path = out.join(frame_file_name(i));
            render_frame(dss, i, canvas)
                .save(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

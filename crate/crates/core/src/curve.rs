//! Loss-curve output: smoothed series as a resampled CSV or a small PNG.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::fsutil::{save_png, write_atomic};

/// At most `points` entries picked at evenly spaced indices, always keeping
/// the first and last.
pub fn resample_indices(len: usize, points: usize) -> Vec<usize> {
    if len == 0 || points == 0 {
        return Vec::new();
    }
    if len <= points || points == 1 {
        return if points == 1 { vec![len - 1] } else { (0..len).collect() };
    }
    let mut out: Vec<usize> = (0..points)
        .map(|i| ((i as f64) * (len - 1) as f64 / (points - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// `step,<column>` rows for the resampled series.
pub fn write_curve_csv(path: &Path, column: &str, steps: &[u64], values: &[f64], points: usize) -> Result<()> {
    let mut text = format!("step,{column}\n");
    for i in resample_indices(values.len(), points) {
        text.push_str(&format!("{},{:.6}\n", steps[i], values[i]));
    }
    write_atomic(path, text.as_bytes())
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
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

/// Line plot of `values` against their index, axes at the left and bottom.
pub fn render_curve_png(path: &Path, values: &[f64], width: u32, height: u32) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Contract("nothing to plot".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("curve has non-finite values".into()));
    }
    let (w, h) = (width.max(64), height.max(64));
    let margin = 24i64;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let (left, bottom, right, top) = (margin, h as i64 - margin, w as i64 - margin / 2, margin / 2);
    draw_line(&mut img, (left, top), (left, bottom), axis);
    draw_line(&mut img, (left, bottom), (right, bottom), axis);

    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = values.len();
    let px = |i: usize| left + 1 + ((i as f64 / (n.max(2) - 1) as f64) * (right - left - 1) as f64) as i64;
    let py = |v: f64| bottom - 1 - (((v - lo) / span) * (bottom - top - 1) as f64) as i64;
    let line = Rgb([31, 90, 200]);
    let mut prev = (px(0), py(values[0]));
    for (i, &v) in values.iter().enumerate().skip(1) {
        let p = (px(i), py(v));
        draw_line(&mut img, prev, p, line);
        prev = p;
    }
    save_png(&img, path)
}

//! Raster helpers for synthetic images.

use image::{GrayImage, Luma};
use rand::Rng;

/// Bilinear sample with `None` outside the image.
pub fn sample(src: &GrayImage, x: f32, y: f32) -> Option<f32> {
    let (w, h) = src.dimensions();
    if x < 0.0 || y < 0.0 || x > (w - 1) as f32 || y > (h - 1) as f32 {
        return None;
    }
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let p = |x, y| src.get_pixel(x, y).0[0] as f32;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Draws `src` scaled by `scale` and rotated by `angle` (radians) with its
/// centre at `(cx, cy)` in `dst`.
pub fn paste_transformed(dst: &mut GrayImage, src: &GrayImage, cx: f32, cy: f32, scale: f32, angle: f32) {
    let (sw, sh) = (src.width() as f32, src.height() as f32);
    let (s, c) = angle.sin_cos();
    let half_diag = 0.5 * scale * (sw * sw + sh * sh).sqrt();
    let x_lo = (cx - half_diag).floor().max(0.0) as u32;
    let y_lo = (cy - half_diag).floor().max(0.0) as u32;
    let x_hi = ((cx + half_diag).ceil() as u32).min(dst.width());
    let y_hi = ((cy + half_diag).ceil() as u32).min(dst.height());
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            // Inverse map: destination → source.
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let u = (c * dx + s * dy) / scale + (sw - 1.0) / 2.0;
            let v = (-s * dx + c * dy) / scale + (sh - 1.0) / 2.0;
            if let Some(val) = sample(src, u, v) {
                dst.put_pixel(x, y, Luma([val.round().clamp(0.0, 255.0) as u8]));
            }
        }
    }
}

/// Rotates and scales a whole image onto a canvas just large enough to
/// hold it; uncovered pixels take `fill`.
pub fn transform_image(src: &GrayImage, scale: f32, angle: f32, fill: u8) -> GrayImage {
    let (sw, sh) = (src.width() as f32 * scale, src.height() as f32 * scale);
    let (s, c) = angle.sin_cos();
    // The slack absorbs rounding in sin/cos of exact quarter turns.
    let w = (sw * c.abs() + sh * s.abs() - 1e-3).ceil().max(1.0) as u32;
    let h = (sw * s.abs() + sh * c.abs() - 1e-3).ceil().max(1.0) as u32;
    let mut out = GrayImage::from_pixel(w, h, Luma([fill]));
    paste_transformed(&mut out, src, (w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0, scale, angle);
    out
}

pub fn fill_rect(img: &mut GrayImage, x0: i32, y0: i32, x1: i32, y1: i32, v: u8) {
    let (w, h) = (img.width() as i32, img.height() as i32);
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            img.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
}

pub fn fill_ellipse(img: &mut GrayImage, cx: f32, cy: f32, rx: f32, ry: f32, v: u8) {
    let (w, h) = (img.width() as i32, img.height() as i32);
    for y in ((cy - ry).floor() as i32).max(0)..((cy + ry).ceil() as i32 + 1).min(h) {
        for x in ((cx - rx).floor() as i32).max(0)..((cx + rx).ceil() as i32 + 1).min(w) {
            let (dx, dy) = ((x as f32 - cx) / rx, (y as f32 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                img.put_pixel(x as u32, y as u32, Luma([v]));
            }
        }
    }
}

pub fn fill_triangle(img: &mut GrayImage, p: [(f32, f32); 3], v: u8) {
    let (w, h) = (img.width() as i32, img.height() as i32);
    let xs = p.map(|q| q.0);
    let ys = p.map(|q| q.1);
    let min = |a: [f32; 3]| a.iter().copied().fold(f32::INFINITY, f32::min);
    let max = |a: [f32; 3]| a.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let edge = |a: (f32, f32), b: (f32, f32), x: f32, y: f32| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
    let area = edge(p[0], p[1], p[2].0, p[2].1);
    if area == 0.0 {
        return;
    }
    for y in (min(ys).floor() as i32).max(0)..(max(ys).ceil() as i32 + 1).min(h) {
        for x in (min(xs).floor() as i32).max(0)..(max(xs).ceil() as i32 + 1).min(w) {
            let (fx, fy) = (x as f32, y as f32);
            let e = [
                edge(p[0], p[1], fx, fy),
                edge(p[1], p[2], fx, fy),
                edge(p[2], p[0], fx, fy),
            ];
            if e.iter().all(|&v| v * area >= 0.0) {
                img.put_pixel(x as u32, y as u32, Luma([v]));
            }
        }
    }
}

/// Smooth random field: a coarse random grid upsampled bilinearly, in
/// `[mean − amp, mean + amp]`.
pub fn smooth_field(w: u32, h: u32, cells: u32, mean: f32, amp: f32, rng: &mut impl Rng) -> GrayImage {
    let gw = cells + 1;
    let gh = cells + 1;
    let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-amp..=amp)).collect();
    GrayImage::from_fn(w, h, |x, y| {
        let gx = x as f32 / w as f32 * cells as f32;
        let gy = y as f32 / h as f32 * cells as f32;
        let (x0, y0) = (gx.floor() as u32, gy.floor() as u32);
        let (fx, fy) = (gx - x0 as f32, gy - y0 as f32);
        let g = |i: u32, j: u32| grid[(j.min(gh - 1) * gw + i.min(gw - 1)) as usize];
        let v = (g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx) * (1.0 - fy)
            + (g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx) * fy;
        Luma([(mean + v).round().clamp(0.0, 255.0) as u8])
    })
}

//! Oriented 64-d SURF descriptors from Haar-wavelet responses.

use std::f64::consts::{PI, TAU};

use super::integral::IntegralImage;
use super::{Descriptor, Keypoint, DESCRIPTOR_LEN};

/// Half-width of the descriptor support in units of scale, including the
/// rotated corner and the Haar filter extent.
const SUPPORT_RADIUS: f64 = 10.0 * std::f64::consts::SQRT_2 + 2.0;

#[inline]
fn haar_x(ii: &IntegralImage, row: isize, col: isize, size: isize) -> f64 {
    let half = size / 2;
    ii.box_sum(row - half, col, size, half) - ii.box_sum(row - half, col - half, size, half)
}

#[inline]
fn haar_y(ii: &IntegralImage, row: isize, col: isize, size: isize) -> f64 {
    let half = size / 2;
    ii.box_sum(row, col - half, half, size) - ii.box_sum(row - half, col - half, half, size)
}

/// Integer sampling scale used for Haar filter sizes.
#[inline]
fn int_scale(scale: f32) -> isize {
    (scale.round() as isize).max(1)
}

/// Whether the full descriptor support of `kp` lies inside the image.
pub fn fits(ii: &IntegralImage, kp: &Keypoint) -> bool {
    let s = int_scale(kp.scale).max(kp.scale.ceil() as isize) as f64;
    let r = SUPPORT_RADIUS * s;
    let (x, y) = (kp.x as f64, kp.y as f64);
    x - r >= 0.0 && y - r >= 0.0 && x + r <= (ii.width() - 1) as f64 && y + r <= (ii.height() - 1) as f64
}

/// Dominant orientation in `[0, 2π)` from Gaussian-weighted Haar responses
/// in a disc of radius 6s, using a sliding π/3 sector.
pub fn orientation(ii: &IntegralImage, kp: &Keypoint) -> f32 {
    let s = int_scale(kp.scale);
    let (cx, cy) = (kp.x.round() as isize, kp.y.round() as isize);
    let mut res = Vec::with_capacity(113);
    for i in -6isize..=6 {
        for j in -6isize..=6 {
            if i * i + j * j >= 36 {
                continue;
            }
            let g = (-((i * i + j * j) as f64) / (2.0 * 2.5 * 2.5)).exp();
            let rx = g * haar_x(ii, cy + j * s, cx + i * s, 4 * s);
            let ry = g * haar_y(ii, cy + j * s, cx + i * s, 4 * s);
            if rx == 0.0 && ry == 0.0 {
                continue;
            }
            res.push((ry.atan2(rx).rem_euclid(TAU), rx, ry));
        }
    }

    let mut best = (0.0f64, 0.0f64, 0.0f64);
    let mut start = 0.0;
    while start < TAU {
        let end = start + PI / 3.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(a, rx, ry) in &res {
            let inside = if end <= TAU {
                a >= start && a < end
            } else {
                a >= start || a < end - TAU
            };
            if inside {
                sx += rx;
                sy += ry;
            }
        }
        let mag = sx * sx + sy * sy;
        if mag > best.0 {
            best = (mag, sx, sy);
        }
        start += 0.15;
    }
    if best.0 == 0.0 {
        return 0.0;
    }
    let o = best.2.atan2(best.1).rem_euclid(TAU) as f32;
    // rem_euclid can round up to exactly TAU in f32.
    if o >= std::f32::consts::TAU {
        0.0
    } else {
        o
    }
}

/// Computes the unit-norm descriptor for an oriented keypoint. Returns
/// `None` when the patch carries no gradient energy.
pub fn descriptor(ii: &IntegralImage, kp: &Keypoint) -> Option<Descriptor> {
    let scale = kp.scale as f64;
    let s = int_scale(kp.scale);
    let (co, si) = ((kp.orientation as f64).cos(), (kp.orientation as f64).sin());
    let sigma = 3.3 * scale;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    let mut out = [0f64; DESCRIPTOR_LEN];
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = [0f64; 4];
            for k in 0..5 {
                for l in 0..5 {
                    let u = (i * 5 + k) as f64 - 10.0 + 0.5;
                    let v = (j * 5 + l) as f64 - 10.0 + 0.5;
                    let (u, v) = (u * scale, v * scale);
                    let x = kp.x as f64 + co * u - si * v;
                    let y = kp.y as f64 + si * u + co * v;
                    let (row, col) = (y.round() as isize, x.round() as isize);
                    let rx = haar_x(ii, row, col, 2 * s);
                    let ry = haar_y(ii, row, col, 2 * s);
                    let g = (-(u * u + v * v) * inv_two_sigma2).exp();
                    let dx = g * (co * rx + si * ry);
                    let dy = g * (-si * rx + co * ry);
                    acc[0] += dx;
                    acc[1] += dx.abs();
                    acc[2] += dy;
                    acc[3] += dy.abs();
                }
            }
            let base = (i * 4 + j) * 4;
            out[base..base + 4].copy_from_slice(&acc);
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    let mut d = [0f32; DESCRIPTOR_LEN];
    for (o, v) in d.iter_mut().zip(out) {
        *o = (v / norm) as f32;
    }
    Some(d)
}

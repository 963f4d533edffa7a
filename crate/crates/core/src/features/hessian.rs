//! Fast-Hessian blob detection over box-filter scale space.

use super::integral::IntegralImage;
use super::Keypoint;

/// Images smaller than this on either side yield no keypoints.
pub const MIN_SIDE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianConfig {
    pub octaves: usize,
    pub intervals: usize,
    /// Sampling step of the first octave, in pixels; doubles per octave.
    pub init_step: usize,
    /// Responses at or below this value are never considered. The effective
    /// threshold is whatever the `max_count` cap leaves behind.
    pub response_floor: f64,
}

impl Default for HessianConfig {
    fn default() -> Self {
        HessianConfig {
            octaves: 3,
            intervals: 4,
            init_step: 1,
            response_floor: 1e-6,
        }
    }
}

struct Layer {
    width: usize,
    height: usize,
    step: usize,
    filter: usize,
    det: Vec<f64>,
}

impl Layer {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.det[r * self.width + c]
    }
}

/// Filter side length for `interval` of `octave`: 9, 15, 21, 27 for the
/// first octave, then doubling increments.
pub fn filter_size(octave: usize, interval: usize) -> usize {
    3 * ((1 << (octave + 1)) * (interval + 1) + 1)
}

fn build_layer(ii: &IntegralImage, step: usize, filter: usize) -> Layer {
    let width = ii.width().div_ceil(step);
    let height = ii.height().div_ceil(step);
    let lobe = (filter / 3) as isize;
    let w = filter as isize;
    let b = (w - 1) / 2;
    // Box sums are in 8-bit units; scale to unit intensity and filter area.
    let norm = 1.0 / (255.0 * (filter * filter) as f64);

    let mut det = vec![0.0; width * height];
    for lr in 0..height {
        let r = (lr * step) as isize;
        for lc in 0..width {
            let c = (lc * step) as isize;
            let dxx = ii.box_sum(r - lobe + 1, c - b, 2 * lobe - 1, w)
                - 3.0 * ii.box_sum(r - lobe + 1, c - lobe / 2, 2 * lobe - 1, lobe);
            let dyy = ii.box_sum(r - b, c - lobe + 1, w, 2 * lobe - 1)
                - 3.0 * ii.box_sum(r - lobe / 2, c - lobe + 1, lobe, 2 * lobe - 1);
            let dxy = ii.box_sum(r - lobe, c + 1, lobe, lobe)
                + ii.box_sum(r + 1, c - lobe, lobe, lobe)
                - ii.box_sum(r - lobe, c - lobe, lobe, lobe)
                - ii.box_sum(r + 1, c + 1, lobe, lobe);
            let (dxx, dyy, dxy) = (dxx * norm, dyy * norm, dxy * norm);
            det[lr * width + lc] = dxx * dyy - 0.81 * dxy * dxy;
        }
    }
    Layer {
        width,
        height,
        step,
        filter,
        det,
    }
}

fn is_extremum(b: &Layer, m: &Layer, t: &Layer, r: usize, c: usize) -> bool {
    let v = m.at(r, c);
    for dr in [-1isize, 0, 1] {
        for dc in [-1isize, 0, 1] {
            let rr = (r as isize + dr) as usize;
            let cc = (c as isize + dc) as usize;
            if t.at(rr, cc) >= v || b.at(rr, cc) >= v {
                return false;
            }
            if (dr != 0 || dc != 0) && m.at(rr, cc) >= v {
                return false;
            }
        }
    }
    true
}

/// Quadratic fit around a scale-space maximum; returns the (col, row,
/// interval) offsets, or `None` if the peak lies outside the sample cell.
fn interpolate(b: &Layer, m: &Layer, t: &Layer, r: usize, c: usize) -> Option<[f64; 3]> {
    let v = m.at(r, c);
    let dx = (m.at(r, c + 1) - m.at(r, c - 1)) / 2.0;
    let dy = (m.at(r + 1, c) - m.at(r - 1, c)) / 2.0;
    let ds = (t.at(r, c) - b.at(r, c)) / 2.0;

    let dxx = m.at(r, c + 1) + m.at(r, c - 1) - 2.0 * v;
    let dyy = m.at(r + 1, c) + m.at(r - 1, c) - 2.0 * v;
    let dss = t.at(r, c) + b.at(r, c) - 2.0 * v;
    let dxy = (m.at(r + 1, c + 1) - m.at(r + 1, c - 1) - m.at(r - 1, c + 1) + m.at(r - 1, c - 1)) / 4.0;
    let dxs = (t.at(r, c + 1) - t.at(r, c - 1) - b.at(r, c + 1) + b.at(r, c - 1)) / 4.0;
    let dys = (t.at(r + 1, c) - t.at(r - 1, c) - b.at(r + 1, c) + b.at(r - 1, c)) / 4.0;

    let h = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    let g = nalgebra::Vector3::new(dx, dy, ds);
    let off = -(h.try_inverse()? * g);
    if off.iter().all(|o| o.is_finite() && o.abs() < 0.5) {
        Some([off[0], off[1], off[2]])
    } else {
        None
    }
}

/// Detects scale-space Hessian maxima and keeps the `max_count` strongest,
/// ordered by descending response (ties by position).
pub fn detect_keypoints(ii: &IntegralImage, config: &HessianConfig, max_count: usize) -> Vec<Keypoint> {
    let (w, h) = (ii.width(), ii.height());
    if w < MIN_SIDE || h < MIN_SIDE || max_count == 0 {
        return Vec::new();
    }
    let mut found = Vec::new();
    for octave in 0..config.octaves {
        let step = config.init_step << octave;
        let layers: Vec<Layer> = (0..config.intervals)
            .map(|i| build_layer(ii, step, filter_size(octave, i)))
            .collect();
        for i in 1..config.intervals.saturating_sub(1) {
            let (b, m, t) = (&layers[i - 1], &layers[i], &layers[i + 1]);
            let border = (t.filter + 1) / (2 * step);
            if m.height <= 2 * border + 1 || m.width <= 2 * border + 1 {
                continue;
            }
            for r in border.max(1)..m.height - border.max(1) {
                for c in border.max(1)..m.width - border.max(1) {
                    let v = m.at(r, c);
                    if v <= config.response_floor || !is_extremum(b, m, t, r, c) {
                        continue;
                    }
                    let Some([xo, yo, so]) = interpolate(b, m, t, r, c) else {
                        continue;
                    };
                    let x = (c as f64 + xo) * m.step as f64;
                    let y = (r as f64 + yo) * m.step as f64;
                    if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                        continue;
                    }
                    let filter_step = (m.filter - b.filter) as f64;
                    let scale = 0.1333 * (m.filter as f64 + so * filter_step);
                    found.push(Keypoint {
                        x: x as f32,
                        y: y as f32,
                        scale: scale as f32,
                        orientation: 0.0,
                        response: v as f32,
                    });
                }
            }
        }
    }
    found.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.scale.total_cmp(&b.scale))
    });
    found.truncate(max_count);
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ii_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> IntegralImage {
        let px: Vec<u8> = (0..w * h)
            .map(|i| f(i % w, i / w).round().clamp(0.0, 255.0) as u8)
            .collect();
        IntegralImage::from_pixels(w, h, &px)
    }

    #[test]
    fn filter_sizes() {
        let o0: Vec<_> = (0..4).map(|i| filter_size(0, i)).collect();
        let o1: Vec<_> = (0..4).map(|i| filter_size(1, i)).collect();
        let o2: Vec<_> = (0..4).map(|i| filter_size(2, i)).collect();
        assert_eq!(o0, vec![9, 15, 21, 27]);
        assert_eq!(o1, vec![15, 27, 39, 51]);
        assert_eq!(o2, vec![27, 51, 75, 99]);
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let ii = ii_from_fn(128, 96, |_, _| 117.0);
        assert!(detect_keypoints(&ii, &HessianConfig::default(), 2500).is_empty());
    }

    #[test]
    fn tiny_image_is_empty_not_fatal() {
        let ii = ii_from_fn(14, 40, |x, y| ((x * 31 + y * 17) % 255) as f64);
        assert!(detect_keypoints(&ii, &HessianConfig::default(), 2500).is_empty());
    }

    #[test]
    fn keypoints_are_inside_and_positive() {
        let ii = ii_from_fn(160, 120, |x, y| {
            128.0 + 100.0 * ((x as f64 / 7.0).sin() * (y as f64 / 11.0).cos())
        });
        let kps = detect_keypoints(&ii, &HessianConfig::default(), 2500);
        assert!(!kps.is_empty());
        for k in &kps {
            assert!(k.x >= 0.0 && k.x < 160.0 && k.y >= 0.0 && k.y < 120.0);
            assert!(k.scale > 0.0 && k.response > 0.0);
        }
        assert!(kps.windows(2).all(|p| p[0].response >= p[1].response));
    }
}

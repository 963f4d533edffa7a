//! Local features: oriented SURF keypoints with 64-d descriptors.

mod descriptor;
mod hessian;
mod integral;
mod store;

use image::GrayImage;

pub use descriptor::{descriptor, fits, orientation};
pub use hessian::{detect_keypoints, filter_size, HessianConfig, MIN_SIDE};
pub use integral::IntegralImage;
pub use store::{read_feature_store, write_feature_store, FEATURE_MAGIC, FEATURE_VERSION};

use crate::par;

pub const DESCRIPTOR_LEN: usize = 64;
/// Per-image cap on extracted features.
pub const MAX_FEATURES: usize = 2500;

pub type Descriptor = [f32; DESCRIPTOR_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    /// Radians in `[0, 2π)`.
    pub orientation: f32,
    pub response: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub image_id: u32,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn empty(image_id: u32) -> Self {
        FeatureSet {
            image_id,
            keypoints: Vec::new(),
            descriptors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Described {
    pub features: FeatureSet,
    /// Keypoints discarded because their support crossed the border or the
    /// patch was flat.
    pub dropped: usize,
}

/// Orients and describes `keypoints`, dropping those whose descriptor
/// window does not fit inside the image.
pub fn describe(image_id: u32, ii: &IntegralImage, keypoints: &[Keypoint]) -> Described {
    let mut features = FeatureSet::empty(image_id);
    let mut dropped = 0;
    for kp in keypoints {
        if !fits(ii, kp) {
            dropped += 1;
            continue;
        }
        let mut kp = *kp;
        kp.orientation = orientation(ii, &kp);
        match descriptor(ii, &kp) {
            Some(d) => {
                features.keypoints.push(kp);
                features.descriptors.push(d);
            }
            None => dropped += 1,
        }
    }
    Described { features, dropped }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    pub hessian: HessianConfig,
    pub max_features: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            hessian: HessianConfig::default(),
            max_features: MAX_FEATURES,
        }
    }
}

/// Full extraction for one image: the strongest describable keypoints, up
/// to `max_features`.
pub fn extract_features(image_id: u32, gray: &GrayImage, config: &ExtractConfig) -> FeatureSet {
    let ii = IntegralImage::new(gray);
    let candidates: Vec<Keypoint> = detect_keypoints(&ii, &config.hessian, usize::MAX)
        .into_iter()
        .filter(|k| fits(&ii, k))
        .take(config.max_features)
        .collect();
    describe(image_id, &ii, &candidates).features
}

/// Extracts features for a batch of `(image_id, image)` pairs.
pub fn extract_batch(images: &[(u32, GrayImage)], config: &ExtractConfig) -> Vec<FeatureSet> {
    par::map(images, |(id, img)| extract_features(*id, img, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| Luma([rng.random::<u8>()]))
    }

    /// Smooth random texture: a sum of Gaussian blobs.
    fn texture(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..60)
            .map(|_| {
                (
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    rng.random_range(2.0..9.0),
                    rng.random_range(-120.0..120.0),
                )
            })
            .collect();
        GrayImage::from_fn(w, h, |x, y| {
            let mut v = 128.0;
            for &(bx, by, s, a) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            Luma([v.round().clamp(0.0, 255.0) as u8])
        })
    }

    #[test]
    fn descriptors_are_unit_norm() {
        let img = texture(200, 160, 3);
        let fs = extract_features(0, &img, &ExtractConfig::default());
        assert!(!fs.is_empty());
        assert_eq!(fs.keypoints.len(), fs.descriptors.len());
        for d in &fs.descriptors {
            let n: f64 = d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-6, "norm {n}");
        }
        for k in &fs.keypoints {
            assert!(k.orientation >= 0.0 && k.orientation < std::f32::consts::TAU);
        }
    }

    #[test]
    fn zero_keypoints_give_zero_rows() {
        let ii = IntegralImage::new(&texture(64, 64, 1));
        let d = describe(9, &ii, &[]);
        assert_eq!(d.features.image_id, 9);
        assert!(d.features.is_empty() && d.features.descriptors.is_empty());
        assert_eq!(d.dropped, 0);
    }

    #[test]
    fn border_keypoints_are_dropped() {
        let ii = IntegralImage::new(&texture(100, 100, 1));
        let kp = Keypoint {
            x: 3.0,
            y: 50.0,
            scale: 2.0,
            orientation: 0.0,
            response: 1.0,
        };
        let d = describe(0, &ii, &[kp]);
        assert_eq!(d.dropped, 1);
        assert!(d.features.is_empty());
    }

    #[test]
    fn noise_image_hits_the_cap() {
        let img = noise_image(512, 512, 7);
        let ii = IntegralImage::new(&img);
        let kps = detect_keypoints(&ii, &HessianConfig::default(), MAX_FEATURES);
        assert_eq!(kps.len(), MAX_FEATURES);
        let fs = extract_features(0, &img, &ExtractConfig::default());
        assert_eq!(fs.len(), MAX_FEATURES);
    }

    #[test]
    fn detection_is_deterministic() {
        let img = texture(180, 140, 11);
        let a = extract_features(1, &img, &ExtractConfig::default());
        let b = extract_features(1, &img, &ExtractConfig::default());
        assert_eq!(a, b);
    }

    /// Reference blob detector: determinant of the Hessian of the image
    /// smoothed with a true Gaussian, maximised over a dense grid.
    fn doh_oracle(img: &GrayImage, sigma: f64) -> (f64, f64) {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let radius = (4.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let ksum: f64 = kernel.iter().sum();
        let src: Vec<f64> = img.as_raw().iter().map(|&p| p as f64).collect();
        let conv = |data: &[f64], horizontal: bool| -> Vec<f64> {
            let mut out = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let o = k as isize - radius;
                        let (sx, sy) = if horizontal {
                            ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                        } else {
                            (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                        };
                        acc += kv * data[sy * w + sx];
                    }
                    out[y * w + x] = acc / ksum;
                }
            }
            out
        };
        let g = conv(&conv(&src, true), false);
        let at = |x: usize, y: usize| g[y * w + x];
        let mut best = (f64::MIN, 0.0, 0.0);
        for y in 2..h - 2 {
            for x in 2..w - 2 {
                let dxx = at(x + 1, y) + at(x - 1, y) - 2.0 * at(x, y);
                let dyy = at(x, y + 1) + at(x, y - 1) - 2.0 * at(x, y);
                let dxy = (at(x + 1, y + 1) - at(x + 1, y - 1) - at(x - 1, y + 1) + at(x - 1, y - 1)) / 4.0;
                let det = dxx * dyy - dxy * dxy;
                if det > best.0 {
                    best = (det, x as f64, y as f64);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn gaussian_blob_is_found_near_oracle_center() {
        let (cx, cy, sigma) = (83.3, 71.6, 6.0);
        let img = GrayImage::from_fn(160, 150, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            Luma([(40.0 + 180.0 * (-d2 / (2.0 * sigma * sigma)).exp()).round() as u8])
        });
        let (ox, oy) = doh_oracle(&img, sigma);
        assert!((ox - cx).abs() <= 1.0 && (oy - cy).abs() <= 1.0);
        let kps = detect_keypoints(&IntegralImage::new(&img), &HessianConfig::default(), 2500);
        assert!(!kps.is_empty());
        let close = kps.iter().any(|k| {
            ((k.x as f64 - ox).powi(2) + (k.y as f64 - oy).powi(2)).sqrt() <= 3.0
        });
        assert!(close, "no keypoint within 3 px of oracle ({ox},{oy}): {:?}", &kps[..kps.len().min(5)]);
    }

    #[test]
    fn integer_translation_moves_keypoints() {
        let (w, h) = (300u32, 260u32);
        let base = texture(w, h, 5);
        let (tx, ty) = (8u32, 12u32);
        let shifted = GrayImage::from_fn(w, h, |x, y| {
            if x >= tx && y >= ty {
                *base.get_pixel(x - tx, y - ty)
            } else {
                Luma([128])
            }
        });
        let cfg = HessianConfig::default();
        let a = detect_keypoints(&IntegralImage::new(&base), &cfg, usize::MAX);
        let b = detect_keypoints(&IntegralImage::new(&shifted), &cfg, usize::MAX);
        // Keep keypoints whose filter footprint (about 3.75 scale, widened
        // for the neighbouring layer and sample grid) avoids every border
        // of both images.
        let interior: Vec<_> = a
            .iter()
            .filter(|k| {
                let m = 6.0 * k.scale + 8.0;
                k.x > m && k.y > m && k.x + (tx as f32) < w as f32 - m && k.y + (ty as f32) < h as f32 - m
            })
            .collect();
        assert!(interior.len() >= 10, "only {} interior keypoints", interior.len());
        for k in interior {
            let hit = b.iter().any(|m| {
                (m.x - k.x - tx as f32).abs() <= 0.5 && (m.y - k.y - ty as f32).abs() <= 0.5
            });
            assert!(hit, "keypoint {k:?} did not translate");
        }
    }

    fn rotate90(img: &GrayImage) -> GrayImage {
        // Counter-clockwise in display terms: (x, y) -> (y, W-1-x).
        let (w, h) = img.dimensions();
        GrayImage::from_fn(h, w, |nx, ny| *img.get_pixel(w - 1 - ny, nx))
    }

    #[test]
    fn descriptors_survive_90_degree_rotation() {
        let img = texture(200, 200, 21);
        let rot = rotate90(&img);
        let cfg = ExtractConfig::default();
        let a = extract_features(0, &img, &cfg);
        let b = extract_features(0, &rot, &cfg);
        let w = img.width() as f32;
        let mut checked = 0;
        let mut good = 0;
        for (k, d) in a.keypoints.iter().zip(&a.descriptors) {
            // Original (x, y) lands at (y, W-1-x).
            let (ex, ey) = (k.y, w - 1.0 - k.x);
            let Some((_, dm)) = b
                .keypoints
                .iter()
                .zip(&b.descriptors)
                .find(|(m, _)| (m.x - ex).abs() <= 0.5 && (m.y - ey).abs() <= 0.5 && (m.scale / k.scale - 1.0).abs() < 0.05)
            else {
                continue;
            };
            checked += 1;
            let cos: f32 = d.iter().zip(dm).map(|(p, q)| p * q).sum();
            if cos >= 0.8 {
                good += 1;
            }
        }
        assert!(checked >= 10, "only {checked} corresponding keypoints");
        assert!(good as f64 >= 0.9 * checked as f64, "{good}/{checked} above 0.8 cosine");
    }

    #[test]
    fn cap_is_never_exceeded() {
        let img = noise_image(300, 300, 2);
        let cfg = ExtractConfig {
            max_features: 100,
            ..Default::default()
        };
        assert_eq!(extract_features(0, &img, &cfg).len(), 100);
    }
}

//! Genre corpora: every genre shares one object patch, pasted into varied
//! scenes with random pose and caption bars.

use std::f32::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::draw::{fill_ellipse, fill_rect, fill_triangle, paste_transformed, smooth_field, transform_image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenreConfig {
    pub genres: usize,
    pub per_genre: usize,
    pub object_side: u32,
    pub min_side: u32,
    pub max_side: u32,
    /// Maximum absolute object rotation, degrees.
    pub max_rotation_deg: f32,
    pub min_scale: f32,
    pub max_scale: f32,
    pub text_overlays: bool,
    pub seed: u64,
}

impl Default for GenreConfig {
    fn default() -> Self {
        GenreConfig {
            genres: 20,
            per_genre: 25,
            object_side: 96,
            min_side: 320,
            max_side: 384,
            max_rotation_deg: 30.0,
            min_scale: 0.5,
            max_scale: 2.0,
            text_overlays: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub image: GrayImage,
    pub genre: u32,
}

/// A textured object with hard edges at several scales.
pub fn object_patch(side: u32, rng: &mut impl Rng) -> GrayImage {
    let mut img = smooth_field(side, side, 4, rng.random_range(90.0..170.0), 60.0, rng);
    let s = side as f32;
    for _ in 0..rng.random_range(10..16) {
        let v = rng.random_range(0..=255u8);
        match rng.random_range(0..3) {
            0 => {
                let (x, y) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let (w, h) = (rng.random_range(0.08..0.4) * s, rng.random_range(0.08..0.4) * s);
                fill_rect(&mut img, x as i32, y as i32, (x + w) as i32, (y + h) as i32, v);
            }
            1 => {
                let (x, y) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                fill_ellipse(
                    &mut img,
                    x,
                    y,
                    rng.random_range(0.05..0.2) * s,
                    rng.random_range(0.05..0.2) * s,
                    v,
                );
            }
            _ => {
                let p = std::array::from_fn(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s)));
                fill_triangle(&mut img, p, v);
            }
        }
    }
    // A small high-frequency detail.
    let (x0, y0) = (rng.random_range(0.0..0.6 * s) as i32, rng.random_range(0.0..0.6 * s) as i32);
    let cell = rng.random_range(3..6);
    for j in 0..4 {
        for i in 0..4 {
            if (i + j) % 2 == 0 {
                let (x, y) = (x0 + i * cell, y0 + j * cell);
                fill_rect(&mut img, x, y, x + cell, y + cell, 20);
            }
        }
    }
    img
}

/// Varied scene: smooth shading plus a few soft, low-contrast shapes.
fn background(w: u32, h: u32, rng: &mut impl Rng) -> GrayImage {
    let cells = rng.random_range(2..6);
    let mut img = smooth_field(w, h, cells, rng.random_range(70.0..190.0), rng.random_range(20.0..70.0), rng);
    for _ in 0..rng.random_range(2..6) {
        let base = img.get_pixel(rng.random_range(0..w), rng.random_range(0..h)).0[0] as i32;
        let v = (base + rng.random_range(-45..45)).clamp(0, 255) as u8;
        let (x, y) = (rng.random_range(0.0..w as f32), rng.random_range(0.0..h as f32));
        if rng.random_bool(0.5) {
            fill_ellipse(&mut img, x, y, rng.random_range(15.0..80.0), rng.random_range(15.0..80.0), v);
        } else {
            let (rw, rh) = (rng.random_range(20..120), rng.random_range(20..120));
            fill_rect(&mut img, x as i32, y as i32, x as i32 + rw, y as i32 + rh, v);
        }
    }
    img
}

/// Caption bars: a light band with dark glyph blocks, like meme text.
pub fn text_overlay(img: &mut GrayImage, rng: &mut impl Rng) {
    let (w, h) = (img.width() as i32, img.height() as i32);
    let bands: &[bool] = match rng.random_range(0..3) {
        0 => &[true],
        1 => &[false],
        _ => &[true, false],
    };
    for &top in bands {
        let band = (h as f32 * rng.random_range(0.09..0.14)) as i32;
        let y0 = if top { 0 } else { h - band };
        fill_rect(img, 0, y0, w, y0 + band, rng.random_range(225..=250));
        let glyph_h = (band as f32 * 0.6) as i32;
        let gy = y0 + (band - glyph_h) / 2;
        let margin = rng.random_range(6..(w / 6).max(7));
        let mut x = margin;
        while x < w - margin {
            let gw = rng.random_range(4..(glyph_h.max(6) * 2 / 3).max(5));
            if rng.random_bool(0.15) {
                x += gw;
                continue;
            }
            let ink = rng.random_range(0..40u8);
            match rng.random_range(0..3) {
                0 => fill_rect(img, x, gy, x + gw, gy + glyph_h, ink),
                1 => {
                    fill_rect(img, x, gy, x + 2, gy + glyph_h, ink);
                    fill_rect(img, x, gy + glyph_h / 2 - 1, x + gw, gy + glyph_h / 2 + 1, ink);
                }
                _ => {
                    fill_rect(img, x, gy, x + gw, gy + 2, ink);
                    fill_rect(img, x + gw / 2 - 1, gy, x + gw / 2 + 1, gy + glyph_h, ink);
                }
            }
            x += gw + rng.random_range(1..4);
        }
    }
}

/// Log-uniform scale in `[lo, hi]`.
fn log_uniform(lo: f32, hi: f32, rng: &mut impl Rng) -> f32 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// Images ordered genre by genre; image `i` belongs to genre
/// `i / per_genre`.
pub fn generate_genre_corpus(config: &GenreConfig) -> Vec<SyntheticImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let objects: Vec<GrayImage> = (0..config.genres)
        .map(|_| object_patch(config.object_side, &mut rng))
        .collect();
    let mut out = Vec::with_capacity(config.genres * config.per_genre);
    for (g, object) in objects.iter().enumerate() {
        for _ in 0..config.per_genre {
            let w = rng.random_range(config.min_side..=config.max_side);
            let h = rng.random_range(config.min_side..=config.max_side);
            let mut img = background(w, h, &mut rng);
            let scale = log_uniform(config.min_scale, config.max_scale, &mut rng);
            let angle = rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg) * PI / 180.0;
            // Keep the object's rotated extent inside the frame.
            let half = 0.5 * scale * config.object_side as f32 * (angle.cos().abs() + angle.sin().abs());
            let cx = rng.random_range(half..=(w as f32 - half).max(half));
            let cy = rng.random_range(half..=(h as f32 - half).max(half));
            paste_transformed(&mut img, object, cx, cy, scale, angle);
            if config.text_overlays {
                text_overlay(&mut img, &mut rng);
            }
            out.push(SyntheticImage { image: img, genre: g as u32 });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearDuplicateConfig {
    pub max_rotation_deg: f32,
    pub min_scale: f32,
    pub max_scale: f32,
    /// Fraction of each side removed by the crop.
    pub crop: f32,
    pub text_overlay: bool,
}

impl Default for NearDuplicateConfig {
    fn default() -> Self {
        NearDuplicateConfig {
            max_rotation_deg: 30.0,
            min_scale: 0.5,
            max_scale: 2.0,
            crop: 0.2,
            text_overlay: true,
        }
    }
}

/// Crops, rotates, rescales and re-captions a copy of `src`.
pub fn near_duplicate(src: &GrayImage, config: &NearDuplicateConfig, rng: &mut impl Rng) -> GrayImage {
    let (w, h) = src.dimensions();
    let (cw, ch) = (
        ((w as f32 * (1.0 - config.crop)).round() as u32).max(1),
        ((h as f32 * (1.0 - config.crop)).round() as u32).max(1),
    );
    let (x0, y0) = (rng.random_range(0..=w - cw), rng.random_range(0..=h - ch));
    let cropped = image::imageops::crop_imm(src, x0, y0, cw, ch).to_image();
    let angle = rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg) * PI / 180.0;
    let scale = log_uniform(config.min_scale, config.max_scale, rng);
    let mut out = transform_image(&cropped, scale, angle, rng.random_range(0..=255));
    if config.text_overlay {
        text_overlay(&mut out, rng);
    }
    out
}

/// Writes PNGs plus a `path,source_tag` manifest tagging each image with its
/// genre. Returns the manifest path.
pub fn write_corpus(dir: &Path, images: &[SyntheticImage]) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut m = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    writeln!(m, "path,source_tag")?;
    for (i, s) in images.iter().enumerate() {
        let name = format!("img_{i:05}.png");
        let path = img_dir.join(&name);
        s.image
            .save(&path)
            .map_err(|e| Error::format("image", format!("{}: {e}", path.display())))?;
        writeln!(m, "images/{name},genre-{:03}", s.genre)?;
    }
    Ok(manifest)
}

/// Uniform-noise image, for corpora with no shared content.
pub fn noise_image(w: u32, h: u32, rng: &mut impl Rng) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| Luma([rng.random::<u8>()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_determinism() {
        let cfg = GenreConfig {
            genres: 3,
            per_genre: 4,
            seed: 9,
            ..GenreConfig::default()
        };
        let a = generate_genre_corpus(&cfg);
        let b = generate_genre_corpus(&cfg);
        assert_eq!(a.len(), 12);
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            assert_eq!(x.genre, (i / 4) as u32);
            assert_eq!(x.image, y.image);
            let (w, h) = x.image.dimensions();
            assert!((320..=384).contains(&w) && (320..=384).contains(&h));
        }
        assert_ne!(a[0].image, a[1].image);
    }

    #[test]
    fn near_duplicate_respects_bounds() {
        let cfg = GenreConfig {
            genres: 1,
            per_genre: 1,
            ..GenreConfig::default()
        };
        let src = &generate_genre_corpus(&cfg)[0].image;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let d = near_duplicate(src, &NearDuplicateConfig::default(), &mut rng);
            let longest = d.width().max(d.height()) as f32;
            // Crop keeps 80% of each side; scale ≤ 2 and the rotated
            // bounding box grows by at most cos + sin ≤ √2.
            assert!(longest <= 384.0 * 0.8 * 2.0 * 1.415 + 2.0);
            assert!(d.width().min(d.height()) as f32 >= 320.0 * 0.8 * 0.5 - 1.0);
        }
    }

    #[test]
    fn manifest_lists_every_image() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenreConfig {
            genres: 2,
            per_genre: 2,
            ..GenreConfig::default()
        };
        let manifest = write_corpus(dir.path(), &generate_genre_corpus(&cfg)).unwrap();
        let text = std::fs::read_to_string(manifest).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("images/img_00003.png,genre-001"));
    }
}

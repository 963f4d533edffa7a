//! Objects-in-scene matching: turns raw descriptor matches into per-image
//! scores by verifying a single similarity transform with RANSAC.

use std::collections::BTreeMap;
use std::f32::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{FeatureSet, Keypoint};
use crate::index::DescriptorMatch;
use crate::par;

pub const DEFAULT_J: usize = 100;
pub const MIN_INLIERS: u32 = 4;
pub const RATIO: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub query_keypoint: Keypoint,
    pub match_keypoint: Keypoint,
    pub descriptor_distance: f32,
    /// Keypoint ordinals in the query and target feature sets.
    pub query_index: u32,
    pub match_index: u32,
}

/// Maps query coordinates to target coordinates:
/// `m = scale · R(rotation) · q + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f32,
    pub rotation: f32,
    pub tx: f32,
    pub ty: f32,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, x: f32, y: f32) -> (f32, f32) {
        let (s, c) = self.rotation.sin_cos();
        (
            self.scale * (c * x - s * y) + self.tx,
            self.scale * (s * x + c * y) + self.ty,
        )
    }

    fn from_complex(a: (f64, f64), t: (f64, f64)) -> Option<Self> {
        let scale = (a.0 * a.0 + a.1 * a.1).sqrt();
        let t = SimilarityTransform {
            scale: scale as f32,
            rotation: a.1.atan2(a.0) as f32,
            tx: t.0 as f32,
            ty: t.1 as f32,
        };
        t.is_valid().then_some(t)
    }

    pub fn is_valid(&self) -> bool {
        self.scale > 1.0 / 16.0
            && self.scale < 16.0
            && self.rotation.is_finite()
            && self.tx.is_finite()
            && self.ty.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub image_id: u32,
    /// Inlier count; zero when below [`MIN_INLIERS`].
    pub score: u32,
    pub transform: Option<SimilarityTransform>,
}

/// Groups matches by target image. For each query keypoint only the best
/// match per target image survives, and only if it is distinctive within
/// that image (ratio to the image's second-best match ≤ [`RATIO`]). Each
/// target keypoint is then claimed by at most one query keypoint.
///
/// `corpus[id]` must hold the features of image `id`.
///
/// # Panics
/// If `raw` contains matches to the query's own image.
pub fn collect_candidates(
    query: &FeatureSet,
    raw: &[Vec<DescriptorMatch>],
    corpus: &[FeatureSet],
) -> BTreeMap<u32, Vec<Correspondence>> {
    let mut best: BTreeMap<(u32, u32), Correspondence> = BTreeMap::new();
    let mut per_image: Vec<(u32, f32, u32, f32)> = Vec::new();
    for (qi, row) in raw.iter().enumerate() {
        per_image.clear();
        for m in row {
            assert_ne!(
                m.image_id, query.image_id,
                "matches must be searched with the query image excluded"
            );
            match per_image.iter_mut().find(|e| e.0 == m.image_id) {
                Some(e) => {
                    if m.distance < e.1 {
                        e.3 = e.1;
                        e.1 = m.distance;
                        e.2 = m.keypoint;
                    } else if m.distance < e.3 {
                        e.3 = m.distance;
                    }
                }
                None => per_image.push((m.image_id, m.distance, m.keypoint, f32::INFINITY)),
            }
        }
        for &(image_id, d1, kp, d2) in &per_image {
            if d2.is_finite() && d1 > RATIO * d2 {
                continue;
            }
            let target = &corpus[image_id as usize];
            debug_assert_eq!(target.image_id, image_id);
            let c = Correspondence {
                query_keypoint: query.keypoints[qi],
                match_keypoint: target.keypoints[kp as usize],
                descriptor_distance: d1,
                query_index: qi as u32,
                match_index: kp,
            };
            let slot = best.entry((image_id, kp)).or_insert(c);
            if (d1, qi as u32) < (slot.descriptor_distance, slot.query_index) {
                *slot = c;
            }
        }
    }
    let mut out: BTreeMap<u32, Vec<Correspondence>> = BTreeMap::new();
    for ((image_id, _), c) in best {
        out.entry(image_id).or_default().push(c);
    }
    for list in out.values_mut() {
        list.sort_by_key(|c| (c.query_index, c.match_index));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_px: f32,
    /// Maximum disagreement between a correspondence's keypoint orientation
    /// change and the model rotation, in radians. `None` disables the check.
    pub orientation_tol: Option<f32>,
    /// Maximum `|ln(scale ratio) − ln(model scale)|`. `None` disables it.
    pub log_scale_tol: Option<f32>,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 500,
            inlier_px: 5.0,
            orientation_tol: Some(0.5),
            log_scale_tol: Some(std::f32::consts::LN_2),
        }
    }
}

impl RansacConfig {
    /// Pure reprojection test, no keypoint-shape gating.
    pub fn geometric_only() -> Self {
        RansacConfig {
            orientation_tol: None,
            log_scale_tol: None,
            ..RansacConfig::default()
        }
    }
}

fn angle_diff(a: f32, b: f32) -> f32 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

fn is_inlier(t: &SimilarityTransform, c: &Correspondence, cfg: &RansacConfig) -> bool {
    let (x, y) = t.apply(c.query_keypoint.x, c.query_keypoint.y);
    let (dx, dy) = (x - c.match_keypoint.x, y - c.match_keypoint.y);
    if dx * dx + dy * dy > cfg.inlier_px * cfg.inlier_px {
        return false;
    }
    if let Some(tol) = cfg.orientation_tol {
        let turn = c.match_keypoint.orientation - c.query_keypoint.orientation;
        if angle_diff(turn, t.rotation) > tol {
            return false;
        }
    }
    if let Some(tol) = cfg.log_scale_tol {
        let ratio = (c.match_keypoint.scale / c.query_keypoint.scale).ln();
        if (ratio - t.scale.ln()).abs() > tol {
            return false;
        }
    }
    true
}

/// Two-point similarity: `a = (m2 − m1) / (q2 − q1)` in complex form.
fn from_pair(p: &Correspondence, q: &Correspondence) -> Option<SimilarityTransform> {
    let (qx, qy) = (
        (q.query_keypoint.x - p.query_keypoint.x) as f64,
        (q.query_keypoint.y - p.query_keypoint.y) as f64,
    );
    let (mx, my) = (
        (q.match_keypoint.x - p.match_keypoint.x) as f64,
        (q.match_keypoint.y - p.match_keypoint.y) as f64,
    );
    let den = qx * qx + qy * qy;
    if den < 1.0 || mx * mx + my * my < 1.0 {
        return None;
    }
    let a = ((mx * qx + my * qy) / den, (my * qx - mx * qy) / den);
    let (px, py) = (p.query_keypoint.x as f64, p.query_keypoint.y as f64);
    let t = (
        p.match_keypoint.x as f64 - (a.0 * px - a.1 * py),
        p.match_keypoint.y as f64 - (a.1 * px + a.0 * py),
    );
    SimilarityTransform::from_complex(a, t)
}

/// Least-squares similarity over a set of correspondences.
fn fit(corrs: &[&Correspondence]) -> Option<SimilarityTransform> {
    let n = corrs.len() as f64;
    let (mut qx, mut qy, mut mx, mut my) = (0f64, 0f64, 0f64, 0f64);
    for c in corrs {
        qx += c.query_keypoint.x as f64;
        qy += c.query_keypoint.y as f64;
        mx += c.match_keypoint.x as f64;
        my += c.match_keypoint.y as f64;
    }
    let (qx, qy, mx, my) = (qx / n, qy / n, mx / n, my / n);
    let (mut re, mut im, mut den) = (0f64, 0f64, 0f64);
    for c in corrs {
        let (ux, uy) = (c.query_keypoint.x as f64 - qx, c.query_keypoint.y as f64 - qy);
        let (vx, vy) = (c.match_keypoint.x as f64 - mx, c.match_keypoint.y as f64 - my);
        re += vx * ux + vy * uy;
        im += vy * ux - vx * uy;
        den += ux * ux + uy * uy;
    }
    if den <= 0.0 {
        return None;
    }
    let a = (re / den, im / den);
    let t = (mx - (a.0 * qx - a.1 * qy), my - (a.1 * qx + a.0 * qy));
    SimilarityTransform::from_complex(a, t)
}

fn count_inliers(t: &SimilarityTransform, corrs: &[Correspondence], cfg: &RansacConfig) -> usize {
    corrs.iter().filter(|c| is_inlier(t, c, cfg)).count()
}

/// Best similarity transform by inlier count, refit on its inliers.
/// Returns `(None, 0)` for fewer than two correspondences.
pub fn estimate_similarity_ransac(
    corrs: &[Correspondence],
    config: &RansacConfig,
    seed: u64,
) -> (Option<SimilarityTransform>, usize) {
    let n = corrs.len();
    if n < 2 {
        return (None, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(SimilarityTransform, usize)> = None;
    for _ in 0..config.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let Some(t) = from_pair(&corrs[i], &corrs[j]) else {
            continue;
        };
        let count = count_inliers(&t, corrs, config);
        if best.is_none_or(|(_, b)| count > b) {
            best = Some((t, count));
            if count == n {
                break;
            }
        }
    }
    let Some((mut model, mut count)) = best else {
        return (None, 0);
    };
    // Refit until the inlier set stops growing.
    for _ in 0..5 {
        let inliers: Vec<&Correspondence> = corrs.iter().filter(|c| is_inlier(&model, c, config)).collect();
        let Some(refit) = (inliers.len() >= 2).then(|| fit(&inliers)).flatten() else {
            break;
        };
        let refit_count = count_inliers(&refit, corrs, config);
        if refit_count < count {
            break;
        }
        let grew = refit_count > count;
        model = refit;
        count = refit_count;
        if !grew {
            break;
        }
    }
    (Some(model), count)
}

/// Seed for one (query, candidate) verification: independent of the order
/// in which pairs are processed.
pub fn pair_seed(seed: u64, query_id: u32, candidate_id: u32) -> u64 {
    let mut z = seed ^ ((query_id as u64) << 32 | candidate_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Verifies every candidate and returns the top `j` images by inlier count,
/// ties broken by ascending image id. Candidates below [`MIN_INLIERS`] are
/// dropped.
pub fn score_images(
    query_id: u32,
    candidates: &BTreeMap<u32, Vec<Correspondence>>,
    j: usize,
    config: &RansacConfig,
    seed: u64,
) -> Vec<ImageScore> {
    let work: Vec<(&u32, &Vec<Correspondence>)> = candidates
        .iter()
        .filter(|(_, c)| c.len() >= MIN_INLIERS as usize)
        .collect();
    let mut scores: Vec<ImageScore> = par::map(&work, |&(&image_id, corrs)| {
        let mut sorted = corrs.clone();
        sorted.sort_by_key(|c| (c.query_index, c.match_index));
        let (transform, inliers) = estimate_similarity_ransac(&sorted, config, pair_seed(seed, query_id, image_id));
        let score = inliers as u32;
        ImageScore {
            image_id,
            score,
            transform: transform.filter(|_| score >= MIN_INLIERS),
        }
    })
    .into_iter()
    .filter(|s| s.score >= MIN_INLIERS)
    .collect();
    scores.sort_by_key(|s| (std::cmp::Reverse(s.score), s.image_id));
    scores.truncate(j);
    scores
}

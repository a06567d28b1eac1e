//! Synthetic scene ingredients: bounded pixel noise and convex-polygon
//! clutter rendered through the same rasterizer as the targets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::raster::{rasterize_projection, ProjectedPolygon};

/// Flips up to floor(noise_budget^2) distinct uniformly chosen pixels, so
/// the noisy image stays within `noise_budget` of the original in the
/// image norm.
pub fn gen_noise(img: &BitImage, noise_budget: f64, rng: &mut impl Rng) -> BitImage {
    let flips = (noise_budget * noise_budget).floor() as usize;
    let pixels = img.pixel_count();
    let flips = flips.min(pixels);
    if flips == 0 {
        return img.clone();
    }
    let mut indices: Vec<usize> = (0..pixels).collect();
    indices.shuffle(rng);
    let mut out = img.clone();
    let w = img.width();
    for &i in indices.iter().take(flips) {
        let x = (i % w as usize) as u32;
        let y = (i / w as usize) as u32;
        out.set(x, y, !out.get(x, y));
    }
    out
}

/// Random convex clutter polygons in image-plane coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClutterSpec {
    /// Inclusive range of polygon count per scene.
    pub count: (usize, usize),
    /// Circumradius range in pixels.
    pub radius_px: (f64, f64),
    /// Vertex count range.
    pub vertices: (usize, usize),
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self {
            count: (2, 6),
            radius_px: (2.0, 8.0),
            vertices: (3, 7),
        }
    }
}

fn random_convex_polygon(
    spec: &ClutterSpec,
    k: &CameraIntrinsics,
    rng: &mut impl Rng,
) -> ProjectedPolygon {
    let m = rng.gen_range(spec.vertices.0..=spec.vertices.1);
    let r = rng.gen_range(spec.radius_px.0..=spec.radius_px.1);
    let cx = rng.gen_range(1.0..=k.width as f64);
    let cy = rng.gen_range(1.0..=k.height as f64);
    // Distinct sorted angles on a circle give a convex vertex loop.
    let mut angles: Vec<f64> = (0..m)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    while angles.len() < 3 {
        angles.push(angles.last().unwrap() + 0.5);
    }
    ProjectedPolygon {
        points: angles
            .iter()
            .map(|a| [cx + r * a.cos(), cy + r * a.sin()])
            .collect(),
    }
}

/// Renders a clutter scene: random convex polygons ORed together via the
/// production rasterizer.
pub fn gen_clutter(spec: &ClutterSpec, k: &CameraIntrinsics, rng: &mut impl Rng) -> BitImage {
    let n = rng.gen_range(spec.count.0..=spec.count.1);
    let mut out = BitImage::zeros(k.width, k.height);
    for _ in 0..n {
        let poly = random_convex_polygon(spec, k, rng);
        let img = rasterize_projection(&poly, k.width, k.height);
        out.or_assign(&img).expect("same dims");
    }
    out
}

/// Clutter generation constrained to keep the intrusion into every given
/// mask at or below the noise budget. Each polygon is rejection-sampled;
/// exceeding the retry budget is an error.
pub fn gen_clutter_constrained(
    spec: &ClutterSpec,
    k: &CameraIntrinsics,
    rng: &mut impl Rng,
    masks: &[&BitImage],
    noise_budget: f64,
    max_attempts: usize,
) -> Result<BitImage> {
    let n = rng.gen_range(spec.count.0..=spec.count.1);
    let mut out = BitImage::zeros(k.width, k.height);
    let mut attempts = 0usize;
    let mut placed = 0usize;
    while placed < n {
        if attempts >= max_attempts {
            return Err(Error::ClutterConstraint { attempts });
        }
        attempts += 1;
        let poly = random_convex_polygon(spec, k, rng);
        let img = rasterize_projection(&poly, k.width, k.height);
        if img.count_ones() == 0 {
            continue;
        }
        let candidate = out.or(&img)?;
        let ok = masks.iter().try_fold(true, |acc, m| -> Result<bool> {
            Ok(acc && candidate.and(m)?.norm() <= noise_budget)
        })?;
        if ok {
            out = candidate;
            placed += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(53.0, 64, 48).unwrap()
    }

    fn speckled(seed: u64) -> BitImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = BitImage::zeros(64, 48);
        for y in 0..48 {
            for x in 0..64 {
                img.set(x, y, rng.gen_bool(0.3));
            }
        }
        img
    }

    #[test]
    fn zero_budget_is_identity() {
        let img = speckled(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(gen_noise(&img, 0.0, &mut rng), img);
    }

    #[test]
    fn budget_three_flips_at_most_nine() {
        let img = speckled(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy = gen_noise(&img, 3.0, &mut rng);
        let flips = img.hamming(&noisy).unwrap();
        assert!(flips <= 9);
        assert!(img.distance(&noisy).unwrap() <= 3.0);
        // Distinct pixels: exactly nine flips on a large image.
        assert_eq!(flips, 9);
    }

    #[test]
    fn fixed_seed_reproduces_the_flip_set() {
        let img = speckled(5);
        let a = gen_noise(&img, 2.0, &mut ChaCha8Rng::seed_from_u64(42));
        let b = gen_noise(&img, 2.0, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_clutter_objects_give_empty_scene() {
        let spec = ClutterSpec { count: (0, 0), ..Default::default() };
        let img = gen_clutter(&spec, &camera(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(img.count_ones(), 0);
    }

    #[test]
    fn fixed_seed_reproduces_the_scene() {
        let spec = ClutterSpec::default();
        let a = gen_clutter(&spec, &camera(), &mut ChaCha8Rng::seed_from_u64(9));
        let b = gen_clutter(&spec, &camera(), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.count_ones() > 0);
    }

    #[test]
    fn constrained_generation_respects_masks() {
        let k = camera();
        let mut mask = BitImage::zeros(64, 48);
        for y in 0..48 {
            for x in 20..44 {
                mask.set(x, y, true);
            }
        }
        let spec = ClutterSpec { count: (3, 3), radius_px: (2.0, 5.0), vertices: (3, 5) };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img =
            gen_clutter_constrained(&spec, &k, &mut rng, &[&mask], 0.0, 10_000).unwrap();
        assert_eq!(img.and(&mask).unwrap().count_ones(), 0);
        assert!(img.count_ones() > 0);
    }

    #[test]
    fn unsatisfiable_constraint_errors_out() {
        let k = camera();
        let everything = BitImage::ones(64, 48);
        let spec = ClutterSpec { count: (1, 1), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let err =
            gen_clutter_constrained(&spec, &k, &mut rng, &[&everything], 0.0, 50).unwrap_err();
        assert!(matches!(err, Error::ClutterConstraint { attempts: 50 }));
    }
}

//! Digital camera behavior for convex polygons: the cross-product sign
//! test, polygon rasterization over the pixel lattice, the pixelwise
//! composition algebra, and the full pose-to-image decoder.

use crate::camera::{analog_project, visibility_check, CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::target::{CompositionExpr, Polygon, TargetModel};

pub type Point2 = [f64; 2];

/// Real-valued (unquantized) image-plane positions of a polygon's
/// projected vertices, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPolygon {
    pub points: Vec<Point2>,
}

/// Projects every vertex of `poly`, failing if any lies at or behind the
/// camera plane.
pub fn project_polygon(
    poly: &Polygon,
    q: &Pose,
    k: &CameraIntrinsics,
    index: usize,
) -> Result<ProjectedPolygon> {
    let mut points = Vec::with_capacity(poly.len());
    for &v in poly.vertices() {
        let h = analog_project(v, q, k);
        if !(h.pz > 0.0) {
            return Err(Error::InvisiblePolygon { index });
        }
        let (u, w) = h.normalized();
        points.push([u, w]);
    }
    Ok(ProjectedPolygon { points })
}

/// Edge orientation term for the directed edge `pi -> pj` against a
/// pixel: the 2-D cross product (pj - pi) x (pixel - pi), expanded as
/// `qy (pjx - pix) - qx (pjy - piy) + (pix pjy - piy pjx)`.
#[inline]
pub fn cross_term(pi: Point2, pj: Point2, pixel: Point2) -> f64 {
    pixel[1] * (pj[0] - pi[0]) - pixel[0] * (pj[1] - pi[1]) + (pi[0] * pj[1] - pi[1] * pj[0])
}

/// Membership test: 1 iff every edge term (closing edge included) carries
/// one sign. Zero terms agree with either sign, so boundaries are inside.
pub fn inside_test(pp: &ProjectedPolygon, pixel: Point2) -> bool {
    let n = pp.points.len();
    let mut has_pos = false;
    let mut has_neg = false;
    for i in 0..n {
        let c = cross_term(pp.points[i], pp.points[(i + 1) % n], pixel);
        if c > 0.0 {
            has_pos = true;
        } else if c < 0.0 {
            has_neg = true;
        }
        if has_pos && has_neg {
            return false;
        }
    }
    true
}

/// Precomputed edge coefficients so the per-pixel term is evaluated with
/// exactly the same operations as [`cross_term`].
struct Edge {
    dx: f64,
    dy: f64,
    bias: f64,
}

fn edges_of(points: &[Point2]) -> Vec<Edge> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let pi = points[i];
            let pj = points[(i + 1) % n];
            Edge {
                dx: pj[0] - pi[0],
                dy: pj[1] - pi[1],
                bias: pi[0] * pj[1] - pi[1] * pj[0],
            }
        })
        .collect()
}

#[inline]
fn edge_term(e: &Edge, px: f64, py: f64) -> f64 {
    py * e.dx - px * e.dy + e.bias
}

#[inline]
fn pixel_inside(edges: &[Edge], px: f64, py: f64) -> bool {
    let mut has_pos = false;
    let mut has_neg = false;
    for e in edges {
        let c = edge_term(e, px, py);
        if c > 0.0 {
            has_pos = true;
        } else if c < 0.0 {
            has_neg = true;
        }
        if has_pos && has_neg {
            return false;
        }
    }
    true
}

/// The projected loop is strictly convex when consecutive edge cross
/// products share one strict sign; only then is the accept set contained
/// in the vertex bounding box and the scan can be clipped.
fn strictly_convex_loop(points: &[Point2]) -> bool {
    let n = points.len();
    let mut sign = 0i8;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        let c = points[(i + 2) % n];
        let cr = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        let s = if cr > 0.0 {
            1
        } else if cr < 0.0 {
            -1
        } else {
            return false;
        };
        if sign == 0 {
            sign = s;
        } else if s != sign {
            return false;
        }
    }
    true
}

/// Rasterizes projected vertex positions over the `width x height` pixel
/// lattice. Pixel (px, py), 1-based, is set iff the sign test passes at
/// the real-valued point (px, py).
pub fn rasterize_projection(pp: &ProjectedPolygon, width: u32, height: u32) -> BitImage {
    let mut img = BitImage::zeros(width, height);
    let edges = edges_of(&pp.points);

    let (mut px_lo, mut px_hi, mut py_lo, mut py_hi) = (1i64, width as i64, 1i64, height as i64);
    if strictly_convex_loop(&pp.points) {
        let min_x = pp.points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = pp.points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = pp.points.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = pp.points.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        px_lo = px_lo.max(min_x.ceil() as i64);
        px_hi = px_hi.min(max_x.floor() as i64);
        py_lo = py_lo.max(min_y.ceil() as i64);
        py_hi = py_hi.min(max_y.floor() as i64);
    }

    for py in py_lo..=py_hi {
        for px in px_lo..=px_hi {
            if pixel_inside(&edges, px as f64, py as f64) {
                img.set((px - 1) as u32, (py - 1) as u32, true);
            }
        }
    }
    img
}

/// Image of one target polygon at a pose. Errors if any vertex sits at or
/// behind the camera plane; vertices outside the field of view simply clip.
pub fn rasterize_polygon(poly: &Polygon, q: &Pose, k: &CameraIntrinsics) -> Result<BitImage> {
    let pp = project_polygon(poly, q, k, 0)?;
    Ok(rasterize_projection(&pp, k.width, k.height))
}

/// Evaluates the composition algebra over per-polygon images (Negation is
/// 1 - I, Union min{1, .}, Intersection max{0, .}, Difference via the
/// derived form).
pub fn compose(expr: &CompositionExpr, imgs: &[BitImage]) -> Result<BitImage> {
    match expr {
        CompositionExpr::Poly(i) => imgs
            .get(*i)
            .cloned()
            .ok_or_else(|| Error::Composition(format!("no image for P{}", i + 1))),
        CompositionExpr::Not(a) => Ok(compose(a, imgs)?.not()),
        CompositionExpr::Or(a, b) => compose(a, imgs)?.or(&compose(b, imgs)?),
        CompositionExpr::And(a, b) => compose(a, imgs)?.and(&compose(b, imgs)?),
        CompositionExpr::Xor(a, b) => compose(a, imgs)?.xor(&compose(b, imgs)?),
    }
}

/// Visibility policy for [`decode_with_policy`]. Certification paths use
/// the strict mode; clutter rendering may clip instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum DecodePolicy {
    /// Require the whole target inside the image; error otherwise.
    #[default]
    Strict,
    /// Render whatever projects; polygons with a vertex behind the camera
    /// contribute an empty image.
    Clip,
}

/// The GGM decoder: pose to binary target image.
pub fn decode(t: &TargetModel, q: &Pose, k: &CameraIntrinsics) -> Result<BitImage> {
    decode_with_policy(t, q, k, DecodePolicy::Strict)
}

pub fn decode_with_policy(
    t: &TargetModel,
    q: &Pose,
    k: &CameraIntrinsics,
    policy: DecodePolicy,
) -> Result<BitImage> {
    if policy == DecodePolicy::Strict && !visibility_check(t, q, k) {
        return Err(Error::NotVisible);
    }
    let mut imgs = Vec::with_capacity(t.polygons.len());
    for (i, poly) in t.polygons.iter().enumerate() {
        match project_polygon(poly, q, k, i) {
            Ok(pp) => imgs.push(rasterize_projection(&pp, k.width, k.height)),
            Err(e) => match policy {
                DecodePolicy::Strict => return Err(e),
                DecodePolicy::Clip => imgs.push(BitImage::zeros(k.width, k.height)),
            },
        }
    }
    compose(&t.composition, &imgs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{targets, Vertex2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri_projection() -> ProjectedPolygon {
        ProjectedPolygon {
            points: vec![[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]],
        }
    }

    #[test]
    fn cross_term_direct_substitution() {
        assert_eq!(cross_term([0.0, 0.0], [4.0, 0.0], [2.0, 1.0]), 4.0);
    }

    #[test]
    fn cross_term_zero_on_the_edge_line() {
        assert_eq!(cross_term([0.0, 0.0], [4.0, 0.0], [2.0, 0.0]), 0.0);
        assert_eq!(cross_term([1.0, 1.0], [3.0, 3.0], [2.0, 2.0]), 0.0);
    }

    #[test]
    fn cross_term_matches_vector_form() {
        // (pj - pi) x (pixel - pi) expanded as 2-D vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..2000 {
            let pi = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            let pj = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            let px = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            let vector_form =
                (pj[0] - pi[0]) * (px[1] - pi[1]) - (pj[1] - pi[1]) * (px[0] - pi[0]);
            let got = cross_term(pi, pj, px);
            assert!((got - vector_form).abs() <= 1e-9 * vector_form.abs().max(1.0));
        }
    }

    #[test]
    fn inside_test_against_barycentric_oracle() {
        // Barycentric membership for the triangle (0,0), (4,0), (0,4).
        let pp = tri_projection();
        let bary = |x: f64, y: f64| {
            let l1 = x / 4.0;
            let l2 = y / 4.0;
            let l0 = 1.0 - l1 - l2;
            l0 >= 0.0 && l1 >= 0.0 && l2 >= 0.0
        };
        assert!(inside_test(&pp, [1.0, 1.0]));
        assert!(bary(1.0, 1.0));
        assert!(!inside_test(&pp, [5.0, 5.0]));
        assert!(!bary(5.0, 5.0));
        for py in -2..8 {
            for px in -2..8 {
                let (x, y) = (px as f64, py as f64);
                assert_eq!(inside_test(&pp, [x, y]), bary(x, y), "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn boundary_pixels_are_inside() {
        let pp = tri_projection();
        assert!(inside_test(&pp, [2.0, 0.0]));
        assert!(inside_test(&pp, [0.0, 0.0]));
        assert!(inside_test(&pp, [2.0, 2.0])); // on the hypotenuse
    }

    #[test]
    fn degenerate_projection_lights_the_whole_line() {
        let pp = ProjectedPolygon {
            points: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
        };
        assert!(inside_test(&pp, [1.0, 0.0]));
        assert!(inside_test(&pp, [30.0, 0.0]));
        assert!(!inside_test(&pp, [1.0, 1.0]));
    }

    #[test]
    fn offscreen_polygon_rasterizes_empty() {
        let pp = ProjectedPolygon {
            points: vec![[100.0, 100.0], [104.0, 100.0], [100.0, 104.0]],
        };
        let img = rasterize_projection(&pp, 64, 48);
        assert_eq!(img.count_ones(), 0);
    }

    #[test]
    fn rasterize_matches_unclipped_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let cx = rng.gen_range(-10.0..70.0);
            let cy = rng.gen_range(-10.0..55.0);
            let r = rng.gen_range(0.5..25.0);
            let m = rng.gen_range(3..8);
            let points: Vec<Point2> = (0..m)
                .map(|i| {
                    let a = i as f64 / m as f64 * std::f64::consts::TAU;
                    [cx + r * a.cos(), cy + r * a.sin()]
                })
                .collect();
            let pp = ProjectedPolygon { points };
            let fast = rasterize_projection(&pp, 64, 48);
            let mut slow = BitImage::zeros(64, 48);
            for py in 1..=48i64 {
                for px in 1..=64i64 {
                    if inside_test(&pp, [px as f64, py as f64]) {
                        slow.set((px - 1) as u32, (py - 1) as u32, true);
                    }
                }
            }
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn centered_square_pixel_count_tracks_projected_area() {
        // Axis-aligned square of side s at distance z covers about
        // (f s / z)^2 pixels, within a perimeter-sized margin.
        let square = Polygon::new(vec![
            Vertex2::new(-0.1, -0.1),
            Vertex2::new(0.1, -0.1),
            Vertex2::new(0.1, 0.1),
            Vertex2::new(-0.1, 0.1),
        ])
        .unwrap();
        let k = CameraIntrinsics::new(100.0, 64, 48).unwrap();
        let q = Pose::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let img = rasterize_polygon(&square, &q, &k).unwrap();
        let side_px = 100.0 * 0.2 / 1.0;
        let area = side_px * side_px;
        let perimeter = 4.0 * side_px;
        let count = img.count_ones() as f64;
        assert!(
            (count - area).abs() <= perimeter + 4.0,
            "count {count} vs analytic {area}"
        );
    }

    #[test]
    fn compose_identities() {
        let ones = BitImage::ones(16, 12);
        let zeros = BitImage::zeros(16, 12);
        assert_eq!(ones.or(&zeros).unwrap(), ones);
        let mut rng_img = BitImage::zeros(16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for y in 0..12 {
            for x in 0..16 {
                rng_img.set(x, y, rng.gen_bool(0.4));
            }
        }
        assert_eq!(rng_img.xor(&rng_img).unwrap(), zeros);
        // XOR derived from the other operators.
        let other = {
            let mut img = BitImage::zeros(16, 12);
            for y in 0..12 {
                for x in 0..16 {
                    img.set(x, y, rng.gen_bool(0.6));
                }
            }
            img
        };
        let derived = rng_img
            .or(&other)
            .unwrap()
            .and(&rng_img.and(&other).unwrap().not())
            .unwrap();
        assert_eq!(derived, rng_img.xor(&other).unwrap());
    }

    #[test]
    fn decode_single_polygon_is_identity_composition() {
        let tri = TargetModel {
            name: "tri".into(),
            polygons: vec![Polygon::new(vec![
                Vertex2::new(-0.1, -0.1),
                Vertex2::new(0.1, -0.1),
                Vertex2::new(0.0, 0.1),
            ])
            .unwrap()],
            composition: CompositionExpr::Poly(0),
        };
        let k = CameraIntrinsics::new(100.0, 64, 48).unwrap();
        let q = Pose::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(
            decode(&tri, &q, &k).unwrap(),
            rasterize_polygon(&tri.polygons[0], &q, &k).unwrap()
        );
    }

    #[test]
    fn decode_is_periodic_in_yaw() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let q = Pose::new(0.02, -0.03, 1.4, 0.05, -0.04, 0.3);
        let mut q2 = q;
        q2.yaw += std::f64::consts::TAU;
        let a = decode(&t, &q, &k).unwrap();
        let b = decode(&t, &q2, &k).unwrap();
        // sin/cos of yaw and yaw + 2pi differ in the last ulp, but no pixel
        // of this scene sits that close to a hull edge.
        assert_eq!(a, b);
    }

    #[test]
    fn strict_decode_rejects_offscreen_target() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let q = Pose::new(5.0, 0.0, 1.4, 0.0, 0.0, 0.0);
        assert!(matches!(decode(&t, &q, &k), Err(Error::NotVisible)));
        let clipped = decode_with_policy(&t, &q, &k, DecodePolicy::Clip).unwrap();
        assert_eq!(clipped.count_ones(), 0);
    }

    #[test]
    fn decode_invariant_under_power_of_two_projection_scaling() {
        // Scaling (px, py, pz) jointly by powers of two is exact in floats
        // and leaves the normalized points, hence the image, unchanged.
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let q = Pose::new(0.01, 0.02, 1.5, 0.03, 0.02, 0.1);
        for (i, poly) in t.polygons.iter().enumerate() {
            let pp = project_polygon(poly, &q, &k, i).unwrap();
            for scale in [2.0f64, 8.0, 0.25] {
                let scaled = ProjectedPolygon {
                    points: poly
                        .vertices()
                        .iter()
                        .map(|&v| {
                            let h = analog_project(v, &q, &k);
                            [(h.px * scale) / (h.pz * scale), (h.py * scale) / (h.pz * scale)]
                        })
                        .collect(),
                };
                assert_eq!(
                    rasterize_projection(&pp, 64, 48),
                    rasterize_projection(&scaled, 64, 48)
                );
            }
        }
    }
}

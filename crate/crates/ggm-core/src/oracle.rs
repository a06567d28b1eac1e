//! Slow, exact reference paths used to cross-check the rasterizer and the
//! composition algebra.
//!
//! Membership is decided in exact integer arithmetic: every coordinate is
//! an f64 and therefore a dyadic rational, so scaling all inputs by a
//! common power of two turns each orientation test into a big-integer sign
//! computation with no rounding anywhere. The decision rule is also
//! different from the production rasterizer: it orients the polygon via
//! its exact signed area and requires the pixel on the inner side of
//! every edge, instead of the sign-agreement test.

use num_bigint::BigInt;

use crate::camera::{analog_project, CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::raster::{Point2, ProjectedPolygon};
use crate::target::{CompositionExpr, TargetModel};

/// Decomposes a finite f64 into (mantissa, exponent) with
/// `value = mantissa * 2^exponent` exactly.
fn decompose(x: f64) -> (i64, i64) {
    assert!(x.is_finite());
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1i64 } else { 1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    if exp_bits == 0 {
        (sign * frac, -1074)
    } else {
        (sign * (frac | (1 << 52)), exp_bits - 1075)
    }
}

/// Exact point-in-convex-polygon tester over the pixel lattice.
///
/// Precondition: the points are in convex position (any orientation),
/// which holds for projections of strictly convex polygons with positive
/// depths. A zero signed area falls back to exact on-line membership.
pub struct ExactConvexTester {
    /// Per edge, scaled so the term at pixel (qx, qy) is
    /// `qy * dx - qx * dy + bias` in exact integers.
    edges: Vec<(BigInt, BigInt, BigInt)>,
    /// Sign of the exact signed area: +1 CCW, -1 CW, 0 degenerate.
    orientation: i8,
}

impl ExactConvexTester {
    pub fn new(points: &[Point2]) -> Self {
        let decomposed: Vec<[(i64, i64); 2]> = points
            .iter()
            .map(|p| [decompose(p[0]), decompose(p[1])])
            .collect();
        let min_exp = decomposed
            .iter()
            .flat_map(|p| p.iter().map(|&(_, e)| e))
            .min()
            .unwrap_or(0)
            .min(0);
        let scale = (-min_exp) as u64;
        let scaled: Vec<[BigInt; 2]> = decomposed
            .iter()
            .map(|p| {
                std::array::from_fn(|i| {
                    let (m, e) = p[i];
                    BigInt::from(m) << ((e - min_exp) as u64)
                })
            })
            .collect();

        let n = scaled.len();
        let mut edges = Vec::with_capacity(n);
        let mut area2 = BigInt::from(0);
        for i in 0..n {
            let pi = &scaled[i];
            let pj = &scaled[(i + 1) % n];
            // Terms against integer pixels need the deltas lifted to the
            // same 2*scale as the bias product.
            let dx = (&pj[0] - &pi[0]) << scale;
            let dy = (&pj[1] - &pi[1]) << scale;
            let bias = &pi[0] * &pj[1] - &pi[1] * &pj[0];
            area2 += &bias;
            edges.push((dx, dy, bias));
        }
        let orientation = match area2.sign() {
            num_bigint::Sign::Plus => 1,
            num_bigint::Sign::Minus => -1,
            num_bigint::Sign::NoSign => 0,
        };
        Self { edges, orientation }
    }

    /// Exact membership of the integer pixel (qx, qy), boundary inclusive.
    pub fn contains(&self, qx: i64, qy: i64) -> bool {
        match self.orientation {
            1 => self
                .edges
                .iter()
                .all(|(dx, dy, bias)| (dx * qy - dy * qx + bias).sign() != num_bigint::Sign::Minus),
            -1 => self
                .edges
                .iter()
                .all(|(dx, dy, bias)| (dx * qy - dy * qx + bias).sign() != num_bigint::Sign::Plus),
            _ => self
                .edges
                .iter()
                .all(|(dx, dy, bias)| (dx * qy - dy * qx + bias).sign() == num_bigint::Sign::NoSign),
        }
    }
}

/// Per-pixel exact rasterization over the full lattice (no clipping, no
/// floating point).
pub fn oracle_rasterize(pp: &ProjectedPolygon, width: u32, height: u32) -> BitImage {
    let tester = ExactConvexTester::new(&pp.points);
    let mut img = BitImage::zeros(width, height);
    for py in 1..=height as i64 {
        for px in 1..=width as i64 {
            if tester.contains(px, py) {
                img.set((px - 1) as u32, (py - 1) as u32, true);
            }
        }
    }
    img
}

/// Independent composition route: plain boolean logic per pixel.
pub fn compose_bool(expr: &CompositionExpr, imgs: &[BitImage]) -> Result<BitImage> {
    let (w, h) = (imgs[0].width(), imgs[0].height());
    fn eval(expr: &CompositionExpr, imgs: &[BitImage], x: u32, y: u32) -> Result<bool> {
        Ok(match expr {
            CompositionExpr::Poly(i) => imgs
                .get(*i)
                .ok_or_else(|| Error::Composition(format!("no image for P{}", i + 1)))?
                .get(x, y),
            CompositionExpr::Not(a) => !eval(a, imgs, x, y)?,
            CompositionExpr::Or(a, b) => eval(a, imgs, x, y)? || eval(b, imgs, x, y)?,
            CompositionExpr::And(a, b) => eval(a, imgs, x, y)? && eval(b, imgs, x, y)?,
            CompositionExpr::Xor(a, b) => eval(a, imgs, x, y)? != eval(b, imgs, x, y)?,
        })
    }
    let mut out = BitImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if eval(expr, imgs, x, y)? {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Reference decoder: shared analog stage, exact integer digital stage,
/// boolean composition.
pub fn oracle_decode(t: &TargetModel, q: &Pose, k: &CameraIntrinsics) -> Result<BitImage> {
    let mut imgs = Vec::with_capacity(t.polygons.len());
    for (i, poly) in t.polygons.iter().enumerate() {
        let mut points = Vec::with_capacity(poly.len());
        for &v in poly.vertices() {
            let h = analog_project(v, q, k);
            if !(h.pz > 0.0) {
                return Err(Error::InvisiblePolygon { index: i });
            }
            let (u, w) = h.normalized();
            points.push([u, w]);
        }
        imgs.push(oracle_rasterize(&ProjectedPolygon { points }, k.width, k.height));
    }
    compose_bool(&t.composition, &imgs)
}

//! Layer-form expansion of the decoder: per-(polygon, pixel) subnetworks
//! whose L1 nodes are the edge cross products, L2 the paired-ReLU absolute
//! values, L3 the two summations, and L4 the equality threshold, followed
//! by the min/max composition stage.
//!
//! The pixel lies inside the polygon exactly when the sum of the absolute
//! values of the cross products equals the absolute value of their sum.

use serde::{Deserialize, Serialize};

use crate::camera::{visibility_check, CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::raster::{cross_term, DecodePolicy, Point2};
use crate::target::{CompositionExpr, TargetModel};

/// Whether per-edge linear coefficients are materialized once and shared
/// across pixels, or every L1 node re-derives them. The outputs are
/// bit-identical; the per-pixel form mirrors the layer table literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EvalMode {
    #[default]
    PerPixel,
    SharedEdgeTerms,
}

/// Node counts of one polygon subnetwork (per Table layout: L0 shared,
/// L1..L4 replicated per pixel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSizes {
    pub l0: usize,
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    pub l4: usize,
}

/// Expanded network for a fixed target and camera.
#[derive(Debug, Clone)]
pub struct LayerNet {
    target: TargetModel,
    intrinsics: CameraIntrinsics,
    /// Relative tolerance of the L4 equality test.
    pub tau_eq_rel: f64,
    pub eval_mode: EvalMode,
}

/// Builds the layer network for a target; parameters are derived from the
/// geometry and intrinsics, nothing is learned.
pub fn expand_layers(t: &TargetModel, k: &CameraIntrinsics) -> LayerNet {
    LayerNet {
        target: t.clone(),
        intrinsics: *k,
        tau_eq_rel: 1e-9,
        eval_mode: EvalMode::default(),
    }
}

/// Evaluates the expanded network at a pose.
pub fn eval_layers(net: &LayerNet, q: &Pose) -> Result<BitImage> {
    net.eval(q)
}

/// L2/L3/L4 of one subnetwork given its L1 activations.
/// Returns (sum of |a_i|, |sum of a_i|, output bit).
fn head_from_l1(l1: &[f64], tau_eq_rel: f64) -> (f64, f64, bool) {
    let mut a3_1 = 0.0;
    let mut running_sum = 0.0;
    for &a in l1 {
        let pos = a.max(0.0);
        let neg = (-a).max(0.0);
        a3_1 += pos + neg;
        running_sum += a;
    }
    let a3_2 = running_sum.max(0.0) + (-running_sum).max(0.0);
    let inside = (a3_1 - a3_2).abs() <= tau_eq_rel * a3_1.abs().max(1.0);
    (a3_1, a3_2, inside)
}

impl LayerNet {
    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn target(&self) -> &TargetModel {
        &self.target
    }

    pub fn polygon_count(&self) -> usize {
        self.target.polygons.len()
    }

    pub fn layer_sizes(&self, poly: usize) -> LayerSizes {
        let n = self.target.polygons[poly].len();
        let pixels = self.intrinsics.pixel_count();
        LayerSizes {
            l0: 2 * n,
            l1: pixels * n,
            l2: pixels * (2 * n + 2),
            l3: pixels * 2,
            l4: pixels,
        }
    }

    /// Summed node counts across all polygon subnetworks.
    pub fn total_sizes(&self) -> LayerSizes {
        let mut total = LayerSizes { l0: 0, l1: 0, l2: 0, l3: 0, l4: 0 };
        for i in 0..self.polygon_count() {
            let s = self.layer_sizes(i);
            total.l0 += s.l0;
            total.l1 += s.l1;
            total.l2 += s.l2;
            total.l3 += s.l3;
            total.l4 += s.l4;
        }
        total
    }

    pub fn eval(&self, q: &Pose) -> Result<BitImage> {
        self.eval_with_policy(q, DecodePolicy::Strict)
    }

    pub fn eval_with_policy(&self, q: &Pose, policy: DecodePolicy) -> Result<BitImage> {
        if policy == DecodePolicy::Strict && !visibility_check(&self.target, q, &self.intrinsics) {
            return Err(Error::NotVisible);
        }
        let mut imgs = Vec::with_capacity(self.polygon_count());
        for (i, poly) in self.target.polygons.iter().enumerate() {
            match crate::raster::project_polygon(poly, q, &self.intrinsics, i) {
                Ok(pp) => imgs.push(self.eval_subnet(&pp.points)),
                Err(e) => match policy {
                    DecodePolicy::Strict => return Err(e),
                    DecodePolicy::Clip => {
                        imgs.push(BitImage::zeros(self.intrinsics.width, self.intrinsics.height))
                    }
                },
            }
        }
        compose_minmax(&self.target.composition, &imgs)
    }

    /// Runs L1..L4 of one polygon subnetwork at every pixel.
    fn eval_subnet(&self, points: &[Point2]) -> BitImage {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let n = points.len();
        let mut img = BitImage::zeros(w, h);
        let mut l1 = vec![0.0f64; n];
        match self.eval_mode {
            EvalMode::PerPixel => {
                for py in 1..=h as i64 {
                    for px in 1..=w as i64 {
                        let pixel = [px as f64, py as f64];
                        for i in 0..n {
                            l1[i] = cross_term(points[i], points[(i + 1) % n], pixel);
                        }
                        let (_, _, inside) = head_from_l1(&l1, self.tau_eq_rel);
                        if inside {
                            img.set((px - 1) as u32, (py - 1) as u32, true);
                        }
                    }
                }
            }
            EvalMode::SharedEdgeTerms => {
                let edges: Vec<(f64, f64, f64)> = (0..n)
                    .map(|i| {
                        let pi = points[i];
                        let pj = points[(i + 1) % n];
                        (pj[0] - pi[0], pj[1] - pi[1], pi[0] * pj[1] - pi[1] * pj[0])
                    })
                    .collect();
                for py in 1..=h as i64 {
                    for px in 1..=w as i64 {
                        for (i, &(dx, dy, bias)) in edges.iter().enumerate() {
                            l1[i] = py as f64 * dx - px as f64 * dy + bias;
                        }
                        let (_, _, inside) = head_from_l1(&l1, self.tau_eq_rel);
                        if inside {
                            img.set((px - 1) as u32, (py - 1) as u32, true);
                        }
                    }
                }
            }
        }
        img
    }

    /// L1/L3/L4 node values of one polygon subnetwork at one pixel, for
    /// inspection in tests.
    pub fn subnet_trace(&self, points: &[Point2], pixel: Point2) -> SubnetTrace {
        let n = points.len();
        let l1: Vec<f64> = (0..n)
            .map(|i| cross_term(points[i], points[(i + 1) % n], pixel))
            .collect();
        let (a3_1, a3_2, inside) = head_from_l1(&l1, self.tau_eq_rel);
        SubnetTrace { l1, a3_1, a3_2, output: inside }
    }
}

#[derive(Debug, Clone)]
pub struct SubnetTrace {
    pub l1: Vec<f64>,
    pub a3_1: f64,
    pub a3_2: f64,
    pub output: bool,
}

/// Composition stage in the network's arithmetic form: negation as 1 - v,
/// union as min{1, a + b}, intersection as max{0, a + b - 1}, difference
/// via the derived expression.
pub fn compose_minmax(expr: &CompositionExpr, imgs: &[BitImage]) -> Result<BitImage> {
    if imgs.is_empty() {
        return Err(Error::Composition("no polygon images".into()));
    }
    let (w, h) = (imgs[0].width(), imgs[0].height());
    for img in imgs {
        if img.width() != w || img.height() != h {
            return Err(Error::DimensionMismatch {
                left_w: w,
                left_h: h,
                right_w: img.width(),
                right_h: img.height(),
            });
        }
    }
    fn eval(expr: &CompositionExpr, imgs: &[BitImage], x: u32, y: u32) -> Result<u8> {
        Ok(match expr {
            CompositionExpr::Poly(i) => imgs
                .get(*i)
                .ok_or_else(|| Error::Composition(format!("no image for P{}", i + 1)))?
                .get(x, y) as u8,
            CompositionExpr::Not(a) => 1 - eval(a, imgs, x, y)?,
            CompositionExpr::Or(a, b) => {
                (eval(a, imgs, x, y)? + eval(b, imgs, x, y)?).min(1)
            }
            CompositionExpr::And(a, b) => {
                (eval(a, imgs, x, y)? + eval(b, imgs, x, y)?).saturating_sub(1)
            }
            CompositionExpr::Xor(a, b) => {
                let a = eval(a, imgs, x, y)?;
                let b = eval(b, imgs, x, y)?;
                let union = (a + b).min(1);
                let inter = (a + b).saturating_sub(1);
                (union + (1 - inter)).saturating_sub(1)
            }
        })
    }
    let mut out = BitImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if eval(expr, imgs, x, y)? == 1 {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

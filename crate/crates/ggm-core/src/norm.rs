//! The pose-space norm used by certificates: a weighted L-infinity norm
//! with configurable per-dimension weights (default 1). Image-space norms
//! live on [`crate::image::BitImage`].

use serde::{Deserialize, Serialize};

use crate::camera::{Pose, PoseBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseWeights(pub [f64; 6]);

impl Default for PoseWeights {
    fn default() -> Self {
        Self([1.0; 6])
    }
}

impl PoseWeights {
    pub fn uniform(w: f64) -> Self {
        Self([w; 6])
    }

    /// Weighted L-infinity norm of a pose difference.
    pub fn distance(&self, a: &Pose, b: &Pose) -> f64 {
        let av = a.to_array();
        let bv = b.to_array();
        (0..6)
            .map(|i| self.0[i] * (av[i] - bv[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self, delta: &[f64; 6]) -> f64 {
        (0..6)
            .map(|i| self.0[i] * delta[i].abs())
            .fold(0.0, f64::max)
    }

    /// Largest weighted width of a box; the worst-case distance from the
    /// midpoint is half of this.
    pub fn box_diameter(&self, b: &PoseBox) -> f64 {
        let w = b.widths();
        (0..6).map(|i| self.0[i] * w[i]).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_linf_takes_the_max_component() {
        let w = PoseWeights([1.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
        let a = Pose::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let b = Pose::new(0.3, 0.2, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(w.distance(&a, &b), 0.4);
    }

    #[test]
    fn midpoint_worst_case_is_half_diameter() {
        let bx = PoseBox::new(
            Pose::new(0.0, -1.0, 2.0, 0.0, 0.0, 0.0),
            Pose::new(1.0, 1.0, 2.0, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let w = PoseWeights::default();
        assert_eq!(w.box_diameter(&bx), 2.0);
        let mid = bx.midpoint();
        assert_eq!(w.distance(&mid, &bx.lower), 1.0);
    }
}

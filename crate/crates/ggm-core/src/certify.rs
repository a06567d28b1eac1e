//! Worst-case pose-estimation error certificates.
//!
//! The certified radius over a pose box is
//! `(delta + eta) * (L_D * L_E + 1) + epsilon`, where eta is the test-grid
//! step, delta the identifiability slack, L_D and L_E the decoder and
//! encoder Lipschitz constants, and epsilon the empirical maximum test
//! error. Every certificate declares the norm pair it is valid for and the
//! provenance of its decoder constant; empirically estimated constants
//! mark the certificate as conditional.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{CameraIntrinsics, Pose, PoseBox};
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::norm::PoseWeights;
use crate::raster::{decode_with_policy, DecodePolicy};
use crate::target::TargetModel;

/// How a decoder Lipschitz constant was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LipschitzProvenance {
    /// Supplied by the user and trusted.
    Analytic,
    /// Sampled difference quotients scaled by a safety factor.
    EmpiricalTimesSafety { safety: f64 },
}

/// The norms a certificate is stated in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDeclaration {
    pub pose_weights: PoseWeights,
    /// Image distance: sqrt of the number of differing pixels.
    pub image_norm: String,
}

impl Default for NormDeclaration {
    fn default() -> Self {
        Self {
            pose_weights: PoseWeights::default(),
            image_norm: "sqrt-differing-pixels".into(),
        }
    }
}

/// Theorem-style bound with one ulp of upward rounding so the certificate
/// can never under-report.
pub fn certified_bound(eta: f64, delta: f64, l_decoder: f64, l_encoder: f64, epsilon: f64) -> f64 {
    debug_assert!(eta >= 0.0 && delta >= 0.0 && l_decoder >= 0.0 && l_encoder >= 0.0 && epsilon >= 0.0);
    let bound = (delta + eta) * (l_decoder * l_encoder + 1.0) + epsilon;
    bound.next_up()
}

/// Noisy-image variant: adds the encoder's response to the noise budget.
pub fn noisy_bound(
    eta: f64,
    delta: f64,
    l_decoder: f64,
    l_encoder: f64,
    epsilon: f64,
    noise_budget: f64,
) -> f64 {
    (certified_bound(eta, delta, l_decoder, l_encoder, epsilon) + l_encoder * noise_budget).next_up()
}

/// Complete certificate: inputs, norm declarations, and derived radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateBundle {
    pub eta: f64,
    pub delta: f64,
    pub l_decoder: f64,
    pub l_decoder_provenance: LipschitzProvenance,
    pub l_encoder: f64,
    pub epsilon: f64,
    pub noise_budget: f64,
    pub norms: NormDeclaration,
    /// Clean certified bound.
    pub epsilon_bar: f64,
    /// Certified radius for detection: clean bound, or the noisy variant
    /// when a noise budget is set.
    pub radius: f64,
    /// True when any ingredient is empirical rather than proven.
    pub conditional: bool,
    pub scenario_hash: Option<String>,
}

impl CertificateBundle {
    pub fn build(
        eta: f64,
        delta: f64,
        l_decoder: f64,
        l_decoder_provenance: LipschitzProvenance,
        l_encoder: f64,
        epsilon: f64,
        noise_budget: f64,
        norms: NormDeclaration,
    ) -> Self {
        let epsilon_bar = certified_bound(eta, delta, l_decoder, l_encoder, epsilon);
        let radius = if noise_budget > 0.0 {
            noisy_bound(eta, delta, l_decoder, l_encoder, epsilon, noise_budget)
        } else {
            epsilon_bar
        };
        let conditional =
            matches!(l_decoder_provenance, LipschitzProvenance::EmpiricalTimesSafety { .. });
        Self {
            eta,
            delta,
            l_decoder,
            l_decoder_provenance,
            l_encoder,
            epsilon,
            noise_budget,
            norms,
            epsilon_bar,
            radius,
            conditional,
            scenario_hash: None,
        }
    }

    pub fn with_scenario_hash(mut self, hash: String) -> Self {
        self.scenario_hash = Some(hash);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Hash binding a certificate to its scenario: canonical target spec,
/// intrinsics, box, and seeds.
pub fn scenario_hash(
    target: &TargetModel,
    k: &CameraIntrinsics,
    bounds: &PoseBox,
    seeds: &[u64],
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(crate::target::serialize_target(target).as_bytes());
    hasher.update(k.f.to_le_bytes());
    hasher.update(k.width.to_le_bytes());
    hasher.update(k.height.to_le_bytes());
    for v in bounds.lower.to_array().iter().chain(bounds.upper.to_array().iter()) {
        hasher.update(v.to_le_bytes());
    }
    for s in seeds {
        hasher.update(s.to_le_bytes());
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sampling plan for the decoder Lipschitz estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderLipschitzConfig {
    /// Neighbor separation per dimension; zero-width dims are skipped.
    pub neighbor_step: f64,
    /// Poses whose forward neighbors are probed per free dimension.
    pub neighbor_samples: usize,
    /// Additional uniform random pose pairs.
    pub random_pairs: usize,
    pub safety: f64,
    pub seed: u64,
    pub policy: DecodePolicy,
}

impl Default for DecoderLipschitzConfig {
    fn default() -> Self {
        Self {
            neighbor_step: 0.01,
            neighbor_samples: 400,
            random_pairs: 400,
            safety: 2.0,
            seed: 11,
            policy: DecodePolicy::Clip,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderLipschitzEstimate {
    /// Safety-scaled constant to certify with.
    pub l_decoder: f64,
    /// Largest observed difference quotient before the safety factor.
    pub raw_max: f64,
    pub pairs: usize,
    /// Smallest pair separation probed; quotients below this scale are
    /// not covered by the estimate.
    pub scale: f64,
    pub provenance: LipschitzProvenance,
}

/// Empirical decoder Lipschitz estimate: the maximum image-distance /
/// pose-distance quotient over forward grid neighbors and random pairs,
/// scaled by the safety factor.
pub fn estimate_decoder_lipschitz(
    t: &TargetModel,
    bounds: &PoseBox,
    k: &CameraIntrinsics,
    cfg: &DecoderLipschitzConfig,
    weights: &PoseWeights,
) -> Result<DecoderLipschitzEstimate> {
    let widths = bounds.widths();
    let free: Vec<usize> = (0..6).filter(|&i| widths[i] > 0.0).collect();
    if free.is_empty() {
        return Err(Error::DegenerateBox("zero volume".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let lo = bounds.lower.to_array();
    let hi = bounds.upper.to_array();
    let mut pairs: Vec<(Pose, Pose)> = Vec::new();

    let random_pose = |rng: &mut ChaCha20Rng| {
        Pose::from_array(std::array::from_fn(|i| {
            if hi[i] > lo[i] {
                rng.gen_range(lo[i]..=hi[i])
            } else {
                lo[i]
            }
        }))
    };

    // Difference quotients of a quantized decoder grow without bound as
    // the separation shrinks (one pixel flip over a vanishing distance),
    // so the estimate is taken at the certificate's scale: neighbor pairs
    // exactly neighbor_step apart, and random pairs no closer than that.
    for _ in 0..cfg.neighbor_samples {
        let base = random_pose(&mut rng);
        for &d in &free {
            let mut fwd = base.to_array();
            let width = hi[d] - lo[d];
            let step = cfg.neighbor_step.min(width);
            fwd[d] = if fwd[d] + step <= hi[d] {
                fwd[d] + step
            } else {
                fwd[d] - step
            };
            let fwd = Pose::from_array(fwd);
            if weights.distance(&base, &fwd) > 0.0 {
                pairs.push((base, fwd));
            }
        }
    }
    let mut attempts = 0;
    while pairs.len() < cfg.neighbor_samples * free.len() + cfg.random_pairs {
        attempts += 1;
        if attempts > 100 * cfg.random_pairs {
            break;
        }
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        let d = weights.distance(&a, &b);
        if d >= cfg.neighbor_step.min(weights.box_diameter(bounds) / 2.0) && d > 0.0 {
            pairs.push((a, b));
        }
    }
    if pairs.is_empty() {
        return Err(Error::DegenerateBox("no usable pose pairs".into()));
    }

    let policy = cfg.policy;
    let raw_max = pairs
        .par_iter()
        .map(|(a, b)| -> Result<f64> {
            let ia = decode_with_policy(t, a, k, policy)?;
            let ib = decode_with_policy(t, b, k, policy)?;
            Ok(ia.distance(&ib)? / weights.distance(a, b))
        })
        .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))?;

    let scale = pairs
        .iter()
        .map(|(a, b)| weights.distance(a, b))
        .fold(f64::INFINITY, f64::min);
    Ok(DecoderLipschitzEstimate {
        l_decoder: raw_max * cfg.safety,
        raw_max,
        pairs: pairs.len(),
        scale,
        provenance: LipschitzProvenance::EmpiricalTimesSafety { safety: cfg.safety },
    })
}

/// Outcome of the identifiability audit over a pose grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaAudit {
    /// Largest pose-norm diameter among poses decoding to one image.
    pub delta_hat: f64,
    /// Poses audited (visible grid poses).
    pub poses: usize,
    /// Distinct images observed.
    pub groups: usize,
    /// Worst colliding pose pair.
    pub worst_pair: Option<(Pose, Pose)>,
    pub audit_step: f64,
}

/// Groups audit-grid poses by bit-exact decoded image and measures the
/// largest within-group diameter in the certificate's pose norm.
pub fn delta_audit(
    t: &TargetModel,
    bounds: &PoseBox,
    k: &CameraIntrinsics,
    h_audit: f64,
    weights: &PoseWeights,
) -> Result<DeltaAudit> {
    if !(h_audit > 0.0) {
        return Err(Error::Config("audit step must be positive".into()));
    }
    let ds = crate::encoder::build_test_grid(t, bounds, h_audit, k)?;

    struct Group {
        image: BitImage,
        min: [f64; 6],
        max: [f64; 6],
        // Representative extreme poses per dimension for the witness.
        min_pose: [Pose; 6],
        max_pose: [Pose; 6],
    }

    let mut groups: HashMap<[u8; 16], Vec<Group>> = HashMap::new();
    let mut poses = 0usize;
    for (q, img) in &ds.pairs {
        poses += 1;
        let h = img.hash128();
        let bucket = groups.entry(h).or_default();
        let qa = q.to_array();
        match bucket.iter_mut().find(|g| &g.image == img) {
            Some(g) => {
                for i in 0..6 {
                    if qa[i] < g.min[i] {
                        g.min[i] = qa[i];
                        g.min_pose[i] = *q;
                    }
                    if qa[i] > g.max[i] {
                        g.max[i] = qa[i];
                        g.max_pose[i] = *q;
                    }
                }
            }
            None => bucket.push(Group {
                image: img.clone(),
                min: qa,
                max: qa,
                min_pose: [*q; 6],
                max_pose: [*q; 6],
            }),
        }
    }

    let mut delta_hat = 0.0;
    let mut worst_pair = None;
    let mut group_count = 0usize;
    for bucket in groups.values() {
        for g in bucket {
            group_count += 1;
            for i in 0..6 {
                let spread = weights.0[i] * (g.max[i] - g.min[i]);
                if spread > delta_hat {
                    delta_hat = spread;
                    worst_pair = Some((g.min_pose[i], g.max_pose[i]));
                }
            }
        }
    }

    Ok(DeltaAudit {
        delta_hat,
        poses,
        groups: group_count,
        worst_pair,
        audit_step: h_audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{targets, CompositionExpr, Polygon, TargetModel, Vertex2};
    use proptest::prelude::*;

    #[test]
    fn reproduces_published_certificate_arithmetic() {
        // eta = 0.01, delta = 0, L_D L_E = 6.45, eps = 0.84.
        let bound = certified_bound(0.01, 0.0, 6.45, 1.0, 0.84);
        assert!((bound - 0.9145).abs() < 1e-12);
        assert_eq!(format!("{bound:.2}"), "0.91");
        // Per-dimension x row: eps = 0.40.
        let x_bound = certified_bound(0.01, 0.0, 6.45, 1.0, 0.40);
        assert!((x_bound - 0.4745).abs() < 1e-12);
        assert_eq!(format!("{x_bound:.2}"), "0.47");
    }

    #[test]
    fn zero_inputs_give_zero_bound() {
        let b = certified_bound(0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(b >= 0.0 && b < 1e-300);
    }

    #[test]
    fn noisy_bound_adds_encoder_times_budget() {
        let clean = certified_bound(0.01, 0.0, 3.0, 1.5, 0.2);
        assert!((noisy_bound(0.01, 0.0, 3.0, 1.5, 0.2, 0.0) - clean).abs() < 1e-15);
        let noisy = noisy_bound(0.01, 0.0, 3.0, 2.0, 0.2, 3.0);
        let clean2 = certified_bound(0.01, 0.0, 3.0, 2.0, 0.2);
        assert!((noisy - (clean2 + 6.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bound_is_monotone_in_every_argument(
            eta in 0.0..0.5f64,
            delta in 0.0..0.5f64,
            ld in 0.0..20.0f64,
            le in 0.0..20.0f64,
            eps in 0.0..2.0f64,
            bump in 0.0..1.0f64,
        ) {
            let base = certified_bound(eta, delta, ld, le, eps);
            prop_assert!(certified_bound(eta + bump, delta, ld, le, eps) >= base);
            prop_assert!(certified_bound(eta, delta + bump, ld, le, eps) >= base);
            prop_assert!(certified_bound(eta, delta, ld + bump, le, eps) >= base);
            prop_assert!(certified_bound(eta, delta, ld, le + bump, eps) >= base);
            prop_assert!(certified_bound(eta, delta, ld, le, eps + bump) >= base);
        }
    }

    #[test]
    fn constant_decoder_estimates_zero() {
        // Target out of view across the entire box; clip-mode decode is
        // constant (empty), so every quotient is zero.
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let bounds = PoseBox::new(
            Pose::new(8.0, 0.0, 1.5, 0.0, 0.0, 0.0),
            Pose::new(9.0, 0.0, 1.5, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let est = estimate_decoder_lipschitz(
            &t,
            &bounds,
            &k,
            &DecoderLipschitzConfig {
                neighbor_samples: 20,
                random_pairs: 20,
                ..Default::default()
            },
            &PoseWeights::default(),
        )
        .unwrap();
        assert_eq!(est.l_decoder, 0.0);
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let q = Pose::new(0.0, 0.0, 1.5, 0.0, 0.0, 0.0);
        let bounds = PoseBox::new(q, q).unwrap();
        assert!(matches!(
            estimate_decoder_lipschitz(
                &t,
                &bounds,
                &k,
                &DecoderLipschitzConfig::default(),
                &PoseWeights::default()
            ),
            Err(Error::DegenerateBox(_))
        ));
    }

    #[test]
    fn translation_sweep_meets_analytic_pixel_velocity() {
        // Moving the camera dz = 0 and dx = step shifts projections by
        // f * step / z pixels; a square silhouette of height H_px flips
        // about shift * H_px pixels per column crossed, so the quotient is
        // at least sqrt(columns * H_px) / step for a one-column shift.
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let z = 1.5;
        let step = z / k.f; // exactly one pixel of shift
        let bounds = PoseBox::new(
            Pose::new(-4.0 * step, 0.0, z, 0.0, 0.0, 0.0),
            Pose::new(4.0 * step, 0.0, z, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let cfg = DecoderLipschitzConfig {
            neighbor_step: step,
            neighbor_samples: 50,
            random_pairs: 50,
            safety: 2.0,
            seed: 3,
            policy: DecodePolicy::Clip,
        };
        let est = estimate_decoder_lipschitz(&t, &bounds, &k, &cfg, &PoseWeights::default()).unwrap();
        // One pixel of shift flips at least a handful of pixels on the
        // diamond outline (height roughly 14 px at this range).
        let analytic_min = (6.0f64).sqrt() / step;
        assert!(
            est.raw_max >= analytic_min,
            "raw {} < analytic floor {analytic_min}",
            est.raw_max
        );
        // Doubling the safety factor doubles the certified constant.
        let doubled = DecoderLipschitzConfig { safety: 4.0, ..cfg };
        let est2 =
            estimate_decoder_lipschitz(&t, &bounds, &k, &doubled, &PoseWeights::default()).unwrap();
        assert!((est2.l_decoder - 2.0 * est.l_decoder).abs() < 1e-9);
    }

    #[test]
    fn single_pose_box_audits_zero() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let q = Pose::new(0.0, 0.0, 1.5, 0.0, 0.0, 0.0);
        let bounds = PoseBox::new(q, q).unwrap();
        let audit = delta_audit(&t, &bounds, &k, 0.01, &PoseWeights::default()).unwrap();
        assert_eq!(audit.delta_hat, 0.0);
        assert_eq!(audit.poses, 1);
    }

    #[test]
    fn square_symmetry_is_flagged_at_quarter_turn() {
        // A square target viewed along the axis repeats every pi/2 of yaw.
        let half = 0.13;
        let square = TargetModel {
            name: "square".into(),
            polygons: vec![Polygon::new(vec![
                Vertex2::new(-half, -half),
                Vertex2::new(half, -half),
                Vertex2::new(half, half),
                Vertex2::new(-half, half),
            ])
            .unwrap()],
            composition: CompositionExpr::Poly(0),
        };
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let quarter = std::f64::consts::FRAC_PI_2;
        let bounds = PoseBox::new(
            Pose::new(0.0, 0.0, 1.5, 0.0, 0.0, 0.0),
            Pose::new(0.0, 0.0, 1.5, 0.0, 0.0, quarter),
        )
        .unwrap();
        let audit =
            delta_audit(&square, &bounds, &k, quarter / 4.0, &PoseWeights::default()).unwrap();
        assert!(
            (audit.delta_hat - quarter).abs() < 1e-12,
            "delta_hat {} should be about pi/2",
            audit.delta_hat
        );
        let (a, b) = audit.worst_pair.unwrap();
        assert!((a.yaw - b.yaw).abs() > 1.5);
    }

    #[test]
    fn asymmetric_target_tight_box_audits_small() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let bounds = PoseBox::new(
            Pose::new(0.0, 0.0, 1.4, 0.0, 0.0, 0.0),
            Pose::new(0.04, 0.0, 1.4, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let audit = delta_audit(&t, &bounds, &k, 0.002, &PoseWeights::default()).unwrap();
        // Collisions exist (sub-pixel steps) but stay near the pose
        // quantization scale.
        assert!(audit.delta_hat <= 0.02, "delta_hat {}", audit.delta_hat);
        assert!(audit.groups > 1);
    }

    #[test]
    fn certificate_json_roundtrip_and_flags() {
        let cert = CertificateBundle::build(
            0.01,
            0.002,
            140.0,
            LipschitzProvenance::EmpiricalTimesSafety { safety: 2.0 },
            0.003,
            0.08,
            2.0,
            NormDeclaration::default(),
        );
        assert!(cert.conditional);
        assert!(cert.radius > cert.epsilon_bar);
        let json = cert.to_json().unwrap();
        let back = CertificateBundle::from_json(&json).unwrap();
        assert_eq!(back.epsilon_bar, cert.epsilon_bar);
        assert_eq!(back.l_decoder_provenance, cert.l_decoder_provenance);
    }
}

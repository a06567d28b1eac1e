//! Certified object detection and the cluttered-scene pipeline.
//!
//! A detector estimates a pose from the image, grid-samples the certified
//! error ball around the estimate, and declares the target present only
//! when some sampled pose decodes to an image within the match threshold.
//! With a zero threshold the match is bit-exact, which makes positive
//! verdicts sound by construction.
//!
//! Cluttered scenes are handled by partitioning the pose space, masking
//! the image with each cell's reachable-pixel union, and running one
//! detector per cell. A partition is usable when masked foreign images
//! can never impersonate a cell's own reachable images (the exclusion
//! condition); [`validate_partition`] checks exactly that.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose, PoseBox};
use crate::certify::CertificateBundle;
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::norm::PoseWeights;
use crate::raster::{decode_with_policy, DecodePolicy};
use crate::reach::{forward_reach, PoseGrid, ReachOptions, ReachSet};
use crate::target::TargetModel;

/// Spatial filter: the pixelwise OR of every image a pose cell can
/// produce, tagged with its provenance.
#[derive(Debug, Clone)]
pub struct Mask {
    pub image: BitImage,
    pub cell: usize,
    pub step: [f64; 6],
}

/// Builds the filter mask of a cell from its reach set.
pub fn build_mask(reach: &ReachSet, cell: usize) -> Result<Mask> {
    Ok(Mask {
        image: reach.union_mask()?,
        cell,
        step: reach.grid.step,
    })
}

/// Pixelwise AND of image and mask.
pub fn apply_filter(img: &BitImage, mask: &Mask) -> Result<BitImage> {
    img.and(&mask.image)
}

/// Image norm of the clutter that survives a mask.
pub fn clutter_intrusion(clutter: &BitImage, mask: &Mask) -> Result<f64> {
    Ok(clutter.and(&mask.image)?.norm())
}

/// Non-overlapping pose cells inside a parent box. Cells may leave gaps;
/// the exclusion condition is unattainable for cells that share
/// image-identical boundary poses, so separated cells are the norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub parent: PoseBox,
    pub cells: Vec<PoseBox>,
}

/// Interior overlap: the boxes share more than a boundary face. Touching
/// faces are allowed; dimensions degenerate in both boxes count as
/// overlapping when they coincide.
fn boxes_overlap(a: &PoseBox, b: &PoseBox) -> bool {
    let alo = a.lower.to_array();
    let ahi = a.upper.to_array();
    let blo = b.lower.to_array();
    let bhi = b.upper.to_array();
    (0..6).all(|i| {
        let ilo = alo[i].max(blo[i]);
        let ihi = ahi[i].min(bhi[i]);
        let both_degenerate = alo[i] == ahi[i] && blo[i] == bhi[i];
        if both_degenerate {
            ilo == ihi
        } else {
            ilo < ihi
        }
    })
}

impl Partition {
    pub fn new(parent: PoseBox, cells: Vec<PoseBox>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Config("partition needs at least one cell".into()));
        }
        for (i, c) in cells.iter().enumerate() {
            if !parent.contains(&c.lower) || !parent.contains(&c.upper) {
                return Err(Error::Config(format!("cell {i} leaves the parent box")));
            }
            for (j, d) in cells.iter().enumerate().skip(i + 1) {
                if boxes_overlap(c, d) {
                    return Err(Error::Config(format!("cells {i} and {j} overlap")));
                }
            }
        }
        Ok(Self { parent, cells })
    }

    /// Uniform gapped layout: `counts[i]` cells per dimension, each
    /// filling `fill` of its slot, centered. `fill = 1` tiles the box.
    pub fn gapped_uniform(parent: PoseBox, counts: [u32; 6], fill: f64) -> Result<Self> {
        if !(0.0 < fill && fill <= 1.0) {
            return Err(Error::Config(format!("fill must be in (0, 1], got {fill}")));
        }
        let lo = parent.lower.to_array();
        let widths = parent.widths();
        let mut cells = Vec::new();
        let mut idx = [0u32; 6];
        'outer: loop {
            let mut clo = [0.0f64; 6];
            let mut chi = [0.0f64; 6];
            for i in 0..6 {
                if widths[i] > 0.0 && counts[i] > 1 {
                    let pitch = widths[i] / counts[i] as f64;
                    let center = lo[i] + (idx[i] as f64 + 0.5) * pitch;
                    clo[i] = center - 0.5 * fill * pitch;
                    chi[i] = center + 0.5 * fill * pitch;
                } else {
                    clo[i] = lo[i];
                    chi[i] = lo[i] + widths[i];
                }
            }
            cells.push(PoseBox::new(
                Pose::from_array(clo),
                Pose::from_array(chi),
            )?);
            for d in 0..6 {
                if widths[d] > 0.0 && counts[d] > 1 {
                    idx[d] += 1;
                    if idx[d] < counts[d] {
                        continue 'outer;
                    }
                    idx[d] = 0;
                }
            }
            break;
        }
        Self::new(parent, cells)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }
}

/// Reach sets and masks of every cell, computed once and reused by
/// validation and the pipeline.
#[derive(Debug, Clone)]
pub struct PartitionArtifacts {
    pub partition: Partition,
    pub reach: Vec<ReachSet>,
    pub masks: Vec<Mask>,
}

pub fn build_partition_artifacts(
    partition: &Partition,
    t: &TargetModel,
    k: &CameraIntrinsics,
    step: [f64; 6],
    opts: &ReachOptions,
) -> Result<PartitionArtifacts> {
    let reach: Vec<ReachSet> = partition
        .cells
        .par_iter()
        .map(|cell| {
            let grid = PoseGrid::from_box(cell, step)?;
            forward_reach(t, &grid, k, opts)
        })
        .collect::<Result<_>>()?;
    let masks = reach
        .iter()
        .enumerate()
        .map(|(i, r)| build_mask(r, i))
        .collect::<Result<_>>()?;
    Ok(PartitionArtifacts {
        partition: partition.clone(),
        reach,
        masks,
    })
}

/// One exclusion failure: an image reachable in `source_cell`, once
/// masked by `filter_cell`'s filter, reproduces an image reachable in
/// `filter_cell`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExclusionViolation {
    pub filter_cell: usize,
    pub source_cell: usize,
    /// Index of the offending image in the source cell's reach set.
    pub source_image: usize,
    /// Index of the impersonated image in the filter cell's reach set.
    pub matched_image: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionReport {
    pub cell_valid: Vec<bool>,
    pub violations: Vec<ExclusionViolation>,
}

impl PartitionReport {
    pub fn all_valid(&self) -> bool {
        self.cell_valid.iter().all(|&v| v)
    }
}

/// Checks the exclusion condition over every ordered cell pair: no
/// masked foreign reachable image may land in the filter cell's reach
/// set. K = 1 is vacuously valid.
pub fn validate_partition(artifacts: &PartitionArtifacts) -> Result<PartitionReport> {
    let k = artifacts.partition.cell_count();
    let mut violations = Vec::new();
    for filter_cell in 0..k {
        let mask = &artifacts.masks[filter_cell];
        let own = &artifacts.reach[filter_cell];
        for source_cell in 0..k {
            if source_cell == filter_cell {
                continue;
            }
            for (source_image, ri) in artifacts.reach[source_cell].images.iter().enumerate() {
                let masked = ri.image.and(&mask.image)?;
                if let Some(matched_image) = own.find(&masked) {
                    violations.push(ExclusionViolation {
                        filter_cell,
                        source_cell,
                        source_image,
                        matched_image,
                    });
                }
            }
        }
    }
    let cell_valid = (0..k)
        .map(|i| !violations.iter().any(|v| v.filter_cell == i))
        .collect();
    Ok(PartitionReport {
        cell_valid,
        violations,
    })
}

/// Detection verdict. The pose estimate is the encoder output; `matched`
/// is the grid pose whose decode satisfied the match threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub detected: bool,
    pub pose: Option<Pose>,
    pub cell: Option<usize>,
    /// Image distance of the matched candidate.
    pub distance: Option<f64>,
    pub matched: Option<Pose>,
    /// Candidates examined; zero with `detected = false` means the
    /// certified ball missed the search box entirely.
    pub candidates: usize,
}

impl Detection {
    fn absent(candidates: usize) -> Self {
        Self {
            detected: false,
            pose: None,
            cell: None,
            distance: None,
            matched: None,
            candidates,
        }
    }
}

/// Certified detector over one pose box.
pub struct Detector<'a> {
    pub target: &'a TargetModel,
    pub intrinsics: &'a CameraIntrinsics,
    pub encoder: &'a MlpEncoder,
    pub certificate: &'a CertificateBundle,
    /// Pose space this detector searches (the full box, or one cell).
    pub search: PoseBox,
    pub step: [f64; 6],
    /// Match threshold on the image distance; the tight sound choice is
    /// L_D * h + noise budget.
    pub tau: f64,
    pub policy: DecodePolicy,
}

impl<'a> Detector<'a> {
    /// The tight sound threshold for a grid step.
    pub fn sound_tau(cert: &CertificateBundle, step: &[f64; 6], weights: &PoseWeights) -> f64 {
        let h = (0..6).map(|i| weights.0[i] * step[i]).fold(0.0, f64::max);
        cert.l_decoder * h + cert.noise_budget
    }

    /// Certified-ball candidate poses, grid-aligned to the search box and
    /// ordered by increasing weighted distance from the estimate.
    fn candidates(&self, estimate: &Pose) -> Result<Vec<Pose>> {
        let weights = &self.certificate.norms.pose_weights;
        let rho = self.certificate.radius;
        let lo = self.search.lower.to_array();
        let hi = self.search.upper.to_array();
        let est = estimate.to_array();
        let grid = PoseGrid::from_box(&self.search, self.step)?;

        // Index window of the ball intersection per dimension.
        let mut ranges = Vec::with_capacity(6);
        for i in 0..6 {
            if grid.counts[i] == 1 {
                let inside = weights.0[i] == 0.0
                    || (weights.0[i] * (lo[i] - est[i]).abs()) <= rho;
                if !inside {
                    return Ok(Vec::new());
                }
                ranges.push(0u64..1u64);
                continue;
            }
            let (blo, bhi) = if weights.0[i] > 0.0 {
                (est[i] - rho / weights.0[i], est[i] + rho / weights.0[i])
            } else {
                (lo[i], hi[i])
            };
            let first = if blo <= lo[i] {
                0u64
            } else {
                ((blo - lo[i]) / self.step[i]).ceil() as u64
            };
            let last_raw = if bhi >= hi[i] {
                grid.counts[i] - 1
            } else {
                ((bhi - lo[i]) / self.step[i]).floor() as u64
            };
            let last = last_raw.min(grid.counts[i] - 1);
            if first > last {
                return Ok(Vec::new());
            }
            ranges.push(first..last + 1);
        }

        let mut poses = Vec::new();
        let mut idx = [0u64; 6];
        for i in 0..6 {
            idx[i] = ranges[i].start;
        }
        'outer: loop {
            let q = Pose::from_array(std::array::from_fn(|i| {
                (grid.origin[i] + idx[i] as f64 * grid.step[i]).min(grid.upper[i])
            }));
            if weights.distance(&q, estimate) <= rho {
                poses.push(q);
            }
            for d in 0..6 {
                idx[d] += 1;
                if idx[d] < ranges[d].end {
                    continue 'outer;
                }
                idx[d] = ranges[d].start;
            }
            break;
        }
        poses.sort_by(|a, b| {
            weights
                .distance(a, estimate)
                .total_cmp(&weights.distance(b, estimate))
                .then_with(|| a.to_array().iter().sum::<f64>().total_cmp(&b.to_array().iter().sum()))
        });
        Ok(poses)
    }

    /// Plain grid-sampled detection: decode candidates outward from the
    /// estimate until one matches within tau.
    pub fn detect(&self, img: &BitImage) -> Result<Detection> {
        let estimate = self.encoder.forward(img)?;
        let candidates = self.candidates(&estimate)?;
        let mut examined = 0usize;
        for q in &candidates {
            examined += 1;
            let Ok(synth) = decode_with_policy(self.target, q, self.intrinsics, self.policy)
            else {
                continue;
            };
            let d = synth.distance(img)?;
            if d <= self.tau {
                return Ok(Detection {
                    detected: true,
                    pose: Some(estimate),
                    cell: None,
                    distance: Some(d),
                    matched: Some(*q),
                    candidates: examined,
                });
            }
        }
        Ok(Detection::absent(examined))
    }

    /// Archive-backed detection over a precomputed reach set of the
    /// search box. Output-equivalent to [`Self::detect`] on the same grid.
    pub fn detect_with_reach(&self, img: &BitImage, reach: &ReachSet) -> Result<Detection> {
        if reach.grid.origin != self.search.lower.to_array() || reach.grid.step != self.step {
            return Err(Error::Config(
                "reach set grid does not match the detector's search grid".into(),
            ));
        }
        let estimate = self.encoder.forward(img)?;
        let weights = &self.certificate.norms.pose_weights;
        let rho = self.certificate.radius;

        let mut best: Option<(f64, Pose, f64)> = None; // (pose distance, pose, image distance)
        if self.tau == 0.0 {
            if let Some(idx) = reach.find(img) {
                for pose_idx in reach.poses_of(idx) {
                    let q = reach.grid.pose_at(pose_idx);
                    let pd = weights.distance(&q, &estimate);
                    if pd <= rho && best.as_ref().is_none_or(|(b, _, _)| pd < *b) {
                        best = Some((pd, q, 0.0));
                    }
                }
            }
        } else {
            for (img_idx, ri) in reach.images.iter().enumerate() {
                let d = ri.image.distance(img)?;
                if d > self.tau {
                    continue;
                }
                for pose_idx in reach.poses_of(img_idx) {
                    let q = reach.grid.pose_at(pose_idx);
                    let pd = weights.distance(&q, &estimate);
                    if pd <= rho && best.as_ref().is_none_or(|(b, _, _)| pd < *b) {
                        best = Some((pd, q, d));
                    }
                }
            }
        }
        Ok(match best {
            Some((_, q, d)) => Detection {
                detected: true,
                pose: Some(estimate),
                cell: None,
                distance: Some(d),
                matched: Some(q),
                candidates: reach.grid.len() as usize,
            },
            None => Detection::absent(reach.grid.len() as usize),
        })
    }
}

/// Selection stage of the cluttered pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SelectionCriteria {
    All,
    NearestToPrior(Pose),
    MaxMatchQuality,
}

impl SelectionCriteria {
    pub fn parse(name: &str, prior: Option<Pose>) -> Result<Self> {
        match name {
            "all" => Ok(Self::All),
            "nearest-to-prior" => prior
                .map(Self::NearestToPrior)
                .ok_or_else(|| Error::Config("nearest-to-prior needs a prior pose".into())),
            "max-match-quality" => Ok(Self::MaxMatchQuality),
            other => Err(Error::UnknownStrategy(other.to_string())),
        }
    }
}

/// Applies the selection strategy to a set of positive detections.
pub fn select(
    detections: &[Detection],
    criteria: &SelectionCriteria,
    weights: &PoseWeights,
) -> Vec<Detection> {
    let positives: Vec<&Detection> = detections.iter().filter(|d| d.detected).collect();
    if positives.is_empty() {
        return Vec::new();
    }
    match criteria {
        SelectionCriteria::All => positives.into_iter().cloned().collect(),
        SelectionCriteria::NearestToPrior(prior) => {
            let best = positives
                .into_iter()
                .min_by(|a, b| {
                    let da = a.pose.map(|p| weights.distance(&p, prior)).unwrap_or(f64::MAX);
                    let db = b.pose.map(|p| weights.distance(&p, prior)).unwrap_or(f64::MAX);
                    da.total_cmp(&db)
                })
                .expect("nonempty");
            vec![best.clone()]
        }
        SelectionCriteria::MaxMatchQuality => {
            let best = positives
                .into_iter()
                .min_by(|a, b| {
                    let da = a.distance.unwrap_or(f64::MAX);
                    let db = b.distance.unwrap_or(f64::MAX);
                    da.total_cmp(&db)
                })
                .expect("nonempty");
            vec![best.clone()]
        }
    }
}

/// The cluttered-environment pipeline: filter the image per cell, run the
/// cell's certified detector, collect positives, then apply selection.
pub fn cluttered_detect(
    img: &BitImage,
    artifacts: &PartitionArtifacts,
    detectors: &[Detector<'_>],
    criteria: &SelectionCriteria,
    weights: &PoseWeights,
) -> Result<Vec<Detection>> {
    if detectors.len() != artifacts.partition.cell_count() {
        return Err(Error::Config(format!(
            "{} detectors for {} cells",
            detectors.len(),
            artifacts.partition.cell_count()
        )));
    }
    let mut detections = Vec::new();
    for (i, det) in detectors.iter().enumerate() {
        let filtered = apply_filter(img, &artifacts.masks[i])?;
        let mut d = det.detect_with_reach(&filtered, &artifacts.reach[i])?;
        if d.detected {
            d.cell = Some(i);
            detections.push(d);
        }
    }
    Ok(select(&detections, criteria, weights))
}

//! Forward reachability of the decoder over pose boxes by grid sampling.
//!
//! The grid step must stay below 1/L_D in the certificate's pose norm so
//! that neighboring grid poses cannot differ by a full pixel, which makes
//! the sampled image set exhaustive. Images are deduplicated bit-exactly:
//! a 128-bit content hash finds candidates and full equality confirms.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose, PoseBox};
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::norm::PoseWeights;
use crate::raster::{decode_with_policy, DecodePolicy};
use crate::target::TargetModel;

/// Points of `lo + k*step <= hi` with a billionth-of-a-step tolerance so
/// intended endpoints survive float representation error. Shared by every
/// grid in the crate.
pub(crate) fn grid_steps(lo: f64, hi: f64, step: f64) -> u64 {
    if hi <= lo {
        return 1;
    }
    let tol = step * 1e-9;
    let mut k = (((hi - lo) / step).floor() as i64 - 2).max(0) as u64;
    while lo + (k + 1) as f64 * step <= hi + tol {
        k += 1;
    }
    k + 1
}

/// Uniform pose grid: origin plus integer multiples of the per-dimension
/// step, inclusive of the lower corner, never exceeding the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGrid {
    pub origin: [f64; 6],
    pub step: [f64; 6],
    pub counts: [u64; 6],
    /// Box upper corner; generated coordinates clamp onto it so every
    /// grid pose stays inside the source box.
    pub upper: [f64; 6],
}

impl PoseGrid {
    /// Raw grid construction without the Lipschitz validation.
    pub fn from_box(bounds: &PoseBox, step: [f64; 6]) -> Result<Self> {
        let lo = bounds.lower.to_array();
        let hi = bounds.upper.to_array();
        let mut counts = [1u64; 6];
        for i in 0..6 {
            if hi[i] > lo[i] {
                if !(step[i] > 0.0) {
                    return Err(Error::Config(format!(
                        "dimension {i} is free but step is {}",
                        step[i]
                    )));
                }
                counts[i] = grid_steps(lo[i], hi[i], step[i]);
            }
        }
        Ok(Self {
            origin: lo,
            step,
            counts,
            upper: hi,
        })
    }

    pub fn len(&self) -> u64 {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Pose at a flat index (row-major over dimensions, dim 0 fastest).
    /// The tolerance-admitted endpoint clamps onto the box boundary.
    pub fn pose_at(&self, mut idx: u64) -> Pose {
        let mut coords = [0.0f64; 6];
        for i in 0..6 {
            let k = idx % self.counts[i];
            idx /= self.counts[i];
            coords[i] = if self.counts[i] == 1 {
                self.origin[i]
            } else {
                (self.origin[i] + k as f64 * self.step[i]).min(self.upper[i])
            };
        }
        Pose::from_array(coords)
    }

    pub fn iter(&self) -> impl Iterator<Item = Pose> + '_ {
        (0..self.len()).map(|i| self.pose_at(i))
    }
}

/// Validated grid construction: refuses steps that violate the grid
/// condition `max_i w_i h_i < 1/L_D`, reporting usable steps.
pub fn grid_sample(
    bounds: &PoseBox,
    step: [f64; 6],
    l_decoder: f64,
    weights: &PoseWeights,
) -> Result<PoseGrid> {
    if l_decoder > 0.0 {
        let widths = bounds.widths();
        let limit = 1.0 / l_decoder;
        let worst = (0..6)
            .filter(|&i| widths[i] > 0.0)
            .map(|i| weights.0[i] * step[i])
            .fold(0.0, f64::max);
        if worst >= limit {
            let required: Vec<f64> = (0..6)
                .map(|i| {
                    if widths[i] > 0.0 && weights.0[i] > 0.0 {
                        0.9 * limit / weights.0[i]
                    } else {
                        step[i]
                    }
                })
                .collect();
            return Err(Error::StepTooCoarse {
                got: worst,
                limit,
                required,
            });
        }
    }
    let grid = PoseGrid::from_box(bounds, step)?;
    if grid.len() == 0 {
        return Err(Error::EmptyGrid);
    }
    Ok(grid)
}

/// One distinct image in a reach set.
#[derive(Debug, Clone)]
pub struct ReachImage {
    pub image: BitImage,
    pub hash: [u8; 16],
    /// Lowest grid index generating this image.
    pub representative: u64,
    /// Number of grid poses generating it.
    pub count: u64,
}

/// The forward reachable set of the decoder over a grid: unique images,
/// plus the grid-index-to-image assignment.
#[derive(Debug, Clone)]
pub struct ReachSet {
    pub grid: PoseGrid,
    pub images: Vec<ReachImage>,
    /// For every grid index, the index into `images`.
    pub assignment: Vec<u32>,
    by_hash: HashMap<[u8; 16], Vec<u32>>,
}

impl ReachSet {
    pub fn unique_count(&self) -> usize {
        self.images.len()
    }

    /// Bit-exact membership: hash lookup plus full equality confirmation.
    pub fn find(&self, img: &BitImage) -> Option<usize> {
        let h = img.hash128();
        self.by_hash.get(&h).and_then(|candidates| {
            candidates
                .iter()
                .find(|&&i| &self.images[i as usize].image == img)
                .map(|&i| i as usize)
        })
    }

    pub fn contains(&self, img: &BitImage) -> bool {
        self.find(img).is_some()
    }

    /// Pixelwise OR of every image in the set.
    pub fn union_mask(&self) -> Result<BitImage> {
        let mut acc = BitImage::zeros(self.grid_image_width(), self.grid_image_height());
        for ri in &self.images {
            acc.or_assign(&ri.image)?;
        }
        Ok(acc)
    }

    fn grid_image_width(&self) -> u32 {
        self.images.first().map(|i| i.image.width()).unwrap_or(0)
    }

    fn grid_image_height(&self) -> u32 {
        self.images.first().map(|i| i.image.height()).unwrap_or(0)
    }

    /// Grid indices decoding to image `image_idx`.
    pub fn poses_of(&self, image_idx: usize) -> impl Iterator<Item = u64> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a as usize == image_idx)
            .map(|(i, _)| i as u64)
    }
}

/// Options for reach-set computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachOptions {
    pub policy: DecodePolicy,
    /// Refuse to hold more unique images in memory than this.
    pub budget: usize,
}

impl Default for ReachOptions {
    fn default() -> Self {
        Self {
            policy: DecodePolicy::Strict,
            budget: 1_000_000,
        }
    }
}

/// Decodes every grid pose and deduplicates bit-exactly. Deterministic
/// regardless of parallel schedule: chunks merge in index order and the
/// representative is always the lowest generating index.
pub fn forward_reach(
    t: &TargetModel,
    grid: &PoseGrid,
    k: &CameraIntrinsics,
    opts: &ReachOptions,
) -> Result<ReachSet> {
    let n = grid.len();
    if n == 0 {
        return Err(Error::EmptyGrid);
    }
    if n > u32::MAX as u64 {
        return Err(Error::Config(format!("grid of {n} poses exceeds the supported size")));
    }
    let chunk = 1024u64;
    let chunk_results: Vec<Result<Vec<(u64, BitImage)>>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let start = c * chunk;
            let end = ((c + 1) * chunk).min(n);
            let mut out = Vec::with_capacity((end - start) as usize);
            for idx in start..end {
                let q = grid.pose_at(idx);
                let img = decode_with_policy(t, &q, k, opts.policy)?;
                out.push((idx, img));
            }
            Ok(out)
        })
        .collect();

    let mut images: Vec<ReachImage> = Vec::new();
    let mut by_hash: HashMap<[u8; 16], Vec<u32>> = HashMap::new();
    let mut assignment = vec![0u32; n as usize];
    for chunk_result in chunk_results {
        for (idx, img) in chunk_result? {
            let h = img.hash128();
            let bucket = by_hash.entry(h).or_default();
            let existing = bucket
                .iter()
                .find(|&&i| images[i as usize].image == img)
                .copied();
            let image_idx = match existing {
                Some(i) => {
                    images[i as usize].count += 1;
                    i
                }
                None => {
                    if images.len() >= opts.budget {
                        return Err(Error::ReachBudget { budget: opts.budget });
                    }
                    let i = images.len() as u32;
                    images.push(ReachImage {
                        image: img,
                        hash: h,
                        representative: idx,
                        count: 1,
                    });
                    bucket.push(i);
                    i
                }
            };
            assignment[idx as usize] = image_idx;
        }
    }

    Ok(ReachSet {
        grid: grid.clone(),
        images,
        assignment,
        by_hash,
    })
}

/// Index entry of the on-disk reach archive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub pose: [f64; 6],
    pub hash: String,
    pub count: u64,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub grid: PoseGrid,
    pub entries: Vec<ArchiveEntry>,
}

/// Writes packed bitmaps plus a JSON index (representative pose, hash,
/// count per unique image).
pub fn write_archive(set: &ReachSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(set.images.len());
    for (i, ri) in set.images.iter().enumerate() {
        let file = format!("{i:06}.bits");
        let mut f = std::fs::File::create(dir.join(&file))?;
        ri.image.write_packed(&mut f)?;
        entries.push(ArchiveEntry {
            pose: set.grid.pose_at(ri.representative).to_array(),
            hash: ri.hash.iter().map(|b| format!("{b:02x}")).collect(),
            count: ri.count,
            file,
        });
    }
    let index = ArchiveIndex {
        grid: set.grid.clone(),
        entries,
    };
    let mut f = std::fs::File::create(dir.join("index.json"))?;
    f.write_all(serde_json::to_string_pretty(&index)?.as_bytes())?;
    // Grid-to-image assignment, u32 little-endian per grid pose.
    let mut f = std::fs::File::create(dir.join("assignment.u32"))?;
    for a in &set.assignment {
        f.write_all(&a.to_le_bytes())?;
    }
    Ok(())
}

/// Reloads a reach archive written by [`write_archive`].
pub fn read_archive(dir: &Path) -> Result<ReachSet> {
    let index: ArchiveIndex =
        serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
    let mut images = Vec::with_capacity(index.entries.len());
    let mut by_hash: HashMap<[u8; 16], Vec<u32>> = HashMap::new();
    for (i, e) in index.entries.iter().enumerate() {
        let img = BitImage::read_packed(std::fs::File::open(dir.join(&e.file))?)?;
        let hash = img.hash128();
        by_hash.entry(hash).or_default().push(i as u32);
        // Representative index is recovered from the assignment below.
        images.push(ReachImage {
            image: img,
            hash,
            representative: 0,
            count: e.count,
        });
    }
    let raw = std::fs::read(dir.join("assignment.u32"))?;
    if raw.len() != index.grid.len() as usize * 4 {
        return Err(Error::ImageFormat("assignment length mismatch".into()));
    }
    let assignment: Vec<u32> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut seen = vec![false; images.len()];
    for (idx, &a) in assignment.iter().enumerate() {
        if !seen[a as usize] {
            seen[a as usize] = true;
            images[a as usize].representative = idx as u64;
        }
    }
    Ok(ReachSet {
        grid: index.grid,
        images,
        assignment,
        by_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::decode;
    use crate::target::targets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(53.0, 64, 48).unwrap()
    }

    #[test]
    fn one_dimensional_grid_indexing() {
        let bounds = PoseBox::new(
            Pose::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            Pose::new(1.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let grid = PoseGrid::from_box(&bounds, [0.25; 6]).unwrap();
        assert_eq!(grid.len(), 5);
        let xs: Vec<f64> = grid.iter().map(|q| q.x).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        // Zero-width dims contribute one index each.
        assert_eq!(grid.counts, [5, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn cell_of_three_free_dims_and_half_width_step() {
        let bounds = PoseBox::new(
            Pose::new(0.0, 0.8, 1.6, 0.0, 0.0, 0.0),
            Pose::new(0.0, 0.9, 1.7, 0.1, 0.0, 0.0),
        )
        .unwrap();
        let grid = PoseGrid::from_box(&bounds, [0.0, 0.05, 0.05, 0.05, 0.0, 0.0]).unwrap();
        assert_eq!(grid.len(), 27);
    }

    #[test]
    fn step_violating_lipschitz_condition_is_refused() {
        let bounds = PoseBox::new(
            Pose::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            Pose::new(1.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let err = grid_sample(&bounds, [0.5; 6], 10.0, &PoseWeights::default()).unwrap_err();
        match err {
            Error::StepTooCoarse { got, limit, required } => {
                assert_eq!(got, 0.5);
                assert_eq!(limit, 0.1);
                assert!(required[0] < 0.1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(grid_sample(&bounds, [0.05; 6], 10.0, &PoseWeights::default()).is_ok());
    }

    #[test]
    fn single_pose_reach_set() {
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let q = Pose::new(0.0, 0.0, 1.5, 0.0, 0.0, 0.0);
        let bounds = PoseBox::new(q, q).unwrap();
        let grid = PoseGrid::from_box(&bounds, [0.0; 6]).unwrap();
        let set = forward_reach(&t, &grid, &k, &ReachOptions::default()).unwrap();
        assert_eq!(set.unique_count(), 1);
        assert_eq!(set.images[0].image, decode(&t, &q, &k).unwrap());
        assert_eq!(set.images[0].count, 1);
    }

    #[test]
    fn subpixel_box_collapses_to_one_image() {
        // Shrink a box around a generic pose by the projected-velocity
        // estimate (f/z pixels per meter) until no pixel flips inside it;
        // every decode then equals the corner image and the counts
        // aggregate onto it.
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let z = 1.5;
        let base = Pose::new(0.0137, 0.0071, z, 0.0, 0.0, 0.0);
        let mut eps = 0.2 * z / k.f; // a fifth of a pixel of shift
        for _ in 0..12 {
            let bounds = PoseBox::new(
                base,
                Pose::new(base.x + eps, base.y, z, 0.0, 0.0, 0.0),
            )
            .unwrap();
            let grid = PoseGrid::from_box(&bounds, [eps / 4.0; 6]).unwrap();
            let set = forward_reach(&t, &grid, &k, &ReachOptions::default()).unwrap();
            assert_eq!(grid.len(), 5);
            if set.unique_count() == 1 {
                assert_eq!(set.images[0].count, grid.len());
                return;
            }
            eps /= 4.0;
        }
        panic!("no sub-pixel stability interval found");
    }

    #[test]
    fn reach_set_size_bounded_by_grid() {
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let bounds = PoseBox::new(
            Pose::new(-0.02, 0.0, 1.4, 0.0, 0.0, 0.0),
            Pose::new(0.02, 0.0, 1.6, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let grid = PoseGrid::from_box(&bounds, [0.01, 0.0, 0.02, 0.0, 0.0, 0.0]).unwrap();
        let set = forward_reach(&t, &grid, &k, &ReachOptions::default()).unwrap();
        assert!(set.unique_count() as u64 <= grid.len());
        assert_eq!(set.assignment.len() as u64, grid.len());
        let total: u64 = set.images.iter().map(|i| i.count).sum();
        assert_eq!(total, grid.len());
    }

    #[test]
    fn determinism_across_thread_counts() {
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let bounds = PoseBox::new(
            Pose::new(-0.02, 0.0, 1.4, 0.0, 0.0, 0.0),
            Pose::new(0.02, 0.0, 1.6, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let grid = PoseGrid::from_box(&bounds, [0.005, 0.0, 0.01, 0.0, 0.0, 0.0]).unwrap();
        let a = forward_reach(&t, &grid, &k, &ReachOptions::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| forward_reach(&t, &grid, &k, &ReachOptions::default()).unwrap());
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.unique_count(), b.unique_count());
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.representative, y.representative);
            assert_eq!(x.count, y.count);
        }
    }

    #[test]
    fn aligned_subgrid_reach_is_subset() {
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let big = PoseBox::new(
            Pose::new(-0.02, 0.0, 1.4, 0.0, 0.0, 0.0),
            Pose::new(0.02, 0.0, 1.5, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let small = PoseBox::new(
            Pose::new(-0.02, 0.0, 1.4, 0.0, 0.0, 0.0),
            Pose::new(0.0, 0.0, 1.45, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let step = [0.01, 0.0, 0.025, 0.0, 0.0, 0.0];
        let set_big =
            forward_reach(&t, &PoseGrid::from_box(&big, step).unwrap(), &k, &ReachOptions::default())
                .unwrap();
        let set_small = forward_reach(
            &t,
            &PoseGrid::from_box(&small, step).unwrap(),
            &k,
            &ReachOptions::default(),
        )
        .unwrap();
        for ri in &set_small.images {
            assert!(set_big.contains(&ri.image));
        }
    }

    #[test]
    fn budget_exceeded_is_reported() {
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let bounds = PoseBox::new(
            Pose::new(-0.05, 0.0, 1.3, 0.0, 0.0, 0.0),
            Pose::new(0.05, 0.0, 1.7, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let grid = PoseGrid::from_box(&bounds, [0.01, 0.0, 0.05, 0.0, 0.0, 0.0]).unwrap();
        let opts = ReachOptions { budget: 3, ..Default::default() };
        assert!(matches!(
            forward_reach(&t, &grid, &k, &opts),
            Err(Error::ReachBudget { budget: 3 })
        ));
    }

    #[test]
    fn archive_roundtrip() {
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let bounds = PoseBox::new(
            Pose::new(-0.02, 0.0, 1.4, 0.0, 0.0, 0.0),
            Pose::new(0.02, 0.0, 1.5, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let grid = PoseGrid::from_box(&bounds, [0.01, 0.0, 0.025, 0.0, 0.0, 0.0]).unwrap();
        let set = forward_reach(&t, &grid, &k, &ReachOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_archive(&set, dir.path()).unwrap();
        let back = read_archive(dir.path()).unwrap();
        assert_eq!(back.unique_count(), set.unique_count());
        assert_eq!(back.assignment, set.assignment);
        for (a, b) in set.images.iter().zip(&back.images) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.count, b.count);
            assert_eq!(a.representative, b.representative);
        }
        // Membership works after reload.
        let q = grid.pose_at(3);
        assert!(back.contains(&decode(&t, &q, &k).unwrap()));
    }

    #[test]
    fn covering_property_at_fine_step() {
        // With a sufficiently fine grid, random in-box poses decode to an
        // image already present in the reach set.
        let t = targets::slow_vehicle_sign();
        let k = desk_camera();
        let z = 1.5;
        let bounds = PoseBox::new(
            Pose::new(-0.01, 0.0, z, 0.0, 0.0, 0.0),
            Pose::new(0.01, 0.0, z, 0.0, 0.0, 0.0),
        )
        .unwrap();
        // About 1/14 pixel of image motion per grid step.
        let step_x = 0.002 * z / k.f;
        let grid = PoseGrid::from_box(&bounds, [step_x, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let set = forward_reach(&t, &grid, &k, &ReachOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let q = Pose::new(rng.gen_range(-0.01..0.01), 0.0, z, 0.0, 0.0, 0.0);
            let img = decode(&t, &q, &k).unwrap();
            assert!(set.contains(&img), "missing image for x={}", q.x);
        }
    }
}

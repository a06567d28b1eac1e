//! Trainable pose regressor: a small fully connected network with sigmoid
//! activations whose output head maps [0,1]^6 affinely onto a pose box,
//! so estimates always land in-box and error norms stay bounded.
//!
//! Training follows the decoder-encoder loop: sample poses, decode them,
//! regress the pose back from the image. The optimizer is Adam with a
//! spectral-norm product penalty and hard weight clipping, which keeps the
//! encoder's Lipschitz bound certifiable.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose, PoseBox};
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::norm::PoseWeights;
use crate::raster::decode;
use crate::target::TargetModel;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone)]
struct Dense {
    /// out x in
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Fully connected pose regressor.
#[derive(Debug, Clone)]
pub struct MlpEncoder {
    layers: Vec<Dense>,
    input_width: u32,
    input_height: u32,
    /// Average-pooling factor applied to the image before flattening
    /// (1 = feed pixels directly).
    pool: u32,
    out_box: PoseBox,
}

impl MlpEncoder {
    /// Zero-initialized encoder with the given hidden layer widths.
    pub fn zeros(
        input_width: u32,
        input_height: u32,
        pool: u32,
        hidden: &[usize],
        out_box: PoseBox,
    ) -> Result<Self> {
        if pool == 0 || input_width % pool != 0 || input_height % pool != 0 {
            return Err(Error::Config(format!(
                "pool factor {pool} must divide {input_width}x{input_height}"
            )));
        }
        let input_dim = (input_width / pool) as usize * (input_height / pool) as usize;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(6);
        let layers = dims
            .windows(2)
            .map(|d| Dense {
                w: Array2::zeros((d[1], d[0])),
                b: Array1::zeros(d[1]),
            })
            .collect();
        Ok(Self {
            layers,
            input_width,
            input_height,
            pool,
            out_box,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.w.nrows(), l.w.ncols())).collect()
    }

    pub fn out_box(&self) -> &PoseBox {
        &self.out_box
    }

    pub fn pool(&self) -> u32 {
        self.pool
    }

    /// Flattens (and average-pools) a binary image into the input vector.
    pub fn image_to_input(&self, img: &BitImage) -> Result<Array1<f64>> {
        if img.width() != self.input_width || img.height() != self.input_height {
            return Err(Error::EncoderInput {
                expected: (self.input_width as usize) * (self.input_height as usize),
                got: (img.width() as usize) * (img.height() as usize),
            });
        }
        let p = self.pool;
        let (ow, oh) = (self.input_width / p, self.input_height / p);
        let mut out = Array1::zeros((ow * oh) as usize);
        let inv = 1.0 / (p as f64 * p as f64);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..p {
                    for dx in 0..p {
                        if img.get(ox * p + dx, oy * p + dy) {
                            acc += 1.0;
                        }
                    }
                }
                out[(oy * ow + ox) as usize] = acc * inv;
            }
        }
        Ok(out)
    }

    fn forward_input(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let z = layer.w.dot(&a) + &layer.b;
            a = z.mapv(sigmoid);
        }
        a
    }

    /// Batch of sigmoid outputs in [0,1]^6; rows are samples.
    fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let z = a.dot(&layer.w.t()) + &layer.b;
            a = z.mapv(sigmoid);
        }
        a
    }

    fn unit_to_pose(&self, s: &Array1<f64>) -> Pose {
        let lo = self.out_box.lower.to_array();
        let hi = self.out_box.upper.to_array();
        Pose::from_array(std::array::from_fn(|i| lo[i] + (hi[i] - lo[i]) * s[i]))
    }

    /// Deterministic pose estimate, always inside the output box.
    pub fn forward(&self, img: &BitImage) -> Result<Pose> {
        let x = self.image_to_input(img)?;
        let s = self.forward_input(&x);
        Ok(self.unit_to_pose(&s))
    }
}

/// Standard smooth-L1 (Huber, delta = 1) applied componentwise to poses in
/// box-normalized coordinates, averaged over the box's free dimensions.
pub fn smooth_l1(pred: &Pose, target: &Pose, bounds: &PoseBox) -> f64 {
    let widths = bounds.widths();
    let p = pred.to_array();
    let t = target.to_array();
    let mut total = 0.0;
    let mut dims = 0usize;
    for i in 0..6 {
        if widths[i] > 0.0 {
            total += huber((p[i] - t[i]) / widths[i]);
            dims += 1;
        }
    }
    if dims == 0 {
        0.0
    } else {
        total / dims as f64
    }
}

fn huber(d: f64) -> f64 {
    let a = d.abs();
    if a <= 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

fn huber_grad(d: f64) -> f64 {
    if d.abs() <= 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Largest singular value by power iteration with a deterministic seeded
/// start vector. Converges geometrically; `iters` caps the work.
pub fn spectral_norm(w: &Array2<f64>, iters: usize) -> f64 {
    power_iterate(w, &mut deterministic_unit(w.ncols()), iters).0
}

fn deterministic_unit(n: usize) -> Array1<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let mut v: Array1<f64> = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

/// One power-iteration run; returns (sigma, right singular vector).
fn power_iterate(w: &Array2<f64>, v: &mut Array1<f64>, iters: usize) -> (f64, Array1<f64>) {
    let mut sigma = 0.0;
    for _ in 0..iters {
        let u = w.dot(v);
        let un = u.dot(&u).sqrt();
        if un == 0.0 {
            return (0.0, v.clone());
        }
        let vt = w.t().dot(&u) / un;
        let vn = vt.dot(&vt).sqrt();
        if vn == 0.0 {
            return (0.0, v.clone());
        }
        *v = vt / vn;
        sigma = w.dot(v).dot(&w.dot(v)).sqrt();
    }
    (sigma, v.clone())
}

/// Upper bound on the encoder's Lipschitz constant from image space
/// (sqrt-of-differing-pixels norm) to pose space (weighted L-infinity):
/// the product of layer spectral norms, a 1/4 slope factor per sigmoid
/// layer, the pooling contraction, and the output-box scaling.
pub fn encoder_lipschitz_bound(e: &MlpEncoder, weights: &PoseWeights) -> f64 {
    let mut bound = 1.0 / e.pool as f64;
    for layer in &e.layers {
        bound *= spectral_norm(&layer.w, 200);
        bound *= 0.25;
    }
    let w = e.out_box.widths();
    let scale = (0..6).map(|i| weights.0[i] * w[i]).fold(0.0, f64::max);
    bound * scale
}

/// Adam optimizer state for one tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Standard bias-corrected Adam update, applied in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Training hyperparameters. Defaults mirror the uncluttered-experiment
/// setup at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Lipschitz penalty weight on the product of layer spectral norms.
    pub lambda: f64,
    /// Hard clip bound applied to every weight after each step.
    pub clip: f64,
    pub seed: u64,
    pub pose_weights: PoseWeights,
    pub hidden: Vec<usize>,
    /// Average-pooling factor on the image input.
    pub pool: u32,
    /// Training set size (random in-box poses, visibility-rejected).
    pub samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 128,
            epochs: 50,
            lambda: 0.1,
            clip: 0.05,
            seed: 7,
            pose_weights: PoseWeights::default(),
            hidden: vec![256, 200],
            pool: 1,
            samples: 4096,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub samples: usize,
    pub resampled: usize,
    pub spectral_norms: Vec<f64>,
}

/// Provenance of a dataset's poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Grid,
    Random,
}

/// Pose-image pairs where every image is the decode of its pose.
#[derive(Debug, Clone)]
pub struct PoseImageDataset {
    pub pairs: Vec<(Pose, BitImage)>,
    pub provenance: Provenance,
}

impl PoseImageDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Writes images as packed bitmaps plus a JSON-lines manifest of
    /// (pose, image path) records.
    pub fn write_manifest(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = std::fs::File::create(dir.join("manifest.jsonl"))?;
        for (i, (pose, img)) in self.pairs.iter().enumerate() {
            let rel = format!("{i:06}.bits");
            let mut f = std::fs::File::create(dir.join(&rel))?;
            img.write_packed(&mut f)?;
            let record = serde_json::json!({ "pose": pose.to_array(), "image": rel });
            writeln!(manifest, "{record}")?;
        }
        Ok(())
    }
}

/// Uniformly samples a visible pose, resampling rejected draws.
/// Counts rejections in `resampled`.
fn sample_visible_pose(
    t: &TargetModel,
    bounds: &PoseBox,
    k: &CameraIntrinsics,
    rng: &mut impl Rng,
    resampled: &mut usize,
) -> Result<Pose> {
    let lo = bounds.lower.to_array();
    let hi = bounds.upper.to_array();
    for _ in 0..10_000 {
        let q = Pose::from_array(std::array::from_fn(|i| {
            if hi[i] > lo[i] {
                rng.gen_range(lo[i]..=hi[i])
            } else {
                lo[i]
            }
        }));
        if crate::camera::visibility_check(t, &q, k) {
            return Ok(q);
        }
        *resampled += 1;
    }
    Err(Error::Config(
        "target not visible anywhere in the sampled pose box".into(),
    ))
}

use crate::reach::grid_steps as steps_per_dim;

/// Number of poses an eta-grid over the box would hold, without
/// materializing anything.
pub fn grid_point_count(bounds: &PoseBox, eta: f64) -> u128 {
    let lo = bounds.lower.to_array();
    let hi = bounds.upper.to_array();
    (0..6)
        .map(|i| steps_per_dim(lo[i], hi[i], eta) as u128)
        .product()
}

/// Builds the test dataset: all eta-grid poses over the box, intersected
/// with visibility, with images from the decoder.
pub fn build_test_grid(
    t: &TargetModel,
    bounds: &PoseBox,
    eta: f64,
    k: &CameraIntrinsics,
) -> Result<PoseImageDataset> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!("grid step eta must be positive, got {eta}")));
    }
    let lo = bounds.lower.to_array();
    let hi = bounds.upper.to_array();
    let counts: Vec<u64> = (0..6).map(|i| steps_per_dim(lo[i], hi[i], eta)).collect();
    let total: u128 = counts.iter().map(|&c| c as u128).product();
    if total == 0 {
        return Err(Error::EmptyGrid);
    }
    if total > 50_000_000 {
        return Err(Error::Config(format!(
            "test grid of {total} poses is too large to materialize"
        )));
    }
    let mut poses = Vec::new();
    let mut idx = [0u64; 6];
    'outer: loop {
        let q = Pose::from_array(std::array::from_fn(|i| {
            (lo[i] + idx[i] as f64 * eta).min(hi[i])
        }));
        poses.push(q);
        for d in 0..6 {
            idx[d] += 1;
            if idx[d] < counts[d] {
                continue 'outer;
            }
            idx[d] = 0;
        }
        break;
    }
    let pairs: Vec<(Pose, BitImage)> = poses
        .into_par_iter()
        .filter_map(|q| decode(t, &q, k).ok().map(|img| (q, img)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(PoseImageDataset {
        pairs,
        provenance: Provenance::Grid,
    })
}

/// Maximum weighted pose-norm error of the encoder over a dataset.
pub fn empirical_max_error(
    e: &MlpEncoder,
    ds: &PoseImageDataset,
    weights: &PoseWeights,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    ds.pairs
        .par_iter()
        .map(|(pose, img)| e.forward(img).map(|est| weights.distance(pose, &est)))
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Trains an encoder against the decoder over the pose box.
pub fn train_encoder(
    t: &TargetModel,
    bounds: &PoseBox,
    k: &CameraIntrinsics,
    cfg: &TrainConfig,
) -> Result<(MlpEncoder, TrainReport)> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut resampled = 0usize;
    let mut poses = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        poses.push(sample_visible_pose(t, bounds, k, &mut rng, &mut resampled)?);
    }
    let images: Vec<BitImage> = poses
        .par_iter()
        .map(|q| decode(t, q, k).expect("sampled pose is visible"))
        .collect();

    let mut enc = MlpEncoder::zeros(k.width, k.height, cfg.pool, &cfg.hidden, *bounds)?;
    // Xavier-style uniform init, then clip so the invariant holds from the
    // first step onward.
    for layer in &mut enc.layers {
        let bound = (6.0 / (layer.w.nrows() + layer.w.ncols()) as f64).sqrt();
        let limit = bound.min(cfg.clip);
        layer.w.mapv_inplace(|_| rng.gen_range(-limit..=limit));
    }

    let inputs: Vec<Array1<f64>> = images
        .par_iter()
        .map(|img| enc.image_to_input(img).expect("dims match"))
        .collect();
    let input_dim = enc.input_dim();
    let lo = bounds.lower.to_array();
    let widths = bounds.widths();
    let free: Vec<usize> = (0..6).filter(|&i| widths[i] > 0.0).collect();
    if free.is_empty() {
        return Err(Error::DegenerateBox("all dimensions fixed".into()));
    }
    let targets_norm: Vec<[f64; 6]> = poses
        .iter()
        .map(|q| {
            let qa = q.to_array();
            std::array::from_fn(|i| {
                if widths[i] > 0.0 {
                    (qa[i] - lo[i]) / widths[i]
                } else {
                    0.5
                }
            })
        })
        .collect();

    let mut adam_w: Vec<AdamState> = enc.layers.iter().map(|l| AdamState::new(l.w.len())).collect();
    let mut adam_b: Vec<AdamState> = enc.layers.iter().map(|l| AdamState::new(l.b.len())).collect();
    // Warm-started power-iteration vectors for the penalty term.
    let mut power_vecs: Vec<Array1<f64>> = enc
        .layers
        .iter()
        .map(|l| deterministic_unit(l.w.ncols()))
        .collect();

    let mut order: Vec<usize> = (0..cfg.samples).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let n_layers = enc.layers.len();

    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let bsz = chunk.len();
            let mut x = Array2::zeros((bsz, input_dim));
            let mut tgt = Array2::zeros((bsz, 6));
            for (row, &si) in chunk.iter().enumerate() {
                x.row_mut(row).assign(&inputs[si]);
                for d in 0..6 {
                    tgt[(row, d)] = targets_norm[si][d];
                }
            }
            // Forward, caching activations.
            let mut acts = Vec::with_capacity(n_layers + 1);
            acts.push(x);
            for layer in &enc.layers {
                let z = acts.last().unwrap().dot(&layer.w.t()) + &layer.b;
                acts.push(z.mapv(sigmoid));
            }
            let pred = acts.last().unwrap();

            let denom = (bsz * free.len()) as f64;
            let mut loss = 0.0;
            let mut delta = Array2::zeros((bsz, 6));
            for row in 0..bsz {
                for &d in &free {
                    let diff = pred[(row, d)] - tgt[(row, d)];
                    loss += huber(diff) / denom;
                    delta[(row, d)] = huber_grad(diff) / denom;
                }
            }
            epoch_loss += loss;
            batches += 1;

            // Backward through the sigmoid chain.
            let mut grads_w = Vec::with_capacity(n_layers);
            let mut grads_b = Vec::with_capacity(n_layers);
            let mut d = delta;
            for li in (0..n_layers).rev() {
                let a_out = &acts[li + 1];
                let dz = &d * &(a_out * &(1.0 - a_out));
                grads_w.push(dz.t().dot(&acts[li]));
                grads_b.push(dz.sum_axis(Axis(0)));
                if li > 0 {
                    d = dz.dot(&enc.layers[li].w);
                }
            }
            grads_w.reverse();
            grads_b.reverse();

            // Penalty gradient: lambda * prod sigma_k * u_l v_l^T / sigma_l.
            if cfg.lambda > 0.0 {
                let mut sigmas = Vec::with_capacity(n_layers);
                let mut uvs = Vec::with_capacity(n_layers);
                for (li, layer) in enc.layers.iter().enumerate() {
                    let (sigma, v) = power_iterate(&layer.w, &mut power_vecs[li], 20);
                    let u = if sigma > 0.0 {
                        layer.w.dot(&v) / sigma
                    } else {
                        Array1::zeros(layer.w.nrows())
                    };
                    sigmas.push(sigma);
                    uvs.push((u, v));
                }
                let product: f64 = sigmas.iter().product();
                for li in 0..n_layers {
                    if sigmas[li] > 0.0 {
                        let coeff = cfg.lambda * product / sigmas[li];
                        let (u, v) = &uvs[li];
                        let outer = u
                            .view()
                            .insert_axis(Axis(1))
                            .dot(&v.view().insert_axis(Axis(0)));
                        grads_w[li] += &(coeff * &outer);
                    }
                }
            }

            for li in 0..n_layers {
                adam_w[li].step(
                    enc.layers[li].w.as_slice_mut().unwrap(),
                    grads_w[li].as_slice().unwrap(),
                    cfg.lr,
                );
                adam_b[li].step(
                    enc.layers[li].b.as_slice_mut().unwrap(),
                    grads_b[li].as_slice().unwrap(),
                    cfg.lr,
                );
                let clip = cfg.clip;
                enc.layers[li].w.mapv_inplace(|w| w.clamp(-clip, clip));
            }
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }

    let spectral_norms = enc.layers.iter().map(|l| spectral_norm(&l.w, 200)).collect();
    Ok((
        enc,
        TrainReport {
            epoch_losses,
            samples: cfg.samples,
            resampled,
            spectral_norms,
        },
    ))
}

/// Loss and full gradient for one batch, used by the finite-difference
/// audit. Pure, no optimizer state.
pub fn loss_and_gradients(
    enc: &MlpEncoder,
    x: &Array2<f64>,
    targets_norm: &Array2<f64>,
) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let n_layers = enc.layers.len();
    let bsz = x.nrows();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(x.clone());
    for layer in &enc.layers {
        let z = acts.last().unwrap().dot(&layer.w.t()) + &layer.b;
        acts.push(z.mapv(sigmoid));
    }
    let pred = acts.last().unwrap();
    let denom = (bsz * 6) as f64;
    let mut loss = 0.0;
    let mut delta = Array2::zeros((bsz, 6));
    for row in 0..bsz {
        for d in 0..6 {
            let diff = pred[(row, d)] - targets_norm[(row, d)];
            loss += huber(diff) / denom;
            delta[(row, d)] = huber_grad(diff) / denom;
        }
    }
    let mut grads_w = Vec::with_capacity(n_layers);
    let mut grads_b = Vec::with_capacity(n_layers);
    let mut d = delta;
    for li in (0..n_layers).rev() {
        let a_out = &acts[li + 1];
        let dz = &d * &(a_out * &(1.0 - a_out));
        grads_w.push(dz.t().dot(&acts[li]));
        grads_b.push(dz.sum_axis(Axis(0)));
        if li > 0 {
            d = dz.dot(&enc.layers[li].w);
        }
    }
    grads_w.reverse();
    grads_b.reverse();
    (loss, grads_w, grads_b)
}

/// Evaluates only the loss (for finite differences).
pub fn loss_only(enc: &MlpEncoder, x: &Array2<f64>, targets_norm: &Array2<f64>) -> f64 {
    let pred = enc.forward_batch(x);
    let bsz = x.nrows();
    let denom = (bsz * 6) as f64;
    let mut loss = 0.0;
    for row in 0..bsz {
        for d in 0..6 {
            loss += huber(pred[(row, d)] - targets_norm[(row, d)]) / denom;
        }
    }
    loss
}

/// Mutable access to flat parameters, used by audits and checkpoints.
impl MlpEncoder {
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = flat[pos];
                pos += 1;
            }
            for b in l.b.iter_mut() {
                *b = flat[pos];
                pos += 1;
            }
        }
        assert_eq!(pos, flat.len());
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter())
            .fold(0.0f64, |acc, w| acc.max(w.abs()))
    }

    pub fn spectral_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| spectral_norm(&l.w, 200)).collect()
    }

    const MAGIC: &'static [u8; 4] = b"GGME";
    const VERSION: u32 = 1;

    /// Versioned binary checkpoint: dims header then float64 weights,
    /// little-endian throughout.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&self.input_width.to_le_bytes())?;
        w.write_all(&self.input_height.to_le_bytes())?;
        w.write_all(&self.pool.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.w.nrows() as u32).to_le_bytes())?;
            w.write_all(&(l.w.ncols() as u32).to_le_bytes())?;
        }
        for v in self
            .out_box
            .lower
            .to_array()
            .iter()
            .chain(self.out_box.upper.to_array().iter())
        {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.w.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in l.b.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let input_width = read_u32(&mut r)?;
        let input_height = read_u32(&mut r)?;
        let pool = read_u32(&mut r)?;
        let n_layers = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            dims.push((rows, cols));
        }
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mut box_vals = [0.0f64; 12];
        for v in box_vals.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        let out_box = PoseBox::new(
            Pose::from_array(box_vals[..6].try_into().unwrap()),
            Pose::from_array(box_vals[6..].try_into().unwrap()),
        )?;
        let mut layers = Vec::with_capacity(n_layers);
        for &(rows, cols) in &dims {
            let mut w = Array2::zeros((rows, cols));
            for v in w.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            let mut b = Array1::zeros(rows);
            for v in b.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            layers.push(Dense { w, b });
        }
        Ok(Self {
            layers,
            input_width,
            input_height,
            pool,
            out_box,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::targets;

    fn toy_box() -> PoseBox {
        PoseBox::new(
            Pose::new(-0.05, -0.05, 1.2, 0.0, 0.0, 0.0),
            Pose::new(0.05, 0.05, 1.8, 0.0, 0.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_output_box_midpoint() {
        let bx = toy_box();
        let enc = MlpEncoder::zeros(16, 12, 1, &[8], bx).unwrap();
        let img = BitImage::zeros(16, 12);
        let q = enc.forward(&img).unwrap();
        let mid = bx.midpoint();
        assert_eq!(q.to_array(), mid.to_array());
    }

    #[test]
    fn forward_is_deterministic() {
        let bx = toy_box();
        let mut enc = MlpEncoder::zeros(16, 12, 1, &[8], bx).unwrap();
        let flat: Vec<f64> = (0..enc.params_flat().len())
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 1000.0)
            .collect();
        enc.set_params_flat(&flat);
        let mut img = BitImage::zeros(16, 12);
        img.set(3, 4, true);
        img.set(9, 9, true);
        let a = enc.forward(&img).unwrap();
        let b = enc.forward(&img).unwrap();
        assert_eq!(a.to_array(), b.to_array());
    }

    #[test]
    fn smooth_l1_branch_values() {
        let bx = PoseBox::new(
            Pose::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            Pose::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
        )
        .unwrap();
        let target = Pose::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(smooth_l1(&target, &target, &bx), 0.0);
        let half = Pose::new(0.5, 0.5, 0.5, 0.5, 0.5, 0.5);
        assert!((smooth_l1(&half, &target, &bx) - 0.125).abs() < 1e-15);
        // |d| = 2 in normalized units exercises the linear branch.
        let two = Pose::new(2.0, 2.0, 2.0, 2.0, 2.0, 2.0);
        assert!((smooth_l1(&two, &target, &bx) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = vec![0.3, -0.2, 0.0];
        let mut st = AdamState::new(3);
        st.step(&mut p, &[0.0, 0.0, 0.0], 0.1);
        assert_eq!(p, vec![0.3, -0.2, 0.0]);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        st.step(&mut p, &[3.0, -0.2], 0.01);
        // Bias-corrected first step is -lr * g / (|g| + eps) = -lr sign(g).
        assert!((p[0] + 0.01).abs() < 1e-6);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            st.step(&mut p, &[0.5], 0.01);
            last_step = (p[0] - prev).abs();
            prev = p[0];
        }
        assert!((last_step - 0.01).abs() < 1e-4, "step {last_step}");
    }

    #[test]
    fn spectral_norm_of_scaled_identity() {
        let w = Array2::from_diag(&Array1::from_elem(5, 2.0));
        assert!((spectral_norm(&w, 100) - 2.0).abs() < 1e-12);
        let zero: Array2<f64> = Array2::zeros((4, 7));
        assert_eq!(spectral_norm(&zero, 50), 0.0);
    }

    #[test]
    fn lipschitz_bound_zero_for_zero_weights() {
        let enc = MlpEncoder::zeros(16, 12, 1, &[8], toy_box()).unwrap();
        assert_eq!(encoder_lipschitz_bound(&enc, &PoseWeights::default()), 0.0);
    }

    #[test]
    fn grid_counts() {
        // One free dimension of width 1 at eta = 0.25: five poses.
        let bx = PoseBox::new(
            Pose::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            Pose::new(1.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        )
        .unwrap();
        assert_eq!(grid_point_count(&bx, 0.25), 5);
        // Step larger than the box leaves the lower corner only.
        assert_eq!(grid_point_count(&bx, 2.0), 1);
    }

    #[test]
    fn paper_scale_grid_count_is_not_materialized() {
        // The uncluttered-experiment box at eta = 0.01 in every dimension.
        // Counted lazily; the oracle walks lo + k*eta <= hi per dimension.
        let bx = PoseBox::new(
            Pose::new(-0.2, 0.33, 1.0, 0.01, 0.01, 0.01),
            Pose::new(0.2, 0.6, 3.5, 0.1, 0.1, 0.1),
        )
        .unwrap();
        let lo = bx.lower.to_array();
        let hi = bx.upper.to_array();
        let mut expected: u128 = 1;
        for d in 0..6 {
            let mut k = 0u64;
            while lo[d] + (k + 1) as f64 * 0.01 <= hi[d] + 0.01 * 1e-9 {
                k += 1;
            }
            expected *= (k + 1) as u128;
        }
        let n = grid_point_count(&bx, 0.01);
        assert_eq!(n, expected);
        // Far beyond anything one would materialize.
        assert!(n > 100_000_000);
    }

    #[test]
    fn test_grid_respects_visibility_and_step() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let bx = PoseBox::new(
            Pose::new(0.0, 0.0, 1.2, 0.0, 0.0, 0.0),
            Pose::new(0.0, 0.0, 1.7, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let ds = build_test_grid(&t, &bx, 0.1, &k).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.provenance, Provenance::Grid);
        for (q, img) in &ds.pairs {
            assert_eq!(img, &decode(&t, q, &k).unwrap());
        }
    }

    #[test]
    fn max_error_of_midpoint_encoder_is_half_diameter() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let bx = PoseBox::new(
            Pose::new(0.0, 0.0, 1.2, 0.0, 0.0, 0.0),
            Pose::new(0.0, 0.0, 1.8, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let ds = build_test_grid(&t, &bx, 0.3, &k).unwrap();
        let enc = MlpEncoder::zeros(64, 48, 1, &[4], bx).unwrap();
        let w = PoseWeights::default();
        let err = empirical_max_error(&enc, &ds, &w).unwrap();
        // Grid poses reach both box ends; midpoint is off by half width.
        assert!((err - 0.3).abs() < 1e-12, "err {err}");
    }

    #[test]
    fn perfect_encoder_single_pose_zero_error() {
        let t = targets::slow_vehicle_sign();
        let k = CameraIntrinsics::new(53.0, 64, 48).unwrap();
        let q = Pose::new(0.0, 0.0, 1.5, 0.0, 0.0, 0.0);
        let degenerate = PoseBox::new(q, q).unwrap();
        let ds = PoseImageDataset {
            pairs: vec![(q, decode(&t, &q, &k).unwrap())],
            provenance: Provenance::Random,
        };
        let enc = MlpEncoder::zeros(64, 48, 1, &[4], degenerate).unwrap();
        assert_eq!(empirical_max_error(&enc, &ds, &PoseWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let bx = toy_box();
        let mut enc = MlpEncoder::zeros(16, 12, 2, &[5, 4], bx).unwrap();
        let flat: Vec<f64> = (0..enc.params_flat().len())
            .map(|i| (i as f64 * 0.017).sin() * 0.05)
            .collect();
        enc.set_params_flat(&flat);
        let mut buf = Vec::new();
        enc.save(&mut buf).unwrap();
        let back = MlpEncoder::load(&buf[..]).unwrap();
        assert_eq!(enc.params_flat(), back.params_flat());
        assert_eq!(back.pool(), 2);
        assert_eq!(back.layer_dims(), enc.layer_dims());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let enc = MlpEncoder::zeros(16, 12, 1, &[4], toy_box()).unwrap();
        let img = BitImage::zeros(8, 8);
        assert!(matches!(enc.forward(&img), Err(Error::EncoderInput { .. })));
    }
}

//! Experiment engine: scenario configs, machine-readable run reports, and
//! the three experiment pipelines (generator correctness, certification,
//! cluttered detection). The command-line harness is a thin wrapper over
//! these.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::camera::{CameraIntrinsics, Pose, PoseBox};
use crate::certify::{
    certified_bound, delta_audit, estimate_decoder_lipschitz, noisy_bound, scenario_hash,
    CertificateBundle, DecoderLipschitzConfig, NormDeclaration,
};
use crate::detect::{
    build_partition_artifacts, cluttered_detect, validate_partition, Detector, Partition,
    SelectionCriteria,
};
use crate::encoder::{
    build_test_grid, empirical_max_error, encoder_lipschitz_bound, train_encoder, MlpEncoder,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::image::BitImage;
use crate::layers::{eval_layers, expand_layers};
use crate::norm::PoseWeights;
use crate::oracle::oracle_decode;
use crate::raster::{decode, decode_with_policy, DecodePolicy};
use crate::reach::{PoseGrid, ReachOptions};
use crate::scene::{gen_clutter_constrained, gen_noise, ClutterSpec};
use crate::target::{load_target, targets, TargetModel};

/// Where a scenario's target comes from: `builtin:<name>` or a spec path.
pub fn resolve_target(reference: &str) -> Result<TargetModel> {
    if let Some(name) = reference.strip_prefix("builtin:") {
        return targets::by_name(name)
            .ok_or_else(|| Error::Config(format!("unknown builtin target `{name}`")));
    }
    let text = std::fs::read_to_string(reference)
        .map_err(|e| Error::Config(format!("cannot read target spec `{reference}`: {e}")))?;
    Ok(load_target(&text)?.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub counts: [u32; 6],
    pub fill: f64,
}

/// One experiment scenario. Serialized form is the CLI's JSON config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub target: String,
    pub camera: CameraIntrinsics,
    pub bounds_lower: [f64; 6],
    pub bounds_upper: [f64; 6],
    /// Test-grid step for certification.
    pub eta: f64,
    /// Reach/detection grid step.
    pub step: [f64; 6],
    pub tau: f64,
    pub noise_budget: f64,
    pub pose_weights: [f64; 6],
    pub train: TrainConfig,
    pub lipschitz: DecoderLipschitzConfig,
    pub audit_step: f64,
    pub partition: Option<PartitionSpec>,
    pub clutter: Option<ClutterSpec>,
    /// Random unseen poses for bound validation.
    pub random_test_poses: usize,
    /// Noise budgets swept by the noisy validation.
    pub noise_sweep: Vec<f64>,
    pub noise_trials: usize,
    /// Frames per class for the cluttered experiment.
    pub frames: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn bounds(&self) -> Result<PoseBox> {
        PoseBox::new(
            Pose::from_array(self.bounds_lower),
            Pose::from_array(self.bounds_upper),
        )
    }

    pub fn weights(&self) -> PoseWeights {
        PoseWeights(self.pose_weights)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.tau < 0.0 || self.noise_budget < 0.0 {
            return Err(Error::Config("tau and noise budget must be nonnegative".into()));
        }
        if !(self.audit_step > 0.0) {
            return Err(Error::Config("audit step must be positive".into()));
        }
        if !self.target.starts_with("builtin:") && !Path::new(&self.target).exists() {
            return Err(Error::Config(format!("target spec `{}` does not exist", self.target)));
        }
        self.bounds()?;
        Ok(())
    }

    /// The desk certification scenario as a config.
    pub fn desk_certify() -> Self {
        let sc = crate::presets::desk_certify();
        Self {
            target: "builtin:slow-vehicle-sign".into(),
            camera: sc.intrinsics,
            bounds_lower: sc.bounds.lower.to_array(),
            bounds_upper: sc.bounds.upper.to_array(),
            eta: sc.eta,
            step: [0.0; 6],
            tau: 0.0,
            noise_budget: 0.0,
            pose_weights: sc.weights.0,
            train: sc.train,
            lipschitz: sc.lipschitz,
            audit_step: sc.audit_step,
            partition: None,
            clutter: None,
            random_test_poses: 100_000,
            noise_sweep: vec![1.0, 2.0, 3.0],
            noise_trials: 10_000,
            frames: 0,
            seed: 7,
        }
    }

    /// The desk cluttered scenario as a config.
    pub fn desk_cluttered() -> Self {
        let sc = crate::presets::desk_cluttered();
        Self {
            target: "builtin:slow-vehicle-sign".into(),
            camera: sc.intrinsics,
            bounds_lower: sc.parent.lower.to_array(),
            bounds_upper: sc.parent.upper.to_array(),
            eta: sc.audit_step,
            step: sc.step,
            tau: 0.0,
            noise_budget: sc.noise_budget,
            pose_weights: sc.weights.0,
            train: sc.train,
            lipschitz: DecoderLipschitzConfig {
                neighbor_step: 0.03,
                ..Default::default()
            },
            audit_step: sc.audit_step,
            partition: Some(PartitionSpec {
                counts: sc.cell_counts,
                fill: sc.fill,
            }),
            clutter: Some(sc.clutter),
            random_test_poses: 20_000,
            noise_sweep: vec![],
            noise_trials: 0,
            frames: 500,
            seed: 17,
        }
    }
}

/// Machine-readable experiment outcome. `violations == 0` is the pass
/// condition; the embedded config and seeds reproduce the numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub scenario_hash: String,
    pub config: ScenarioConfig,
    pub certificate: Option<CertificateBundle>,
    pub metrics: serde_json::Value,
    pub violations: u64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, out_dir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(name);
        std::fs::write(&path, self.to_json()?)?;
        Ok(path)
    }
}

fn sample_pose(bounds: &PoseBox, rng: &mut impl Rng) -> Pose {
    let lo = bounds.lower.to_array();
    let hi = bounds.upper.to_array();
    Pose::from_array(std::array::from_fn(|i| {
        if hi[i] > lo[i] {
            rng.gen_range(lo[i]..=hi[i])
        } else {
            lo[i]
        }
    }))
}

/// Generator-correctness experiment: the rasterizer against the exact
/// oracle and the layer network against the rasterizer, at the three
/// reference resolutions.
pub fn run_experiment_ggm(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let t = resolve_target(&cfg.target)?;
    let bounds = cfg.bounds()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut resolution_metrics = Vec::new();
    let mut mismatches = 0u64;

    for (w, h, cases) in [(640u32, 480u32, 3usize), (120, 100, 12), (60, 30, 40)] {
        let k = CameraIntrinsics::new(cfg.camera.f * w as f64 / cfg.camera.width as f64, w, h)?;
        let net = expand_layers(&t, &k);
        let mut poses = Vec::new();
        while poses.len() < cases {
            let q = sample_pose(&bounds, &mut rng);
            if crate::camera::visibility_check(&t, &q, &k) {
                poses.push(q);
            }
        }
        let t0 = Instant::now();
        let results: Vec<(usize, usize, usize)> = poses
            .par_iter()
            .map(|q| {
                let fast = decode(&t, q, &k).expect("visible");
                let exact = oracle_decode(&t, q, &k).expect("visible");
                let layered = eval_layers(&net, q).expect("visible");
                (
                    fast.hamming(&exact).expect("dims"),
                    fast.hamming(&layered).expect("dims"),
                    fast.count_ones(),
                )
            })
            .collect();
        let oracle_mismatch: usize = results.iter().map(|r| r.0).sum();
        let layer_mismatch: usize = results.iter().map(|r| r.1).sum();
        let pixels: usize = results.iter().map(|r| r.2).sum();
        mismatches += (oracle_mismatch + layer_mismatch) as u64;
        let dt = t0.elapsed().as_secs_f64();
        resolution_metrics.push(json!({
            "width": w,
            "height": h,
            "cases": cases,
            "oracle_mismatched_pixels": oracle_mismatch,
            "layer_mismatched_pixels": layer_mismatch,
            "mean_set_pixels": pixels as f64 / cases as f64,
            "decodes_per_second": cases as f64 * 3.0 / dt,
        }));
    }

    let metrics = json!({
        "target": { "polygons": t.polygon_count(), "vertices": t.vertex_count() },
        "resolutions": resolution_metrics,
    });
    Ok(RunReport {
        experiment: "ggm".into(),
        scenario_hash: scenario_hash(&t, &cfg.camera, &bounds, &[cfg.seed]),
        config: cfg.clone(),
        certificate: None,
        metrics,
        violations: mismatches,
    })
}

/// Certification experiment: train, measure, certify, and validate the
/// bound on the exhaustive grid, random unseen poses, and noisy images.
/// Writes an error histogram CSV when `out_dir` is given.
pub fn run_experiment_certify(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let t = resolve_target(&cfg.target)?;
    let bounds = cfg.bounds()?;
    let k = cfg.camera;
    let weights = cfg.weights();

    let t0 = Instant::now();
    let (encoder, train_report) = train_encoder(&t, &bounds, &k, &cfg.train)?;
    let train_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let ds = build_test_grid(&t, &bounds, cfg.eta, &k)?;
    let epsilon = empirical_max_error(&encoder, &ds, &weights)?;
    let grid_secs = t0.elapsed().as_secs_f64();

    let l_encoder = encoder_lipschitz_bound(&encoder, &weights);
    let ld = estimate_decoder_lipschitz(&t, &bounds, &k, &cfg.lipschitz, &weights)?;
    let audit = delta_audit(&t, &bounds, &k, cfg.audit_step, &weights)?;

    let cert = CertificateBundle::build(
        cfg.eta,
        audit.delta_hat,
        ld.l_decoder,
        ld.provenance.clone(),
        l_encoder,
        epsilon,
        cfg.noise_budget,
        NormDeclaration {
            pose_weights: weights,
            ..Default::default()
        },
    )
    .with_scenario_hash(scenario_hash(&t, &k, &bounds, &[cfg.seed, cfg.train.seed]));

    // Per-dimension table: componentwise empirical maxima and bounds.
    let mut per_dim_eps = [0.0f64; 6];
    for (pose, img) in &ds.pairs {
        let est = encoder.forward(img)?;
        let pa = pose.to_array();
        let ea = est.to_array();
        for i in 0..6 {
            per_dim_eps[i] = per_dim_eps[i].max(weights.0[i] * (pa[i] - ea[i]).abs());
        }
    }
    let dims = ["x", "y", "z", "roll", "pitch", "yaw"];
    let per_dim_table: Vec<serde_json::Value> = (0..6)
        .map(|i| {
            json!({
                "dimension": dims[i],
                "eta": cfg.eta,
                "ld_le": ld.l_decoder * l_encoder,
                "epsilon": per_dim_eps[i],
                "bound": certified_bound(cfg.eta, audit.delta_hat, ld.l_decoder, l_encoder, per_dim_eps[i]),
            })
        })
        .collect();

    // Random unseen poses: max error must stay within the certificate.
    let t0 = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x517e);
    let mut random_poses = Vec::with_capacity(cfg.random_test_poses);
    while random_poses.len() < cfg.random_test_poses {
        let q = sample_pose(&bounds, &mut rng);
        if crate::camera::visibility_check(&t, &q, &k) {
            random_poses.push(q);
        }
    }
    let errors: Vec<f64> = random_poses
        .par_iter()
        .map(|q| {
            let img = decode(&t, q, &k).expect("visible");
            let est = encoder.forward(&img).expect("dims");
            weights.distance(q, &est)
        })
        .collect();
    let random_secs = t0.elapsed().as_secs_f64();
    let grid_part_max = epsilon;
    let random_max = errors.iter().copied().fold(0.0, f64::max);
    let observed_max = grid_part_max.max(random_max);
    let mean_err = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    let mut violations = 0u64;
    if observed_max > cert.epsilon_bar {
        violations += 1;
    }

    // Histogram (CSV) plus JSON summary.
    let bins = 50usize;
    let hist_max = cert.epsilon_bar.max(observed_max);
    let mut counts = vec![0u64; bins];
    for &e in &errors {
        let b = ((e / hist_max) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in counts.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{}\n",
                i as f64 / bins as f64 * hist_max,
                (i + 1) as f64 / bins as f64 * hist_max,
                c
            ));
        }
        std::fs::write(dir.join("error_histogram.csv"), csv)?;
    }

    // Noisy sweep: Corollary-style bounds under bounded pixel noise.
    let mut noise_results = Vec::new();
    for &nbar in &cfg.noise_sweep {
        let bound = noisy_bound(
            cfg.eta,
            audit.delta_hat,
            ld.l_decoder,
            l_encoder,
            epsilon,
            nbar,
        );
        let trials = cfg.noise_trials;
        let seeds: Vec<u64> = (0..trials as u64).collect();
        let max_noisy = seeds
            .par_iter()
            .map(|&i| {
                let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (0xbeef + i));
                let q = loop {
                    let q = sample_pose(&bounds, &mut rng);
                    if crate::camera::visibility_check(&t, &q, &k) {
                        break q;
                    }
                };
                let img = decode(&t, &q, &k).expect("visible");
                let noisy = gen_noise(&img, nbar, &mut rng);
                let est = encoder.forward(&noisy).expect("dims");
                weights.distance(&q, &est)
            })
            .reduce(|| 0.0, f64::max);
        if max_noisy > bound {
            violations += 1;
        }
        noise_results.push(json!({
            "noise_budget": nbar,
            "trials": trials,
            "max_error": max_noisy,
            "bound": bound,
        }));
    }

    let metrics = json!({
        "train": {
            "seconds": train_secs,
            "first_loss": train_report.epoch_losses.first(),
            "final_loss": train_report.epoch_losses.last(),
            "spectral_norms": train_report.spectral_norms,
        },
        "test_grid": { "poses": ds.len(), "epsilon": epsilon, "seconds": grid_secs },
        "l_encoder": l_encoder,
        "l_decoder": { "value": ld.l_decoder, "raw": ld.raw_max, "scale": ld.scale, "pairs": ld.pairs },
        "delta_audit": { "delta_hat": audit.delta_hat, "groups": audit.groups, "poses": audit.poses },
        "per_dimension": per_dim_table,
        "random_validation": {
            "poses": cfg.random_test_poses,
            "max_error": random_max,
            "mean_error": mean_err,
            "observed_max": observed_max,
            "epsilon_bar": cert.epsilon_bar,
            "seconds": random_secs,
        },
        "noisy_validation": noise_results,
    });

    Ok(RunReport {
        experiment: "certify".into(),
        scenario_hash: cert.scenario_hash.clone().unwrap_or_default(),
        config: cfg.clone(),
        certificate: Some(cert),
        metrics,
        violations,
    })
}

/// Cluttered-environment experiment: validated partition, per-cell masks
/// and detectors, target+clutter frames, clutter-only frames.
pub fn run_experiment_cluttered(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let t = resolve_target(&cfg.target)?;
    let parent = cfg.bounds()?;
    let k = cfg.camera;
    let weights = cfg.weights();
    let spec = cfg
        .partition
        .as_ref()
        .ok_or_else(|| Error::Config("cluttered experiment needs a partition spec".into()))?;
    let clutter_spec = cfg.clutter.clone().unwrap_or_default();

    let partition = Partition::gapped_uniform(parent, spec.counts, spec.fill)?;
    let t0 = Instant::now();
    let artifacts = build_partition_artifacts(&partition, &t, &k, cfg.step, &ReachOptions::default())?;
    let report = validate_partition(&artifacts)?;
    let partition_secs = t0.elapsed().as_secs_f64();
    if !report.all_valid() {
        return Err(Error::Config(format!(
            "partition failed exclusion validation with {} violations (first: filter cell {} vs source cell {})",
            report.violations.len(),
            report.violations[0].filter_cell,
            report.violations[0].source_cell,
        )));
    }

    let (encoder, _) = train_encoder(&t, &parent, &k, &cfg.train)?;
    let l_encoder = encoder_lipschitz_bound(&encoder, &weights);
    let ld = estimate_decoder_lipschitz(&t, &parent, &k, &cfg.lipschitz, &weights)?;
    let audit = delta_audit(&t, &parent, &k, cfg.audit_step, &weights)?;
    let ds = build_test_grid(&t, &parent, cfg.audit_step, &k)?;
    let epsilon = empirical_max_error(&encoder, &ds, &weights)?;
    let cert = CertificateBundle::build(
        cfg.audit_step,
        audit.delta_hat,
        ld.l_decoder,
        ld.provenance.clone(),
        l_encoder,
        epsilon,
        cfg.noise_budget,
        NormDeclaration {
            pose_weights: weights,
            ..Default::default()
        },
    )
    .with_scenario_hash(scenario_hash(&t, &k, &parent, &[cfg.seed, cfg.train.seed]));

    let detectors: Vec<Detector<'_>> = partition
        .cells
        .iter()
        .map(|cell| Detector {
            target: &t,
            intrinsics: &k,
            encoder: &encoder,
            certificate: &cert,
            search: *cell,
            step: cfg.step,
            tau: cfg.tau,
            policy: DecodePolicy::Strict,
        })
        .collect();

    let masks: Vec<&BitImage> = artifacts.masks.iter().map(|m| &m.image).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xc1a7);
    let mut detected = 0usize;
    let mut correct_cell = 0usize;
    let mut unique = 0usize;
    let mut max_pose_err = 0.0f64;
    let mut latencies = Vec::with_capacity(cfg.frames);
    let mut violations = 0u64;

    for _ in 0..cfg.frames {
        // Ground truth: a grid pose of a random cell.
        let cell = rng.gen_range(0..partition.cell_count());
        let grid = &artifacts.reach[cell].grid;
        let q = grid.pose_at(rng.gen_range(0..grid.len()));
        let target_img = decode(&t, &q, &k)?;
        let clutter = gen_clutter_constrained(
            &clutter_spec,
            &k,
            &mut rng,
            &masks,
            cfg.noise_budget,
            200_000,
        )?;
        let frame = target_img.or(&clutter)?;
        let t0 = Instant::now();
        let dets = cluttered_detect(&frame, &artifacts, &detectors, &SelectionCriteria::All, &weights)?;
        latencies.push(t0.elapsed().as_secs_f64());
        if dets.is_empty() {
            violations += 1;
            continue;
        }
        detected += 1;
        if dets.len() == 1 {
            unique += 1;
        }
        let hit = dets.iter().any(|d| d.cell == Some(cell));
        if hit {
            correct_cell += 1;
        } else {
            violations += 1;
        }
        for d in &dets {
            let err = weights.distance(&d.pose.expect("positive detection"), &q);
            max_pose_err = max_pose_err.max(err);
            if err > cert.radius {
                violations += 1;
            }
        }
    }

    // Clutter-only frames must never trigger a detection.
    let mut false_positives = 0usize;
    for _ in 0..cfg.frames {
        let clutter = gen_clutter_constrained(
            &clutter_spec,
            &k,
            &mut rng,
            &masks,
            cfg.noise_budget,
            200_000,
        )?;
        let dets = cluttered_detect(&clutter, &artifacts, &detectors, &SelectionCriteria::All, &weights)?;
        if !dets.is_empty() {
            false_positives += 1;
            violations += 1;
        }
    }

    let mean_latency = latencies.iter().sum::<f64>() / latencies.len().max(1) as f64;
    let metrics = json!({
        "partition": {
            "cells": partition.cell_count(),
            "all_valid": report.all_valid(),
            "unique_images": artifacts.reach.iter().map(|r| r.unique_count()).sum::<usize>(),
            "seconds": partition_secs,
        },
        "frames": cfg.frames,
        "detection_rate": detected as f64 / cfg.frames.max(1) as f64,
        "correct_cell_rate": correct_cell as f64 / cfg.frames.max(1) as f64,
        "unique_detection_rate": unique as f64 / cfg.frames.max(1) as f64,
        "max_pose_error": max_pose_err,
        "radius": cert.radius,
        "false_positives": false_positives,
        "clutter_only_frames": cfg.frames,
        "mean_frame_seconds": mean_latency,
    });

    Ok(RunReport {
        experiment: "cluttered".into(),
        scenario_hash: cert.scenario_hash.clone().unwrap_or_default(),
        config: cfg.clone(),
        certificate: Some(cert),
        metrics,
        violations,
    })
}

/// Trains and certifies, returning the artifacts for further use.
pub fn certify_pipeline(
    cfg: &ScenarioConfig,
) -> Result<(MlpEncoder, CertificateBundle)> {
    cfg.validate()?;
    let t = resolve_target(&cfg.target)?;
    let bounds = cfg.bounds()?;
    let k = cfg.camera;
    let weights = cfg.weights();
    let (encoder, _) = train_encoder(&t, &bounds, &k, &cfg.train)?;
    let ds = build_test_grid(&t, &bounds, cfg.eta, &k)?;
    let epsilon = empirical_max_error(&encoder, &ds, &weights)?;
    let l_encoder = encoder_lipschitz_bound(&encoder, &weights);
    let ld = estimate_decoder_lipschitz(&t, &bounds, &k, &cfg.lipschitz, &weights)?;
    let audit = delta_audit(&t, &bounds, &k, cfg.audit_step, &weights)?;
    let cert = CertificateBundle::build(
        cfg.eta,
        audit.delta_hat,
        ld.l_decoder,
        ld.provenance.clone(),
        l_encoder,
        epsilon,
        cfg.noise_budget,
        NormDeclaration {
            pose_weights: weights,
            ..Default::default()
        },
    )
    .with_scenario_hash(scenario_hash(&t, &k, &bounds, &[cfg.seed, cfg.train.seed]));
    Ok((encoder, cert))
}

/// Renders one frame: decode, optional noise, optional clutter.
pub fn render_frame(
    t: &TargetModel,
    q: &Pose,
    k: &CameraIntrinsics,
    policy: DecodePolicy,
    noise_budget: f64,
    clutter: Option<&ClutterSpec>,
    seed: u64,
) -> Result<BitImage> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut img = decode_with_policy(t, q, k, policy)?;
    if let Some(spec) = clutter {
        let c = crate::scene::gen_clutter(spec, k, &mut rng);
        img = img.or(&c)?;
    }
    if noise_budget > 0.0 {
        img = gen_noise(&img, noise_budget, &mut rng);
    }
    Ok(img)
}

/// Convenience: a pose grid for a config's box and step.
pub fn config_grid(cfg: &ScenarioConfig) -> Result<PoseGrid> {
    PoseGrid::from_box(&cfg.bounds()?, cfg.step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_missing_target() {
        let mut cfg = ScenarioConfig::desk_certify();
        cfg.target = "/nonexistent/target.xml".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.target = "builtin:slow-vehicle-sign".into();
        assert!(cfg.validate().is_ok());
        cfg.eta = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn builtin_targets_resolve() {
        assert!(resolve_target("builtin:stop-sign").is_ok());
        assert!(resolve_target("builtin:nope").is_err());
    }

    #[test]
    fn ggm_experiment_small_run_has_zero_mismatches() {
        let mut cfg = ScenarioConfig::desk_certify();
        cfg.seed = 3;
        // Shrink for test speed: the report structure and the equivalence
        // property are what matter here.
        let report = run_experiment_ggm(&cfg).unwrap();
        assert_eq!(report.violations, 0);
        assert_eq!(report.experiment, "ggm");
        let res = report.metrics["resolutions"].as_array().unwrap();
        assert_eq!(res.len(), 3);
    }
}

//! Command-line harness: target validation, rendering, training,
//! certification, reachability, masks, detection, the cluttered pipeline,
//! and the three experiments.
//!
//! Exit codes: 0 all assertions passed, 2 bound/correctness violation,
//! 3 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ggm_core::bench::{
    certify_pipeline, config_grid, render_frame, resolve_target, run_experiment_certify,
    run_experiment_cluttered, run_experiment_ggm, RunReport, ScenarioConfig,
};
use ggm_core::camera::Pose;
use ggm_core::certify::CertificateBundle;
use ggm_core::detect::{
    build_mask, build_partition_artifacts, cluttered_detect, validate_partition, Detector,
    Partition, SelectionCriteria,
};
use ggm_core::encoder::{encoder_lipschitz_bound, train_encoder, MlpEncoder};
use ggm_core::error::Error;
use ggm_core::image::BitImage;
use ggm_core::raster::DecodePolicy;
use ggm_core::reach::{forward_reach, write_archive, PoseGrid, ReachOptions};
use ggm_core::target::{load_target, serialize_target, validate_target};

#[derive(Parser)]
#[command(name = "ggm", about = "Geometric generative models for certified pose estimation")]
struct Cli {
    /// Scenario config (JSON). Defaults to the built-in desk scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "ggm-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a target spec; print the report.
    ValidateTarget {
        /// Spec path or builtin:<name>.
        target: String,
        /// Re-emit the canonical serialized form.
        #[arg(long)]
        canonical: bool,
    },
    /// Decode one pose to a PBM image.
    Render {
        #[arg(long)]
        target: Option<String>,
        /// Pose as six comma-separated values: x,y,z,roll,pitch,yaw.
        #[arg(long)]
        pose: String,
        /// Clip off-image geometry instead of requiring full visibility.
        #[arg(long)]
        clip: bool,
        /// Noise budget applied to the rendered frame.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Add clutter from the scenario's clutter spec.
        #[arg(long)]
        clutter: bool,
    },
    /// Train an encoder; write the checkpoint and its JSON sidecar.
    Train,
    /// Train and certify; write certificate.json.
    Certify,
    /// Forward reachability over the config box; write the archive.
    Reach {
        /// Override the box lower corner (six comma-separated values).
        #[arg(long)]
        lower: Option<String>,
        /// Override the box upper corner.
        #[arg(long)]
        upper: Option<String>,
        /// Override the grid step.
        #[arg(long)]
        step: Option<String>,
    },
    /// Build the spatial-filter mask of one partition cell.
    Mask {
        #[arg(long)]
        cell: usize,
    },
    /// Run the certified detector on one image.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        certificate: PathBuf,
    },
    /// Run the cluttered pipeline over a directory of frames.
    Pipeline {
        /// Directory of .pbm frames (processed in name order).
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Selection strategy: all, nearest-to-prior, max-match-quality.
        #[arg(long, default_value = "all")]
        selection: String,
        /// Prior pose for nearest-to-prior.
        #[arg(long)]
        prior: Option<String>,
    },
    /// Reproduce an experiment and write its report.
    Experiment {
        #[arg(value_enum)]
        which: ExperimentKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Ggm,
    Certify,
    Cluttered,
}

fn parse_pose(text: &str) -> Result<Pose, Error> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad pose `{text}`: {e}")))?;
    if vals.len() != 6 {
        return Err(Error::Config(format!("pose needs 6 values, got {}", vals.len())));
    }
    Ok(Pose::from_array(vals.try_into().unwrap()))
}

fn parse_six(text: &str) -> Result<[f64; 6], Error> {
    Ok(parse_pose(text)?.to_array())
}

fn load_config(cli: &Cli, default: ScenarioConfig) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {path:?}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config {path:?}: {e}")))?
        }
        None => default,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::SpecSyntax { .. }
        | Error::DanglingReference { .. }
        | Error::EmptyTarget
        | Error::InvalidPolygon { .. }
        | Error::Composition(_)
        | Error::UnknownStrategy(_)
        | Error::Config(_)
        | Error::Checkpoint(_)
        | Error::ImageFormat(_)
        | Error::Io(_)
        | Error::Json(_) => 3,
        _ => 2,
    }
}

fn finish_report(report: &RunReport, out: &Path, name: &str) -> Result<u8, Error> {
    let path = report.write(out, name)?;
    println!("report: {}", path.display());
    println!("violations: {}", report.violations);
    Ok(if report.violations == 0 { 0 } else { 2 })
}

fn write_sidecar(enc: &MlpEncoder, cfg: &ScenarioConfig, path: &Path) -> Result<(), Error> {
    let weights = cfg.weights();
    let sidecar = serde_json::json!({
        "train": cfg.train,
        "seed": cfg.seed,
        "pose_weights": weights.0,
        "image_norm": "sqrt-differing-pixels",
        "l_encoder": encoder_lipschitz_bound(enc, &weights),
        "layer_dims": enc.layer_dims(),
        "pool": enc.pool(),
    });
    std::fs::write(path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Certificate for an already-trained encoder.
fn certify_from(cfg: &ScenarioConfig, enc: &MlpEncoder) -> Result<CertificateBundle, Error> {
    use ggm_core::certify::{delta_audit, estimate_decoder_lipschitz, NormDeclaration};
    use ggm_core::encoder::{build_test_grid, empirical_max_error};
    let t = resolve_target(&cfg.target)?;
    let bounds = cfg.bounds()?;
    let weights = cfg.weights();
    let ds = build_test_grid(&t, &bounds, cfg.audit_step, &cfg.camera)?;
    let epsilon = empirical_max_error(enc, &ds, &weights)?;
    let l_encoder = encoder_lipschitz_bound(enc, &weights);
    let ld = estimate_decoder_lipschitz(&t, &bounds, &cfg.camera, &cfg.lipschitz, &weights)?;
    let audit = delta_audit(&t, &bounds, &cfg.camera, cfg.audit_step, &weights)?;
    Ok(CertificateBundle::build(
        cfg.audit_step,
        audit.delta_hat,
        ld.l_decoder,
        ld.provenance.clone(),
        l_encoder,
        epsilon,
        cfg.noise_budget,
        NormDeclaration { pose_weights: weights, ..Default::default() },
    ))
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::ValidateTarget { target, canonical } => {
            let text = if let Some(name) = target.strip_prefix("builtin:") {
                ggm_core::target::targets::xml_by_name(name)
                    .ok_or_else(|| Error::Config(format!("unknown builtin target `{name}`")))?
                    .to_string()
            } else {
                std::fs::read_to_string(target)?
            };
            let (model, report) = load_target(&text)?;
            println!(
                "{}: {} polygons, {} vertices",
                model.name,
                model.polygon_count(),
                model.vertex_count()
            );
            for w in report.warnings() {
                println!("warning (P{:?}): {}", w.polygon.map(|p| p + 1), w.message);
            }
            let fresh = validate_target(&model);
            for f in fresh.failures() {
                println!("failure (P{:?}): {}", f.polygon.map(|p| p + 1), f.message);
            }
            if *canonical {
                print!("{}", serialize_target(&model));
            }
            Ok(if fresh.is_valid() { 0 } else { 2 })
        }
        Command::Render { target, pose, clip, noise, clutter } => {
            let cfg = load_config(cli, ScenarioConfig::desk_certify())?;
            let t = match target {
                Some(name) => resolve_target(name)?,
                None => resolve_target(&cfg.target)?,
            };
            let q = parse_pose(pose)?;
            let policy = if *clip { DecodePolicy::Clip } else { DecodePolicy::Strict };
            let img = render_frame(
                &t,
                &q,
                &cfg.camera,
                policy,
                *noise,
                clutter.then(|| cfg.clutter.clone().unwrap_or_default()).as_ref(),
                cfg.seed,
            )?;
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("render.pbm");
            let f = std::fs::File::create(&path)?;
            img.write_pbm(f)?;
            println!("{} ({} pixels set)", path.display(), img.count_ones());
            Ok(0)
        }
        Command::Train => {
            let cfg = load_config(cli, ScenarioConfig::desk_certify())?;
            let t = resolve_target(&cfg.target)?;
            let (enc, report) = train_encoder(&t, &cfg.bounds()?, &cfg.camera, &cfg.train)?;
            std::fs::create_dir_all(&cli.out)?;
            let ckpt = cli.out.join("encoder.bin");
            enc.save(std::fs::File::create(&ckpt)?)?;
            write_sidecar(&enc, &cfg, &cli.out.join("encoder.json"))?;
            println!(
                "trained: loss {:.5} -> {:.5}; checkpoint {}",
                report.epoch_losses.first().unwrap_or(&f64::NAN),
                report.epoch_losses.last().unwrap_or(&f64::NAN),
                ckpt.display()
            );
            Ok(0)
        }
        Command::Certify => {
            let cfg = load_config(cli, ScenarioConfig::desk_certify())?;
            let (enc, cert) = certify_pipeline(&cfg)?;
            std::fs::create_dir_all(&cli.out)?;
            enc.save(std::fs::File::create(cli.out.join("encoder.bin"))?)?;
            write_sidecar(&enc, &cfg, &cli.out.join("encoder.json"))?;
            std::fs::write(cli.out.join("certificate.json"), cert.to_json()?)?;
            println!(
                "epsilon_bar = {:.4} (eta {}, delta {:.4}, L_D {:.2}, L_E {:.3e}, eps {:.4})",
                cert.epsilon_bar, cert.eta, cert.delta, cert.l_decoder, cert.l_encoder, cert.epsilon
            );
            Ok(0)
        }
        Command::Reach { lower, upper, step } => {
            let mut cfg = load_config(cli, ScenarioConfig::desk_certify())?;
            if let Some(l) = lower {
                cfg.bounds_lower = parse_six(l)?;
            }
            if let Some(u) = upper {
                cfg.bounds_upper = parse_six(u)?;
            }
            if let Some(s) = step {
                cfg.step = parse_six(s)?;
            }
            let t = resolve_target(&cfg.target)?;
            let grid = config_grid(&cfg)?;
            let set = forward_reach(&t, &grid, &cfg.camera, &ReachOptions::default())?;
            write_archive(&set, &cli.out)?;
            println!(
                "{} grid poses, {} unique images -> {}",
                grid.len(),
                set.unique_count(),
                cli.out.display()
            );
            Ok(0)
        }
        Command::Mask { cell } => {
            let cfg = load_config(cli, ScenarioConfig::desk_cluttered())?;
            let spec = cfg
                .partition
                .as_ref()
                .ok_or_else(|| Error::Config("mask needs a partition spec".into()))?;
            let t = resolve_target(&cfg.target)?;
            let partition = Partition::gapped_uniform(cfg.bounds()?, spec.counts, spec.fill)?;
            let cell_box = *partition
                .cells
                .get(*cell)
                .ok_or_else(|| Error::Config(format!("cell {cell} out of range")))?;
            let grid = PoseGrid::from_box(&cell_box, cfg.step)?;
            let reach = forward_reach(&t, &grid, &cfg.camera, &ReachOptions::default())?;
            let mask = build_mask(&reach, *cell)?;
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join(format!("mask_{cell:03}.pbm"));
            mask.image.write_pbm(std::fs::File::create(&path)?)?;
            println!("{} ({} pixels)", path.display(), mask.image.count_ones());
            Ok(0)
        }
        Command::Detect { image, encoder, certificate } => {
            let cfg = load_config(cli, ScenarioConfig::desk_certify())?;
            let t = resolve_target(&cfg.target)?;
            let img = BitImage::read_pbm(std::fs::File::open(image)?)?;
            let enc = MlpEncoder::load(std::fs::File::open(encoder)?)?;
            let cert = CertificateBundle::from_json(&std::fs::read_to_string(certificate)?)?;
            let det = Detector {
                target: &t,
                intrinsics: &cfg.camera,
                encoder: &enc,
                certificate: &cert,
                search: cfg.bounds()?,
                step: cfg.step,
                tau: cfg.tau,
                policy: DecodePolicy::Strict,
            };
            let result = det.detect(&img)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(if result.detected { 0 } else { 2 })
        }
        Command::Pipeline { frames, encoder, selection, prior } => {
            let cfg = load_config(cli, ScenarioConfig::desk_cluttered())?;
            let spec = cfg
                .partition
                .as_ref()
                .ok_or_else(|| Error::Config("pipeline needs a partition spec".into()))?;
            let t = resolve_target(&cfg.target)?;
            let weights = cfg.weights();
            let prior_pose = prior.as_deref().map(parse_pose).transpose()?;
            let criteria = SelectionCriteria::parse(selection, prior_pose)?;
            let partition = Partition::gapped_uniform(cfg.bounds()?, spec.counts, spec.fill)?;
            let artifacts = build_partition_artifacts(
                &partition,
                &t,
                &cfg.camera,
                cfg.step,
                &ReachOptions::default(),
            )?;
            let report = validate_partition(&artifacts)?;
            if !report.all_valid() {
                return Err(Error::Config(format!(
                    "partition failed exclusion validation ({} violations)",
                    report.violations.len()
                )));
            }
            let enc = match encoder {
                Some(path) => MlpEncoder::load(std::fs::File::open(path)?)?,
                None => train_encoder(&t, &cfg.bounds()?, &cfg.camera, &cfg.train)?.0,
            };
            let cert = certify_from(&cfg, &enc)?;
            let detectors: Vec<Detector<'_>> = partition
                .cells
                .iter()
                .map(|cell| Detector {
                    target: &t,
                    intrinsics: &cfg.camera,
                    encoder: &enc,
                    certificate: &cert,
                    search: *cell,
                    step: cfg.step,
                    tau: cfg.tau,
                    policy: DecodePolicy::Strict,
                })
                .collect();

            let mut entries: Vec<PathBuf> = std::fs::read_dir(frames)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "pbm"))
                .collect();
            entries.sort();
            if entries.is_empty() {
                return Err(Error::Config(format!("no .pbm frames in {frames:?}")));
            }
            std::fs::create_dir_all(&cli.out)?;
            let mut out = std::fs::File::create(cli.out.join("pipeline.jsonl"))?;
            use std::io::Write;
            for path in &entries {
                let frame = BitImage::read_pbm(std::fs::File::open(path)?)?;
                let t0 = std::time::Instant::now();
                let dets = cluttered_detect(&frame, &artifacts, &detectors, &criteria, &weights)?;
                let record = serde_json::json!({
                    "frame": path.file_name().map(|n| n.to_string_lossy().into_owned()),
                    "detections": dets,
                    "seconds": t0.elapsed().as_secs_f64(),
                });
                writeln!(out, "{record}")?;
            }
            println!(
                "{} frames -> {}",
                entries.len(),
                cli.out.join("pipeline.jsonl").display()
            );
            Ok(0)
        }
        Command::Experiment { which } => match which {
            ExperimentKind::Ggm => {
                let cfg = load_config(cli, ScenarioConfig::desk_certify())?;
                let report = run_experiment_ggm(&cfg)?;
                finish_report(&report, &cli.out, "experiment_ggm.json")
            }
            ExperimentKind::Certify => {
                let cfg = load_config(cli, ScenarioConfig::desk_certify())?;
                let report = run_experiment_certify(&cfg, Some(&cli.out))?;
                finish_report(&report, &cli.out, "experiment_certify.json")
            }
            ExperimentKind::Cluttered => {
                let cfg = load_config(cli, ScenarioConfig::desk_cluttered())?;
                let report = run_experiment_cluttered(&cfg)?;
                finish_report(&report, &cli.out, "experiment_cluttered.json")
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    parse_target, EvaluateArgs, HeatmapArgs, ModelArgs, RegisterArgs, SynthArgs,
    TrainDescriptorArgs, TrainDetectorArgs,
};
use crate::augmentation::{build_view_batch, estimate_roi, RoiMask};
use crate::checkpoint::Checkpoint;
use crate::config::{list_images, load_training_images, RunConfig};
use crate::descriptor::{describe, train_descriptor, DESCRIPTOR_CHECKPOINT, DESCRIPTOR_LOG};
use crate::detector::{
    combine_maps, d2_scores, detector_checkpoint_name, make_target, nms_select, predict_heatmap,
    train_detector, Detector, Heatmap, TargetKind, DETECTOR_LOG,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate, keypoint_distance_sweep, make_synthetic_pair, make_synthetic_triplet, metric_bundle,
    plot, MaskSource, PairEvaluation, PairImages, PairMode, SyntheticPair,
};
use crate::geometry::PlanarTransform;
use crate::manifest::{load_control_points, save_control_points, PairManifest, PairRecord};
use crate::nn::DescriptorNet;
use crate::raster::{Image, Mask};
use crate::registration::{register_pair, KeypointSource, RegistrationReport, RegistrationResult};
use crate::synthetic::{generate_fundus, VesselParams};
use crate::training::TrainOutput;

/// Written next to every training run.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::from_toml_with_env("", std::env::vars()),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn prepare_training(
    cfg: &mut RunConfig,
    images: &Option<PathBuf>,
    out: &Option<PathBuf>,
    epochs: Option<usize>,
    for_detector: bool,
) -> Result<()> {
    if let Some(i) = images {
        cfg.data.images = Some(i.clone());
    }
    if let Some(o) = out {
        cfg.output.dir = o.clone();
    }
    if let Some(e) = epochs {
        if for_detector {
            cfg.detector.epochs = e;
        } else {
            cfg.descriptor.epochs = e;
        }
    }
    cfg.validate()?;
    match &cfg.data.images {
        Some(d) if d.is_dir() => Ok(()),
        Some(d) => Err(Error::Config(format!(
            "image directory not found: {}",
            d.display()
        ))),
        None => Err(Error::Config(
            "no training images: set data.images or pass --images".into(),
        )),
    }
}

fn write_resolved(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.output.dir)?;
    let path = cfg.output.dir.join(RESOLVED_CONFIG);
    std::fs::write(&path, cfg.resolved_toml()?).map_err(|e| Error::io(&path, e))
}

pub fn cmd_train_descriptor(a: &TrainDescriptorArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if a.print_config {
        prepare_overrides_only(&mut cfg, &a.images, &a.out, a.epochs, false)?;
        print!("{}", cfg.resolved_toml()?);
        return Ok(());
    }
    prepare_training(&mut cfg, &a.images, &a.out, a.epochs, false)?;
    let data = load_training_images(&cfg.data)?;
    write_resolved(&cfg)?;
    let out = TrainOutput::new(&cfg.output.dir, cfg.output.checkpoint_every);
    let t = train_descriptor(&data, &cfg.descriptor_train_config(), Some(&out))?;
    println!(
        "descriptor: {} images, {} steps, final loss {:.5}",
        data.len(),
        t.steps,
        t.log.last().map_or(f64::NAN, |r| r.loss())
    );
    println!(
        "checkpoint: {}",
        cfg.output.dir.join(DESCRIPTOR_CHECKPOINT).display()
    );
    println!("log: {}", cfg.output.dir.join(DESCRIPTOR_LOG).display());
    Ok(())
}

fn prepare_overrides_only(
    cfg: &mut RunConfig,
    images: &Option<PathBuf>,
    out: &Option<PathBuf>,
    epochs: Option<usize>,
    for_detector: bool,
) -> Result<()> {
    match prepare_training(cfg, images, out, epochs, for_detector) {
        Err(Error::Config(m)) if m.contains("image") => Ok(()),
        other => other,
    }
}

pub fn cmd_train_detector(a: &TrainDetectorArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(t) = &a.target {
        cfg.detector.target = parse_target(t)?;
    }
    if a.print_config {
        prepare_overrides_only(&mut cfg, &a.images, &a.out, a.epochs, true)?;
        print!("{}", cfg.resolved_toml()?);
        return Ok(());
    }
    prepare_training(&mut cfg, &a.images, &a.out, a.epochs, true)?;
    require_file(&a.descriptor, "descriptor checkpoint")?;
    let descriptor = Checkpoint::load(&a.descriptor)?.descriptor_net()?;
    let data = load_training_images(&cfg.data)?;
    write_resolved(&cfg)?;
    let out = TrainOutput::new(&cfg.output.dir, cfg.output.checkpoint_every);
    let t = train_detector(&data, &descriptor, &cfg.detector_train_config(), Some(&out))?;
    println!(
        "detector ({}): {} images, {} steps, final loss {:.5}",
        cfg.detector.target,
        data.len(),
        t.steps,
        t.log.last().map_or(f64::NAN, |r| r.loss())
    );
    println!(
        "checkpoint: {}",
        cfg.output
            .dir
            .join(detector_checkpoint_name(cfg.detector.target))
            .display()
    );
    println!("log: {}", cfg.output.dir.join(DETECTOR_LOG).display());
    Ok(())
}

/// Networks named on the command line.
pub struct Models {
    pub descriptor: DescriptorNet,
    pub detectors: Vec<Detector>,
    pub d2: bool,
}

impl Models {
    pub fn load(args: &ModelArgs) -> Result<Self> {
        require_file(&args.descriptor, "descriptor checkpoint")?;
        for d in &args.detectors {
            require_file(d, "detector checkpoint")?;
        }
        Ok(Self {
            descriptor: Checkpoint::load(&args.descriptor)?.descriptor_net()?,
            detectors: args
                .detectors
                .iter()
                .map(Detector::load)
                .collect::<Result<_>>()?,
            d2: args.d2,
        })
    }

    pub fn source(&self) -> Result<KeypointSource<'_>> {
        if self.d2 {
            return Ok(KeypointSource::D2);
        }
        match self.detectors.as_slice() {
            [d] => Ok(KeypointSource::Heatmap(d)),
            [a, b] => {
                let ap = [a, b].into_iter().find(|d| d.target == TargetKind::Ap);
                let ss = [a, b].into_iter().find(|d| d.target == TargetKind::Ss);
                match (ap, ss) {
                    (Some(ap), Some(ss)) => Ok(KeypointSource::Combined { ap, ss }),
                    _ => Err(Error::Config(
                        "combining detectors needs one AP and one SS checkpoint".into(),
                    )),
                }
            }
            [] => Err(Error::Config(
                "choose a keypoint source: --detector <ckpt> or --d2".into(),
            )),
            _ => Err(Error::Config("at most two --detector checkpoints".into())),
        }
    }
}

fn inference_config(args: &ModelArgs) -> Result<RunConfig> {
    let mut cfg = config_or_default(args.config.as_deref())?;
    if let Some(k) = args.k {
        cfg.inference.keypoints = k;
    }
    if args.m.is_some() {
        cfg.inference.top_matches = args.m;
    }
    if let Some(s) = args.size {
        cfg.inference.inference_size = s;
    }
    if args.ratio.is_some() {
        cfg.inference.ratio = args.ratio;
    }
    if let Some(s) = args.seed {
        cfg.seeds.ransac = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_mask_sized(path: &Path, size: (usize, usize)) -> Result<Mask> {
    Ok(Mask::load_png(path)?.resize(size.0, size.1))
}

pub fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let cfg = inference_config(&a.model)?;
    require_file(&a.fixed, "fixed image")?;
    require_file(&a.moving, "moving image")?;
    for m in [&a.fixed_mask, &a.moving_mask].into_iter().flatten() {
        require_file(m, "mask")?;
    }
    let models = Models::load(&a.model)?;
    let source = models.source()?;
    let fixed = Image::load(&a.fixed)?;
    let moving = Image::load(&a.moving)?;
    let fm = a
        .fixed_mask
        .as_deref()
        .map(|p| load_mask_sized(p, fixed.size()))
        .transpose()?;
    let mm = a
        .moving_mask
        .as_deref()
        .map(|p| load_mask_sized(p, moving.size()))
        .transpose()?;
    let out = register_pair(
        &fixed,
        &moving,
        (fm.as_ref(), mm.as_ref()),
        &models.descriptor,
        source,
        &cfg.inference,
        cfg.seeds.ransac,
    )?;
    let report = RegistrationReport::new(
        a.fixed.display().to_string(),
        a.moving.display().to_string(),
        source.name(),
        &out,
    );
    write_json(&a.out, &report)?;
    match &out.result.homography {
        Some(h) if out.result.success => println!(
            "registered with {} inliers of {} matches; H = [{h}]",
            out.result.inlier_count, out.result.matches_used
        ),
        _ => println!(
            "registration failed: {}",
            out.result.failure.as_deref().unwrap_or("unknown reason")
        ),
    }
    println!("report: {}", a.out.display());
    Ok(())
}

fn roi_at_source(path: Option<&Path>, image: &Image, threshold: f64) -> Result<Mask> {
    match path {
        Some(p) => load_mask_sized(p, image.size()),
        None => Ok(estimate_roi(image, threshold)
            .map(|r| r.mask)
            .unwrap_or_else(|_| Mask::new(image.width(), image.height(), true))),
    }
}

/// Registers and scores one manifest record.
pub fn evaluate_record(
    record: &PairRecord,
    index: usize,
    descriptor: &DescriptorNet,
    source: KeypointSource<'_>,
    cfg: &RunConfig,
) -> Result<PairEvaluation> {
    let fixed = Image::load(&record.fixed)?;
    let moving = Image::load(&record.moving)?;
    let fr = record
        .fixed_roi
        .as_deref()
        .map(|p| load_mask_sized(p, fixed.size()))
        .transpose()?;
    let mr = record
        .moving_roi
        .as_deref()
        .map(|p| load_mask_sized(p, moving.size()))
        .transpose()?;
    let out = register_pair(
        &fixed,
        &moving,
        (fr.as_ref(), mr.as_ref()),
        descriptor,
        source,
        &cfg.inference,
        cfg.seeds.ransac.wrapping_add(index as u64),
    )?;
    let cp = record
        .control_points
        .as_deref()
        .map(load_control_points)
        .transpose()?;
    let vessel = record.fixed_mask.is_some() && record.moving_mask.is_some();
    let mask_source = if vessel {
        MaskSource::Vessel
    } else {
        MaskSource::Roi
    };
    let truth = record.true_transform();
    let keypoint_distance = match truth {
        Some(t) if !out.matches.is_empty() => Some(keypoint_distance_sweep(
            &out.matches,
            &t,
            &cfg.evaluation.sweep,
        )?),
        _ => None,
    };

    let mut metrics = None;
    let mut control_error_px = cp.as_ref().map(|_| f64::INFINITY);
    if let (true, Some(h)) = (out.result.success, out.result.homography) {
        let roi_f = match fr {
            Some(m) => m,
            None => roi_at_source(None, &fixed, cfg.data.roi_threshold)?,
        };
        let roi_m = match mr {
            Some(m) => m,
            None => roi_at_source(None, &moving, cfg.data.roi_threshold)?,
        };
        let (mask_f, mask_m) = if vessel {
            (
                load_mask_sized(record.fixed_mask.as_deref().expect("vessel"), fixed.size())?,
                load_mask_sized(
                    record.moving_mask.as_deref().expect("vessel"),
                    moving.size(),
                )?,
            )
        } else {
            (roi_f.clone(), roi_m.clone())
        };
        let pair = PairImages {
            fixed: &fixed,
            moving: &moving,
            masks: (&mask_f, &mask_m),
            rois: (&roi_f, &roi_m),
        };
        let b = metric_bundle(&h, &pair, cp.as_ref())?;
        control_error_px = b.mean_control_error_px;
        metrics = Some(b);
    }
    Ok(PairEvaluation {
        name: record.display_name(index),
        category: record.category.clone(),
        mask_source,
        result: out.result,
        metrics,
        control_error_px,
        keypoint_distance,
        error: None,
    })
}

fn failed_evaluation(record: &PairRecord, index: usize, err: &Error) -> PairEvaluation {
    let vessel = record.fixed_mask.is_some() && record.moving_mask.is_some();
    PairEvaluation {
        name: record.display_name(index),
        category: record.category.clone(),
        mask_source: if vessel {
            MaskSource::Vessel
        } else {
            MaskSource::Roi
        },
        result: RegistrationResult {
            success: false,
            homography: None,
            inlier_count: 0,
            matches_used: 0,
            keypoints_detected: (0, 0),
            failure: Some(err.to_string()),
        },
        metrics: None,
        control_error_px: record.control_points.as_ref().map(|_| f64::INFINITY),
        keypoint_distance: None,
        error: Some(err.to_string()),
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = inference_config(&a.model)?;
    let manifest = PairManifest::load(&a.pairs)?;
    if manifest.pairs.is_empty() {
        return Err(Error::Config(format!(
            "manifest {} lists no pairs",
            a.pairs.display()
        )));
    }
    let models = Models::load(&a.model)?;
    let source = models.source()?;
    let mut evals = Vec::with_capacity(manifest.pairs.len());
    for (i, rec) in manifest.pairs.iter().enumerate() {
        let ev = evaluate_record(rec, i, &models.descriptor, source, &cfg).unwrap_or_else(|e| {
            log::warn!("{}: {e}", rec.display_name(i));
            failed_evaluation(rec, i, &e)
        });
        evals.push(ev);
    }
    let report = aggregate(&evals, manifest.pairs.len(), cfg.evaluation.max_threshold)?;
    write_json(&a.out, &report)?;
    if let Some(dir) = &a.plot {
        create_dir(dir)?;
        if let Some(c) = &report.success_curve {
            plot::write_success_curve(dir.join("success_curve.svg"), c, source.name())?;
        }
        if let Some(s) = &report.keypoint_distance {
            plot::write_keypoint_distance(dir.join("keypoint_distance.svg"), s)?;
        }
    }
    println!(
        "registered {}/{} pairs; iou {:.4} dice {:.4} iom {:.4} ssim {:.4} sm {:.4} (normalized)",
        report.pairs_registered,
        report.pairs_total,
        report.normalized.iou,
        report.normalized.dice,
        report.normalized.iom,
        report.normalized.ssim,
        report.normalized.sm
    );
    if let Some(auc) = report.auc {
        println!("auc@{}: {auc:.4}", report.max_threshold);
    }
    println!("report: {}", a.out.display());
    Ok(())
}

fn write_pair(dir: &Path, rel: &str, stem: &str, p: &SyntheticPair) -> Result<PairRecord> {
    let sub = dir.join(rel);
    create_dir(&sub)?;
    let file = |suffix: &str| format!("{stem}_{suffix}");
    p.fixed.save_png(sub.join(file("fixed.png")))?;
    p.moving.save_png(sub.join(file("moving.png")))?;
    p.fixed_roi.save_png(sub.join(file("fixed_roi.png")))?;
    p.moving_roi.save_png(sub.join(file("moving_roi.png")))?;
    save_control_points(sub.join(file("cp.txt")), &p.control_points)?;
    let at = |suffix: &str| PathBuf::from(rel).join(file(suffix));
    Ok(PairRecord {
        name: Some(format!("{rel}/{stem}")),
        fixed: at("fixed.png"),
        moving: at("moving.png"),
        fixed_mask: None,
        moving_mask: None,
        fixed_roi: Some(at("fixed_roi.png")),
        moving_roi: Some(at("moving_roi.png")),
        control_points: Some(at("cp.txt")),
        category: Some(p.mode.to_string()),
        true_homography: Some(p.true_transform.to_homography().to_row_major()),
    })
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = config_or_default(a.config.as_deref())?;
    let modes: Vec<PairMode> = if a.mode == "all" {
        PairMode::ALL.to_vec()
    } else {
        vec![a.mode.parse()?]
    };
    if a.per_image == 0 {
        return Err(Error::Config("--per-image must be at least 1".into()));
    }
    let seed = a.seed.unwrap_or(cfg.seeds.augmentation);
    let mut sources: Vec<(String, Image, Mask)> = Vec::new();
    match &a.images {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Error::Config(format!(
                    "image directory not found: {}",
                    dir.display()
                )));
            }
            for path in list_images(dir)? {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("image")
                    .to_string();
                let img = Image::load(&path)?;
                match estimate_roi(&img, cfg.data.roi_threshold) {
                    Ok(r) => sources.push((name, img, r.mask)),
                    Err(e) => log::warn!("skipping {}: {e}", path.display()),
                }
            }
        }
        None => {
            if a.generate == 0 || a.generate_size < 16 {
                return Err(Error::Config(
                    "--generate needs at least 1 image of side >= 16".into(),
                ));
            }
            let params = VesselParams::with_size(a.generate_size, a.generate_size);
            let (img_dir, mask_dir) = (a.out.join("sources"), a.out.join("sources_roi"));
            create_dir(&img_dir)?;
            create_dir(&mask_dir)?;
            for i in 0..a.generate {
                let f =
                    generate_fundus(&params, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
                let name = format!("fundus_{i:03}");
                // saved copies double as a training set
                f.image.save_png(img_dir.join(format!("{name}.png")))?;
                f.field.save_png(mask_dir.join(format!("{name}.png")))?;
                sources.push((name, f.image, f.field));
            }
        }
    }
    if sources.is_empty() {
        return Err(Error::InvalidInput("no usable source images".into()));
    }
    create_dir(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifests: Vec<PairManifest> = modes.iter().map(|_| PairManifest::default()).collect();
    for (name, img, roi) in &sources {
        for j in 0..a.per_image {
            let stem = format!("{name}_{j:02}");
            let pairs: Vec<SyntheticPair> = if modes.len() == 3 {
                make_synthetic_triplet(&mut rng, img, roi, &cfg.evaluation.synthetic)?.into()
            } else {
                vec![make_synthetic_pair(
                    &mut rng,
                    img,
                    roi,
                    modes[0],
                    &cfg.evaluation.synthetic,
                )?]
            };
            for (k, p) in pairs.iter().enumerate() {
                manifests[k]
                    .pairs
                    .push(write_pair(&a.out, p.mode.as_str(), &stem, p)?);
            }
        }
    }
    for (mode, m) in modes.iter().zip(&manifests) {
        let path = a.out.join(format!("manifest_{mode}.jsonl"));
        m.save(&path)?;
        println!("{} pairs: {}", m.pairs.len(), path.display());
    }
    Ok(())
}

pub fn cmd_heatmap(a: &HeatmapArgs) -> Result<()> {
    let cfg = inference_config(&a.model)?;
    require_file(&a.image, "image")?;
    let models = Models::load(&a.model)?;
    let s = cfg.inference.inference_size;
    let small = Image::load(&a.image)?.resize(s, s);
    let roi = estimate_roi(&small, cfg.inference.roi_threshold).unwrap_or_else(|e| {
        log::warn!("RoI estimate failed ({e}); using the full frame");
        RoiMask::full(s, s)
    });
    let (map, stem): (Heatmap, String) = match a.kind.as_str() {
        "predicted" => match models.detectors.as_slice() {
            [d] => (
                predict_heatmap(d, &small, &roi)?,
                format!("predicted_{}", d.target),
            ),
            _ => {
                return Err(Error::Config(
                    "--kind predicted needs exactly one --detector".into(),
                ))
            }
        },
        "combined" => match models.source()? {
            KeypointSource::Combined { ap, ss } => (
                combine_maps(
                    &predict_heatmap(ap, &small, &roi)?,
                    &predict_heatmap(ss, &small, &roi)?,
                )?,
                "combined".into(),
            ),
            _ => {
                return Err(Error::Config(
                    "--kind combined needs an AP and an SS --detector".into(),
                ))
            }
        },
        "ap" | "ss" => {
            let target = parse_target(&a.kind)?;
            let mut aug = ChaCha8Rng::seed_from_u64(cfg.seeds.augmentation);
            let mut samp = ChaCha8Rng::seed_from_u64(cfg.seeds.sampling);
            let spec = cfg.augmentation.batch_spec(cfg.detector.points);
            let batch = build_view_batch(&mut aug, &mut samp, &small, &roi, &spec)?;
            (
                make_target(&models.descriptor, &batch, target, &cfg.fastap)?,
                format!("target_{target}"),
            )
        }
        "d2" => (
            d2_scores(&describe(&models.descriptor, &small)?, Some(&roi.mask))?,
            "d2".into(),
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown heatmap kind `{other}` (expected predicted, combined, ap, ss or d2)"
            )))
        }
    };
    create_dir(&a.out)?;
    map.export(&a.out, &stem)?;
    let kp = nms_select(&map, cfg.inference.keypoints, cfg.inference.nms_window)?;
    kp.write_csv(a.out.join(format!("{stem}_keypoints.csv")))?;
    println!(
        "{stem}: {} valid pixels, mean {:.4}, {} keypoints -> {}",
        map.validity.count(),
        map.mean_valid().unwrap_or(f64::NAN),
        kp.len(),
        a.out.display()
    );
    Ok(())
}

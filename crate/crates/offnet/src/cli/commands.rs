//! Subcommand implementations.

use std::path::Path;

use super::{log_debug, log_info, CliError, Result, RunConfig};
use crate::dataset::{self, scan_dataset, FrameRecord, Split, SplitManifest};
use crate::eval::{evaluate_samples, format_report, to_csv};
use crate::geometry::{
    densify_depth, estimate_normals, project_points, Calibration, PointCloud, NORMAL_WINDOW,
};
use crate::model::{ModelConfig, OffNet, CLASS_TRAVERSABLE};
use crate::raster;
use crate::train::{fit, prepare_samples, train_epoch, TrainConfig};

fn require_root(cfg: &RunConfig) -> Result<&Path> {
    let root = cfg
        .dataset_root
        .as_deref()
        .ok_or_else(|| CliError::Usage("--root is required for this command".into()))?;
    if !root.is_dir() {
        return Err(CliError::Usage(format!(
            "--root {} is not a directory",
            root.display()
        )));
    }
    Ok(root)
}

fn require_checkpoint(cfg: &RunConfig) -> Result<&Path> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Usage("--checkpoint is required for this command".into()))?;
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "--checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn load_model_config(cfg: &RunConfig) -> Result<ModelConfig> {
    match &cfg.model_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("--model-config {}: {e}", path.display())))?;
            Ok(ModelConfig::parse(&text)?)
        }
        None => Ok(ModelConfig::toy(64, 64)),
    }
}

fn load_train_config(cfg: &RunConfig, default_epochs: usize) -> Result<TrainConfig> {
    let mut train_cfg = match &cfg.train_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("--train-config {}: {e}", path.display())))?;
            TrainConfig::parse(&text)?
        }
        None => TrainConfig::new(default_epochs, cfg.output_dir.join("checkpoints")),
    };
    // The CLI owns the output layout; checkpoints go under --out.
    train_cfg.checkpoint_dir = cfg.output_dir.join("checkpoints");
    if let Some(seed) = cfg.seed {
        train_cfg.seed = seed;
    }
    Ok(train_cfg)
}

fn scan(cfg: &RunConfig, root: &Path) -> Result<SplitManifest> {
    let (manifest, report) = scan_dataset(root, cfg.split_file.as_deref())?;
    if !report.skipped.is_empty() {
        log_info(&format!(
            "skipped {} incomplete frame(s)",
            report.skipped.len()
        ));
        for (seq, frame, missing) in &report.skipped {
            log_debug(&format!("skipped {seq}/{frame}: missing {missing}"));
        }
    }
    Ok(manifest)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessOutcome {
    frame: String,
    result: std::result::Result<(), String>,
}

fn preprocess_frame(record: &FrameRecord, split: Split, out: &Path) -> Result<()> {
    let (w, h, _) = raster::load_rgb8(&record.image_path)?;
    let calib_text = std::fs::read_to_string(&record.calib_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", record.calib_path.display())))?;
    let calib = Calibration::parse(&calib_text)?;
    let cloud = PointCloud::read_bin(&record.cloud_path)?;

    let sparse = project_points(&cloud, &calib, w, h);
    let dense = densify_depth(&sparse)?;
    let normals = estimate_normals(&dense, &calib, NORMAL_WINDOW)?;

    let base = out.join(split.dir_name()).join(&record.sequence_id);
    for sub in ["sparse_depth", "dense_depth", "surface_normal"] {
        ensure_dir(&base.join(sub))?;
    }
    let name = format!("{}.png", record.frame_id);
    raster::save_depth_png16(&base.join("sparse_depth").join(&name), &sparse)?;
    raster::save_depth_png16(&base.join("dense_depth").join(&name), &dense)?;
    raster::save_normal_png8(&base.join("surface_normal").join(&name), &normals)?;
    Ok(())
}

/// Project every frame's cloud into sparse depth, complete it, estimate
/// normals, and write the three rasters per frame, mirroring the dataset
/// tree under the output directory.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let root = require_root(cfg)?;
    let manifest = scan(cfg, root)?;
    let work: Vec<(Split, FrameRecord)> = Split::ALL
        .iter()
        .flat_map(|&s| manifest.split(s).iter().map(move |r| (s, r.clone())))
        .collect();

    let out = cfg.output_dir.clone();
    let jobs = cfg.jobs.min(work.len().max(1));
    let outcomes: Vec<PreprocessOutcome> = if jobs <= 1 {
        work.iter()
            .map(|(split, record)| PreprocessOutcome {
                frame: format!("{}/{}", record.sequence_id, record.frame_id),
                result: preprocess_frame(record, *split, &out).map_err(|e| match e {
                    CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
                }),
            })
            .collect()
    } else {
        let mut slots: Vec<Option<PreprocessOutcome>> = Vec::new();
        slots.resize_with(work.len(), || None);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (worker, chunk) in slots.chunks_mut(work.len().div_ceil(jobs)).enumerate() {
                let start = worker * work.len().div_ceil(jobs);
                let work = &work;
                let out = &out;
                handles.push(scope.spawn(move || {
                    for (offset, slot) in chunk.iter_mut().enumerate() {
                        let (split, record) = &work[start + offset];
                        *slot = Some(PreprocessOutcome {
                            frame: format!("{}/{}", record.sequence_id, record.frame_id),
                            result: preprocess_frame(record, *split, out).map_err(|e| match e {
                                CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
                            }),
                        });
                    }
                }));
            }
            for handle in handles {
                handle.join().expect("preprocess worker panicked");
            }
        });
        slots.into_iter().flatten().collect()
    };

    let failures: Vec<&PreprocessOutcome> = outcomes.iter().filter(|o| o.result.is_err()).collect();
    println!(
        "preprocessed {} frame(s), {} failed, wrote {} raster(s) under {}",
        outcomes.len() - failures.len(),
        failures.len(),
        3 * (outcomes.len() - failures.len()),
        cfg.output_dir.display()
    );
    for f in &failures {
        super::log_error(&format!(
            "frame {}: {}",
            f.frame,
            f.result.as_ref().unwrap_err()
        ));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} frame(s) failed preprocessing",
            failures.len()
        )))
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let root = require_root(cfg)?;
    let model_cfg = load_model_config(cfg)?;
    let train_cfg = load_train_config(cfg, 50)?;
    let manifest = scan(cfg, root)?;

    log_info(&format!(
        "loading {} train / {} val frame(s) at {}x{}",
        manifest.train.len(),
        manifest.val.len(),
        model_cfg.input_w,
        model_cfg.input_h
    ));
    let train_samples = prepare_samples(&manifest.train, model_cfg.input_w, model_cfg.input_h)?;
    let val_samples = prepare_samples(&manifest.val, model_cfg.input_w, model_cfg.input_h)?;

    let model = OffNet::new(model_cfg, train_cfg.seed)?;
    log_info(&format!(
        "model has {} parameters; training {} epoch(s)",
        model.count_parameters(),
        train_cfg.epochs
    ));
    let outcome = fit(&model, &train_samples, &val_samples, &train_cfg)?;
    println!(
        "best epoch {} val_fscore {:.6}; checkpoints: {} / {}",
        outcome.best_epoch,
        outcome.best_val_fscore,
        outcome.best_path.display(),
        outcome.last_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval / infer
// ---------------------------------------------------------------------------

fn load_model_with_checkpoint(cfg: &RunConfig) -> Result<OffNet> {
    let checkpoint = require_checkpoint(cfg)?;
    let model_cfg = load_model_config(cfg)?;
    let model = OffNet::new(model_cfg, cfg.seed.unwrap_or(0))?;
    model.load(checkpoint)?;
    Ok(model)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let root = require_root(cfg)?;
    let model = load_model_with_checkpoint(cfg)?;
    let manifest = scan(cfg, root)?;
    let records = manifest.split(cfg.split);
    let samples = prepare_samples(records, model.config().input_w, model.config().input_h)?;
    let evaluation = evaluate_samples(&model, &samples, cfg.threshold)?;

    ensure_dir(&cfg.output_dir)?;
    let report = format_report(&evaluation);
    let report_path = cfg
        .output_dir
        .join(format!("report_{}.txt", cfg.split.short_name()));
    let csv_path = cfg
        .output_dir
        .join(format!("frames_{}.csv", cfg.split.short_name()));
    std::fs::write(&report_path, &report)
        .map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())))?;
    std::fs::write(&csv_path, to_csv(&evaluation))
        .map_err(|e| CliError::Data(format!("{}: {e}", csv_path.display())))?;
    print!("{report}");
    println!("report: {}", report_path.display());
    println!("per-frame csv: {}", csv_path.display());
    Ok(())
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let root = require_root(cfg)?;
    let model = load_model_with_checkpoint(cfg)?;
    let manifest = scan(cfg, root)?;
    let records = manifest.split(cfg.split);
    let samples = prepare_samples(records, model.config().input_w, model.config().input_h)?;

    let mut written = 0usize;
    for sample in &samples {
        let probs = model.forward(&sample.image, &sample.normals)?;
        let pixels = sample.gt.width * sample.gt.height;
        let traversable =
            &probs.data()[CLASS_TRAVERSABLE * pixels..(CLASS_TRAVERSABLE + 1) * pixels];
        let encoded = dataset::encode_prediction(traversable, cfg.threshold);
        let dir = cfg
            .output_dir
            .join(cfg.split.dir_name())
            .join(&sample.sequence_id);
        ensure_dir(&dir)?;
        raster::save_gray8(
            &dir.join(format!("{}.png", sample.frame_id)),
            sample.gt.width,
            sample.gt.height,
            &encoded,
        )?;
        written += 1;
    }
    println!(
        "wrote {written} prediction(s) under {}",
        cfg.output_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// visualize
// ---------------------------------------------------------------------------

const LEGEND_HEIGHT: usize = 16;
const OVERLAY_GREEN: [u8; 3] = [0, 255, 0];

/// Alpha-blend traversable pixels in green over the image and append a
/// legend strip (green swatch on the left half).
pub fn render_overlay(width: usize, height: usize, rgb: &[u8], mask: &[bool]) -> Vec<u8> {
    let mut out = Vec::with_capacity((height + LEGEND_HEIGHT) * width * 3);
    for i in 0..width * height {
        let px = &rgb[i * 3..i * 3 + 3];
        if mask[i] {
            for c in 0..3 {
                let blended = 0.5 * px[c] as f32 + 0.5 * OVERLAY_GREEN[c] as f32;
                out.push(blended.round() as u8);
            }
        } else {
            out.extend_from_slice(px);
        }
    }
    for _row in 0..LEGEND_HEIGHT {
        for x in 0..width {
            if x < width / 2 {
                out.extend_from_slice(&OVERLAY_GREEN);
            } else {
                out.extend_from_slice(&[60, 60, 60]);
            }
        }
    }
    out
}

pub fn cmd_visualize(cfg: &RunConfig) -> Result<()> {
    let [image_path, pred_path] = cfg.positionals.as_slice() else {
        return Err(CliError::Usage(
            "visualize needs two positionals: <image.png> <prediction.png>".into(),
        ));
    };
    let (w, h, rgb) = raster::load_rgb8(Path::new(image_path))?;
    let (pw, ph, pred) = raster::load_gray8_strict(Path::new(pred_path))?;
    if (w, h) != (pw, ph) {
        return Err(CliError::Data(format!(
            "extent mismatch: image {w}x{h} vs prediction {pw}x{ph}"
        )));
    }
    let mask: Vec<bool> = pred.iter().map(|&v| v == 255).collect();
    let out = render_overlay(w, h, &rgb, &mask);

    let out_path = if cfg.output_dir.extension().is_some() {
        cfg.output_dir.clone()
    } else {
        ensure_dir(&cfg.output_dir)?;
        cfg.output_dir.join("overlay.png")
    };
    raster::save_rgb8(&out_path, w, h + LEGEND_HEIGHT, &out)?;
    println!("wrote {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRow {
    encoder_stages: usize,
    fusion: bool,
    parameters: usize,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f_score: f64,
    iou: f64,
}

/// Train and evaluate the encoder-depth {1..4} x fusion {on, off} matrix on
/// a small fixture dataset, emitting one table row per configuration.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let root = require_root(cfg)?;
    let base_cfg = load_model_config(cfg)?;
    let mut train_cfg = load_train_config(cfg, 60)?;
    train_cfg.batch_size = train_cfg.batch_size.min(4);
    let manifest = scan(cfg, root)?;

    log_info(&format!(
        "ablation over {} train / {} test frame(s), {} epochs per cell",
        manifest.train.len(),
        manifest.test.len(),
        train_cfg.epochs
    ));
    let train_samples = prepare_samples(&manifest.train, base_cfg.input_w, base_cfg.input_h)?;
    let eval_records = if manifest.test.is_empty() {
        &manifest.train
    } else {
        &manifest.test
    };
    let eval_samples = prepare_samples(eval_records, base_cfg.input_w, base_cfg.input_h)?;

    let mut rows = Vec::with_capacity(8);
    for encoder_stages in 1..=4usize {
        for fusion in [true, false] {
            let mut model_cfg = base_cfg.clone();
            model_cfg.encoder_stages = encoder_stages;
            model_cfg.fusion_enabled = fusion;
            let model = OffNet::new(model_cfg, train_cfg.seed)?;
            for epoch in 1..=train_cfg.epochs {
                train_epoch(&model, &train_samples, &train_cfg, epoch)?;
            }
            let evaluation = evaluate_samples(&model, &eval_samples, cfg.threshold)?;
            let m = evaluation.pooled;
            log_info(&format!(
                "stages {encoder_stages} fusion {} -> f_score {:.4}",
                if fusion { "on" } else { "off" },
                m.f_score
            ));
            rows.push(AblationRow {
                encoder_stages,
                fusion,
                parameters: model.count_parameters(),
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f_score: m.f_score,
                iou: m.iou,
            });
        }
    }

    let mut table = format!(
        "{:>7} {:>9} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "encoder", "fusion", "params", "acc", "pre", "recall", "f_score", "iou"
    );
    let mut csv = String::from("encoder,fusion,params,accuracy,precision,recall,f_score,iou\n");
    for r in &rows {
        table.push_str(&format!(
            "{:>7} {:>9} {:>10} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            r.encoder_stages,
            if r.fusion { "on" } else { "off" },
            r.parameters,
            r.accuracy,
            r.precision,
            r.recall,
            r.f_score,
            r.iou
        ));
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.encoder_stages,
            if r.fusion { "on" } else { "off" },
            r.parameters,
            r.accuracy,
            r.precision,
            r.recall,
            r.f_score,
            r.iou
        ));
    }
    ensure_dir(&cfg.output_dir)?;
    let table_path = cfg.output_dir.join("ablation.txt");
    let csv_path = cfg.output_dir.join("ablation.csv");
    std::fs::write(&table_path, &table)
        .map_err(|e| CliError::Data(format!("{}: {e}", table_path.display())))?;
    std::fs::write(&csv_path, &csv)
        .map_err(|e| CliError::Data(format!("{}: {e}", csv_path.display())))?;
    print!("{table}");
    println!("table: {}", table_path.display());
    Ok(())
}

//! The seven subcommand drivers. Each takes parsed flags plus the loaded
//! run config, does its file work, and leaves exit-code classification to
//! the typed errors in `fail`.

use anyhow::{Context, Result};
use phinet_core::arch::{Model, NetworkSpec, PhiNetSpec, ResNetMinusSpec};
use phinet_core::phantom::{generate_phantom, mix_seed, ContrastClass};
use phinet_core::baseline::classify_by_template;
use phinet_core::stats::{format_percent, mcnemar_test, ConfusionMatrix};
use phinet_core::tensor::Tensor;
use phinet_core::train::{fit, restore, CheckpointData, TaskKind, TrainConfig};
use phinet_core::volume::{
    preprocess_pipeline, DatasetManifest, ManifestItem, PreprocessConfig, Volume,
};
use rayon::prelude::*;
use serde_json::json;
use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{
    load_dataset, load_manifest, load_templates, read_prediction_lines, resolve_item,
    save_manifest, write_prediction_lines, PredictionLine,
};
use crate::fail;
use crate::nifti::{read_nifti, write_nifti};
use crate::report::EvalReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PhantomTask {
    /// Three contrast classes: T1, T2, FLAIR.
    Contrast,
    /// Two classes, PRE and POST: matched FLAIR pairs where POST adds
    /// enhancing blobs to the same geometry.
    Enhancement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum NetworkChoice {
    Phinet,
    ResnetMinus,
}

/// Generates a seeded dataset of phantom volumes plus its manifest.
pub fn cmd_phantom(
    out_dir: &Path,
    task: PhantomTask,
    counts: &[usize],
    config: &RunConfig,
    seed_flag: Option<u64>,
) -> Result<()> {
    let seed = config.require_seed(seed_flag)?;
    let spec = config.phantom_spec();
    let classes: Vec<String> = match task {
        PhantomTask::Contrast => ContrastClass::ALL
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        PhantomTask::Enhancement => vec!["PRE".into(), "POST".into()],
    };
    let counts = broadcast_counts(counts, classes.len())?;

    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut items = Vec::new();
    for (k, class_name) in classes.iter().enumerate() {
        for i in 0..counts[k] {
            let (phantom, subject) = match task {
                PhantomTask::Contrast => {
                    let class = ContrastClass::ALL[k];
                    (
                        generate_phantom(class, false, &spec, mix_seed(seed, k as u64, i as u64)),
                        None,
                    )
                }
                // stream 0 for both classes: item i of PRE and POST share
                // geometry, differing only by the enhancement
                PhantomTask::Enhancement => (
                    generate_phantom(
                        ContrastClass::Flair,
                        k == 1,
                        &spec,
                        mix_seed(seed, 0, i as u64),
                    ),
                    Some(format!("s{i:03}")),
                ),
            };
            let phantom = phantom.map_err(fail::from_core)?;
            let file = format!("{}_{i:03}.nii", class_name.to_lowercase());
            write_nifti(&phantom.volume, &out_dir.join(&file))?;
            items.push(ManifestItem { path: file, label: k, subject });
        }
    }

    let manifest = DatasetManifest { classes: classes.clone(), items };
    manifest.validate().map_err(fail::from_core)?;
    let manifest_path = out_dir.join("manifest.json");
    save_manifest(&manifest, &manifest_path)?;
    for (k, name) in classes.iter().enumerate() {
        println!("{name}: {}", counts[k]);
    }
    println!("{}", manifest_path.display());
    Ok(())
}

fn broadcast_counts(counts: &[usize], k: usize) -> Result<Vec<usize>> {
    let counts = match counts.len() {
        0 => vec![20; k],
        1 => vec![counts[0]; k],
        n if n == k => counts.to_vec(),
        n => {
            return Err(fail::usage(format!(
                "--count needs 1 or {k} values, got {n}"
            )))
        }
    };
    if counts.contains(&0) {
        return Err(fail::usage("per-class counts must be positive"));
    }
    Ok(counts)
}

/// Runs the preprocessing chain on one volume and writes the resulting
/// fixed-extent cube.
pub fn cmd_preprocess(input: &Path, out: &Path, config: &RunConfig) -> Result<()> {
    let pp = config.preprocess();
    let volume = read_nifti(input)?;
    let cube = preprocess_pipeline(&volume, &pp)
        .map_err(fail::from_core)
        .with_context(|| format!("preprocessing {}", input.display()))?;
    let vol = cube_to_volume(&cube, &pp)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_nifti(&vol, out)?;
    println!(
        "{} -> {} ({e}x{e}x{e} at {s} mm)",
        input.display(),
        out.display(),
        e = pp.extent,
        s = pp.target_spacing
    );
    Ok(())
}

fn cube_to_volume(cube: &Tensor<f32>, pp: &PreprocessConfig) -> Result<Volume> {
    let e = pp.extent;
    Volume::new(
        [e, e, e],
        [pp.target_spacing; 3],
        cube.data().to_vec(),
    )
    .map_err(fail::from_core)
}

/// Trains a network on a manifest, writing the best checkpoint, a
/// resume checkpoint after every epoch, and the history CSV.
#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    manifest_path: &Path,
    out: &Path,
    history: Option<&Path>,
    resume: Option<&Path>,
    network: Option<NetworkChoice>,
    config: &RunConfig,
    seed_flag: Option<u64>,
) -> Result<()> {
    let seed = config.require_seed(seed_flag)?;
    let (manifest, base) = load_manifest(manifest_path)?;
    let k = manifest.classes.len();
    let pp = config.preprocess();

    let spec = match (&config.model, network) {
        (Some(_), Some(_)) => {
            return Err(fail::usage(
                "model specified twice: drop --network or the config's model section",
            ))
        }
        (Some(spec), None) => spec.clone(),
        (None, Some(NetworkChoice::ResnetMinus)) => {
            NetworkSpec::ResnetMinus(ResNetMinusSpec::desk_default(k))
        }
        (None, _) => NetworkSpec::Phinet(PhiNetSpec::desk_default(k)),
    };
    if spec.classes() != k {
        return Err(fail::usage(format!(
            "model has {} classes, manifest has {k}",
            spec.classes()
        )));
    }
    if spec.input_extent() != pp.extent {
        return Err(fail::usage(format!(
            "model expects {}-cubed input, preprocessing produces {}-cubed",
            spec.input_extent(),
            pp.extent
        )));
    }

    let mut cfg = config.train.clone().unwrap_or_else(|| TrainConfig {
        task: if k == 2 { TaskKind::Binary } else { TaskKind::Multiclass },
        ..TrainConfig::default()
    });
    cfg.seed = seed;

    let resume_data = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.meta.network != spec {
                return Err(fail::data(format!(
                    "{}: checkpoint architecture differs from the requested model",
                    path.display()
                )));
            }
            if ckpt.meta.classes != manifest.classes {
                return Err(fail::data(format!(
                    "{}: checkpoint classes {:?} vs manifest {:?}",
                    path.display(),
                    ckpt.meta.classes,
                    manifest.classes
                )));
            }
            if ckpt.meta.seed != seed {
                return Err(fail::usage(format!(
                    "resume seed {} does not match requested seed {seed}",
                    ckpt.meta.seed
                )));
            }
            Some(ckpt)
        }
        None => None,
    };

    eprintln!(
        "loading {} volumes from {}",
        manifest.items.len(),
        manifest_path.display()
    );
    let data = load_dataset(&manifest, &base, &pp)?;
    let mut model: Model<f32> = spec.build(seed).map_err(fail::from_core)?;

    let out = config.resolve_out(out);
    let history_path = match history {
        Some(h) => h.to_path_buf(),
        None => out.with_extension("csv"),
    };
    let last_path = out.with_extension("last.ckpt");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }

    // fresh runs start a new CSV; resumed runs append to their own
    let mut csv = open_history(&history_path, resume_data.is_some())?;

    let start = Instant::now();
    let mut clock = move || start.elapsed().as_secs_f64();
    let mut io_error: Option<anyhow::Error> = None;
    let result = {
        let io_error = &mut io_error;
        let csv = &mut csv;
        let out = out.clone();
        let last_path = last_path.clone();
        let mut observer = move |record: &phinet_core::train::EpochRecord,
                                 ckpt: &CheckpointData,
                                 improved: bool|
              -> std::result::Result<(), phinet_core::CoreError> {
            let mut step = || -> Result<()> {
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    record.epoch,
                    record.train_loss,
                    record.val_loss,
                    record.val_acc,
                    record.lr,
                    record.seconds
                )
                .context("writing history")?;
                save_checkpoint(ckpt, &last_path)?;
                if improved {
                    save_checkpoint(ckpt, &out)?;
                }
                eprintln!(
                    "epoch {:3}  train {:.4}  val {:.4}  acc {}  lr {}",
                    record.epoch,
                    record.train_loss,
                    record.val_loss,
                    format_percent(record.val_acc),
                    record.lr
                );
                Ok(())
            };
            step().map_err(|e| {
                *io_error = Some(e);
                phinet_core::CoreError::InvalidData("history or checkpoint write failed".into())
            })
        };
        fit(
            &mut model,
            &data,
            &cfg,
            Some(pp.clone()),
            resume_data.as_ref(),
            &mut clock,
            &mut observer,
        )
    };
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            return Err(match io_error {
                Some(io) => io,
                None => fail::from_core(e),
            })
        }
    };
    csv.flush().context("flushing history")?;

    let meta = &result.best.meta;
    println!(
        "best validation accuracy {} (epoch {})",
        format_percent(meta.best_val_acc),
        meta.best_epoch
    );
    if result.stopped_early {
        let last = result.history.last().map_or(meta.epoch, |r| r.epoch);
        eprintln!("stopped early at epoch {last}");
    }
    Ok(())
}

fn open_history(path: &Path, resuming: bool) -> Result<fs::File> {
    use std::fs::OpenOptions;
    if resuming && path.exists() {
        return OpenOptions::new()
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()));
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "epoch,train_loss,val_loss,val_acc,lr,seconds").context("writing history header")?;
    Ok(f)
}

/// Rebuilds the model a checkpoint was trained with and loads its weights.
fn model_from_checkpoint(ckpt: &CheckpointData) -> Result<(Model<f32>, PreprocessConfig)> {
    let mut model: Model<f32> = ckpt.meta.network.build(ckpt.meta.seed).map_err(fail::from_core)?;
    restore(&mut model, ckpt).map_err(fail::from_core)?;
    Ok((model, ckpt.meta.preprocess.clone().unwrap_or_default()))
}

fn predict_one(
    model: &Model<f32>,
    pp: &PreprocessConfig,
    path: &Path,
) -> Result<(usize, Vec<f64>)> {
    let volume = read_nifti(path)?;
    let cube = preprocess_pipeline(&volume, pp)
        .map_err(fail::from_core)
        .with_context(|| format!("preprocessing {}", path.display()))?;
    let (classes, probs) = model.predict(&cube).map_err(fail::from_core)?;
    Ok((classes[0], probs.data().iter().map(|&p| p as f64).collect()))
}

/// Classifies loose volumes, one JSON line per input, in input order.
/// Unreadable files are reported and skipped; any failure turns into a
/// nonzero exit after the batch finishes.
pub fn cmd_classify(checkpoint: &Path, inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(fail::usage("classify needs at least one input volume"));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let (model, pp) = model_from_checkpoint(&ckpt)?;
    let classes = &ckpt.meta.classes;

    let results: Vec<Result<PredictionLine>> = inputs
        .par_iter()
        .map(|path| {
            let (idx, probabilities) = predict_one(&model, &pp, path)?;
            Ok(PredictionLine {
                path: path.display().to_string(),
                class: classes[idx].clone(),
                probabilities,
            })
        })
        .collect();

    let mut failures = 0usize;
    for (path, result) in inputs.iter().zip(results) {
        match result {
            Ok(line) => println!("{}", serde_json::to_string(&line).context("encoding line")?),
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e:#}", path.display());
            }
        }
    }
    if failures > 0 {
        return Err(fail::data(format!(
            "{failures} of {} inputs failed",
            inputs.len()
        )));
    }
    Ok(())
}

/// Evaluates a checkpoint over a labeled manifest and prints the report.
pub fn cmd_evaluate(
    checkpoint: &Path,
    manifest_path: &Path,
    json_out: Option<&Path>,
    predictions_out: Option<&Path>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let (model, pp) = model_from_checkpoint(&ckpt)?;
    let (manifest, base) = load_manifest(manifest_path)?;
    if ckpt.meta.classes != manifest.classes {
        return Err(fail::data(format!(
            "checkpoint classes {:?} vs manifest {:?}",
            ckpt.meta.classes, manifest.classes
        )));
    }

    let outputs: Vec<(usize, Vec<f64>)> = manifest
        .items
        .par_iter()
        .map(|item| predict_one(&model, &pp, &resolve_item(&base, &item.path)))
        .collect::<Result<_>>()?;

    finish_report(&manifest, &outputs, json_out, predictions_out)
}

/// Correlation-template classification over a labeled manifest, reported
/// with the same schema as evaluate (scores in place of probabilities).
pub fn cmd_baseline(
    templates_path: &Path,
    manifest_path: &Path,
    json_out: Option<&Path>,
    predictions_out: Option<&Path>,
    config: &RunConfig,
) -> Result<()> {
    let pp = config.preprocess();
    let templates = load_templates(templates_path, &pp)?;
    let (manifest, base) = load_manifest(manifest_path)?;
    if templates.classes() != manifest.classes.as_slice() {
        return Err(fail::data(format!(
            "template classes {:?} vs manifest {:?}",
            templates.classes(),
            manifest.classes
        )));
    }

    let outputs: Vec<(usize, Vec<f64>)> = manifest
        .items
        .par_iter()
        .map(|item| {
            let path = resolve_item(&base, &item.path);
            let volume = read_nifti(&path)?;
            let cube = preprocess_pipeline(&volume, &pp)
                .map_err(fail::from_core)
                .with_context(|| format!("preprocessing {}", path.display()))?;
            let vol = cube_to_volume(&cube, &pp)?;
            let decision = classify_by_template(&vol, &templates).map_err(fail::from_core)?;
            Ok((decision.class, decision.correlations))
        })
        .collect::<Result<_>>()?;

    finish_report(&manifest, &outputs, json_out, predictions_out)
}

fn finish_report(
    manifest: &DatasetManifest,
    outputs: &[(usize, Vec<f64>)],
    json_out: Option<&Path>,
    predictions_out: Option<&Path>,
) -> Result<()> {
    let predictions: Vec<usize> = outputs.iter().map(|(c, _)| *c).collect();
    let labels = manifest.labels();
    let matrix = ConfusionMatrix::new(&predictions, &labels, manifest.classes.len())
        .map_err(fail::from_core)?;
    let report = EvalReport::from_confusion(&matrix, &manifest.classes);
    print!("{}", report.render_table());
    if let Some(path) = json_out {
        report.save_json(path)?;
    }
    if let Some(path) = predictions_out {
        let lines: Vec<PredictionLine> = manifest
            .items
            .iter()
            .zip(outputs)
            .map(|(item, (c, scores))| PredictionLine {
                path: item.path.clone(),
                class: manifest.classes[*c].clone(),
                probabilities: scores.clone(),
            })
            .collect();
        write_prediction_lines(&lines, path)?;
    }
    Ok(())
}

/// Paired comparison of two prediction files over one manifest.
pub fn cmd_mcnemar(a_path: &Path, b_path: &Path, manifest_path: &Path) -> Result<()> {
    let (manifest, _) = load_manifest(manifest_path)?;
    let a_lines = read_prediction_lines(a_path)?;
    let b_lines = read_prediction_lines(b_path)?;
    let a = index_predictions(&a_lines, a_path)?;
    let b = index_predictions(&b_lines, b_path)?;

    let mut correct_a = Vec::with_capacity(manifest.items.len());
    let mut correct_b = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let truth = &manifest.classes[item.label];
        let pa = a.get(item.path.as_str()).ok_or_else(|| {
            fail::data(format!("{}: no prediction for {}", a_path.display(), item.path))
        })?;
        let pb = b.get(item.path.as_str()).ok_or_else(|| {
            fail::data(format!("{}: no prediction for {}", b_path.display(), item.path))
        })?;
        correct_a.push(pa == truth);
        correct_b.push(pb == truth);
    }

    let r = mcnemar_test(&correct_a, &correct_b).map_err(fail::from_core)?;
    let doc = json!({
        "b": r.b,
        "c": r.c,
        "statistic": r.statistic,
        "chi2_p": r.chi2_p,
        "exact_p": r.exact_p,
    });
    println!("{}", serde_json::to_string_pretty(&doc).context("encoding result")?);
    Ok(())
}

fn index_predictions<'a>(
    lines: &'a [PredictionLine],
    path: &Path,
) -> Result<HashMap<&'a str, &'a str>> {
    let mut map = HashMap::with_capacity(lines.len());
    for line in lines {
        if map.insert(line.path.as_str(), line.class.as_str()).is_some() {
            return Err(fail::data(format!(
                "{}: duplicate prediction for {}",
                path.display(),
                line.path
            )));
        }
    }
    Ok(map)
}

//! Manifest IO and parallel dataset loading. Relative paths inside a
//! manifest resolve against the manifest file's directory, so datasets are
//! relocatable as a unit.

use anyhow::{Context, Result};
use phinet_core::baseline::TemplateSet;
use phinet_core::tensor::Tensor;
use phinet_core::train::Dataset;
use phinet_core::volume::{preprocess_pipeline, DatasetManifest, PreprocessConfig, Volume};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::fail;
use crate::nifti::read_nifti;

pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail::data(format!("manifest {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| fail::data(format!("manifest {}: {e}", path.display())))?;
    manifest.validate().map_err(fail::from_core)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((manifest, base))
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).context("encoding manifest")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn resolve_item(base: &Path, item_path: &str) -> PathBuf {
    let p = Path::new(item_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads and preprocesses every manifest item in parallel, in manifest
/// order. Any single failure aborts the load.
pub fn load_dataset(
    manifest: &DatasetManifest,
    base: &Path,
    preprocess: &PreprocessConfig,
) -> Result<Dataset> {
    let inputs: Vec<Tensor<f32>> = manifest
        .items
        .par_iter()
        .map(|item| {
            let path = resolve_item(base, &item.path);
            let volume = read_nifti(&path)?;
            preprocess_pipeline(&volume, preprocess)
                .map_err(fail::from_core)
                .with_context(|| format!("preprocessing {}", path.display()))
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        inputs,
        labels: manifest.labels(),
        classes: manifest.classes.clone(),
    })
}

/// Template manifest: class names parallel to template volume paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateManifest {
    pub classes: Vec<String>,
    pub templates: Vec<String>,
}

/// Loads a template manifest and runs each template through the same
/// preprocessing as the test volumes. The pipeline is a fixed point on
/// conforming data, so already-preprocessed templates pass unchanged.
pub fn load_templates(path: &Path, pp: &PreprocessConfig) -> Result<TemplateSet> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail::data(format!("template manifest {}: {e}", path.display())))?;
    let tm: TemplateManifest = serde_json::from_str(&text)
        .map_err(|e| fail::data(format!("template manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let volumes: Vec<Volume> = tm
        .templates
        .iter()
        .map(|t| {
            let p = resolve_item(&base, t);
            let cube = preprocess_pipeline(&read_nifti(&p)?, pp)
                .map_err(fail::from_core)
                .with_context(|| format!("preprocessing {}", p.display()))?;
            Volume::new(
                [pp.extent; 3],
                [pp.target_spacing; 3],
                cube.data().to_vec(),
            )
            .map_err(fail::from_core)
        })
        .collect::<Result<_>>()?;
    TemplateSet::new(tm.classes, volumes).map_err(fail::from_core)
}

/// One classify/evaluate output line; probabilities follow the model's
/// class order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub path: String,
    pub class: String,
    pub probabilities: Vec<f64>,
}

pub fn write_prediction_lines(lines: &[PredictionLine], path: &Path) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line).context("encoding prediction")?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_prediction_lines(path: &Path) -> Result<Vec<PredictionLine>> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail::data(format!("predictions {}: {e}", path.display())))?;
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: PredictionLine = serde_json::from_str(raw).map_err(|e| {
            fail::data(format!("predictions {} line {}: {e}", path.display(), i + 1))
        })?;
        lines.push(line);
    }
    Ok(lines)
}
